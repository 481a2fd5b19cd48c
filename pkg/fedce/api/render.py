"""
Fixed-width text tables for the terminal and report.txt.

Pearson correlations are stored raw and rendered x100 next to their p-value;
shares are rendered as percentages.
"""
from typing import Any, List, Optional, Sequence

from fedce.models.reports import (
    AlignmentMetrics,
    FairnessReport,
    FreeRiderResult,
    ShiftCheckResult,
    ValuationResult,
)


def _cell(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(value)


def format_table(header: Sequence[str], rows: Sequence[Sequence[Any]], title: Optional[str] = None) -> str:
    cells = [[_cell(v) for v in row] for row in rows]
    widths = [len(h) for h in header]
    for row in cells:
        for j, cell in enumerate(row):
            widths[j] = max(widths[j], len(cell))
    lines = []
    if title:
        lines.append(title)
    lines.append("  ".join(h.ljust(w) if j == 0 else h.rjust(w) for j, (h, w) in enumerate(zip(header, widths))))
    lines.append("  ".join("-" * w for w in widths))
    for row in cells:
        lines.append("  ".join(c.ljust(w) if j == 0 else c.rjust(w) for j, (c, w) in enumerate(zip(row, widths))))
    return "\n".join(lines) + "\n"


def _pearson_cell(r: Optional[float], p_value: Optional[float]) -> str:
    if r is None or p_value is None:
        return "-"
    return f"{100.0 * r:.2f} ({p_value:.1e})"


def render_client_summary(p: Sequence[float], rho: Sequence[float], scores: Sequence[float], title: str) -> str:
    rows = [[f"Client {i + 1}", 100.0 * p[i], 100.0 * rho[i], 100.0 * scores[i]] for i in range(len(p))]
    return format_table(["Client", "Sample %", "Weight %", "Test score"], rows, title)


def render_fairness_table(reports: Sequence[FairnessReport], seeds: Sequence[int], title: str) -> str:
    rows = [
        [
            r.method,
            seed,
            100.0 * r.mean,
            100.0 * r.std,
            _pearson_cell(r.pearson_r, r.p_value),
            r.euclidean_distance,
        ]
        for r, seed in zip(reports, seeds)
    ]
    return format_table(["Method", "Seed", "Avg.", "Std.", "Pearson Correlation", "Euclidean Distance"], rows, title)


def render_alignment_table(alignments: Sequence[AlignmentMetrics], title: str) -> str:
    rows = [
        [a.method, _pearson_cell(a.pearson_r, a.p_value), a.euclidean_distance, a.cosine_similarity]
        for a in alignments
    ]
    return format_table(["Method", "Pearson Correlation", "Euclidean Distance", "Cosine Similarity"], rows, title)


def render_contribution_table(valuation: ValuationResult, title: str) -> str:
    n = len(valuation.sample_share)
    header = [""] + [f"Client {i + 1}" for i in range(n)]
    rows: List[List[Any]] = []
    if valuation.loo_share is not None:
        rows.append(["Performance Contribution"] + [f"{100.0 * s:.2f}%" for s in valuation.loo_share])
    if valuation.shapley is not None:
        rows.append(["Shapley Value"] + [f"{v:.4f}" for v in valuation.shapley])
    rows.append(["Sample Contribution"] + [f"{100.0 * s:.2f}%" for s in valuation.sample_share])
    return format_table(header, rows, title)


def render_freerider_table(result: FreeRiderResult, snapshot_rounds: Sequence[int], title: str) -> str:
    rows = []
    for position, per_round, detected in zip(result.positions, result.scores, result.detected_round):
        for k in snapshot_rounds:
            if k >= len(per_round):
                continue
            rows.append([f"Client {position + 1}", k] + [f"{s:.4f}" for s in per_round[k]] + [detected])
    n = len(result.scores[0][0]) if result.scores and result.scores[0] else 0
    header = ["Free rider", "Round"] + [f"Client {i + 1}" for i in range(n)] + ["Detected"]
    return format_table(header, rows, title)


def render_shift_table(result: ShiftCheckResult, title: str) -> str:
    rows = [
        [
            f"Client {client + 1}",
            100.0 * result.estimate_full_renormalized[j],
            100.0 * result.estimate_reduced[j],
            f"{result.percent_change[j]:+.2f}",
        ]
        for j, client in enumerate(result.surviving_clients)
    ]
    table = format_table(["Client", "With outlier %", "Without outlier %", "Delta"], rows, title)
    return table + f"W1 (pooled) = {result.wasserstein:.4f}, W1 (removed vs rest) = {result.outlier_wasserstein:.4f}\n"


def render_ablation_table(rows: Sequence[Sequence[Any]], title: str) -> str:
    body = [[algorithm, seed, 100.0 * score, 100.0 * std] for algorithm, seed, score, std in rows]
    return format_table(["Algorithm", "Seed", "Avg.", "Std."], body, title)
