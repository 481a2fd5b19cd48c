import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence, Union

import numpy as np
import structlog

from fedce.core.config import dump_experiment_config
from fedce.models.experiment import ExperimentConfig
from fedce.models.ledger import ROUND_COLUMNS, ContributionLedger, RoundLog
from fedce.models.predictor import ParamVector
from fedce.models.reports import (
    AlignmentMetrics,
    ConvergenceCurves,
    FairnessReport,
    FreeRiderResult,
    RhoBoundTrace,
    ShiftCheckResult,
    ValuationResult,
)
from fedce.repositories.base import ArtifactRepository
from fedce.repositories.checkpoint_repository import CheckpointRepository

logger = structlog.get_logger(__name__)

REPORT_COLUMNS = [
    "method",
    "seed",
    "mean",
    "std",
    "pearson_r",
    "p_value",
    "euclidean_distance",
    "cosine_similarity",
]
ALIGNMENT_COLUMNS = ["method", "pearson_r", "p_value", "euclidean_distance", "cosine_similarity"]
ABLATION_COLUMNS = ["algorithm", "seed", "mean_test_score", "client_std"]


class FileArtifactRepository(ArtifactRepository):
    """Artifacts of one experiment, written under `output_dir`.

    Floats are written with a fixed number of significant digits so identical
    runs produce identical bytes.
    """

    def __init__(self, output_dir: Union[str, Path], significant_digits: Optional[int] = None):
        if significant_digits is None:
            from fedce.core.config import settings

            significant_digits = settings.CSV_SIGNIFICANT_DIGITS
        self.output_dir = Path(output_dir)
        self.significant_digits = significant_digits
        self._float_format = f"%.{significant_digits}g"

    def scoped(self, seed: int) -> "FileArtifactRepository":
        """Repository for one seed of a multi-seed run (seed-<s>/ subfolder)."""
        return FileArtifactRepository(self.output_dir / f"seed-{seed}", self.significant_digits)

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def _target(self, name: str) -> Path:
        target = self.path(name)
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    def format_value(self, value: Any) -> str:
        if isinstance(value, (bool, np.bool_)):
            return "true" if value else "false"
        if isinstance(value, (int, np.integer)):
            return str(int(value))
        if isinstance(value, (float, np.floating)):
            return self._float_format % float(value)
        if value is None:
            return ""
        return str(value)

    def _jsonable(self, value: Any) -> Any:
        if isinstance(value, dict):
            return {str(k): self._jsonable(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [self._jsonable(v) for v in value]
        if isinstance(value, np.ndarray):
            return [self._jsonable(v) for v in value.tolist()]
        if isinstance(value, (bool, np.bool_)):
            return bool(value)
        if isinstance(value, (int, np.integer)):
            return int(value)
        if isinstance(value, (float, np.floating)):
            value = float(value)
            if not math.isfinite(value):
                return None
            return float(self._float_format % value)
        if isinstance(value, Path):
            return value.as_posix()
        return value

    def write_table(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        target = self._target(name)
        with open(target, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([self.format_value(v) for v in row])
        logger.debug("artifact_written", path=str(target))
        return target

    def write_document(self, name: str, data: Any) -> Path:
        target = self._target(name)
        text = json.dumps(self._jsonable(data), sort_keys=True, indent=2, ensure_ascii=False)
        with open(target, "w", encoding="utf-8", newline="\n") as f:
            f.write(text + "\n")
        logger.debug("artifact_written", path=str(target))
        return target

    def write_text(self, name: str, text: str) -> Path:
        target = self._target(name)
        with open(target, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        return target

    def write_bytes(self, name: str, payload: bytes) -> Path:
        target = self._target(name)
        target.write_bytes(payload)
        return target

    def read_table(self, name: str) -> List[dict]:
        with open(self.path(name), "r", encoding="utf-8", newline="") as f:
            return list(csv.DictReader(f))

    # Domain artifacts

    def save_round_logs(self, round_logs: Sequence[RoundLog]) -> Path:
        rows = (
            [getattr(row, column) for column in ROUND_COLUMNS]
            for log in round_logs
            for row in log.rows
        )
        return self.write_table("rounds.csv", ROUND_COLUMNS, rows)

    def save_contributions(self, ledger: ContributionLedger, algorithm: str) -> Path:
        rounds = [
            {
                "round": record.round,
                "bootstrap": record.bootstrap,
                "degenerate": record.degenerate,
                "gamma_cos": record.gamma_cos,
                "gamma_err": record.gamma_err,
                "gamma_m": record.gamma_m,
                "gamma_s": record.gamma_s,
                "rho": record.rho,
            }
            for record in ledger.rounds
        ]
        rho_final = ledger.rho_final if len(ledger) else np.full(ledger.n_clients, np.nan)
        clients = {
            str(i): {
                "rho_final": rho_final[i],
                "cumulative_gamma_cos": ledger.cumulative_gamma_cos[i],
                "cumulative_gamma_err": ledger.cumulative_gamma_err[i],
                "cumulative_combined": ledger.cumulative_combined[i],
                "degenerate_round_count": ledger.degenerate_round_count[i],
            }
            for i in range(ledger.n_clients)
        }
        document = {
            "algorithm": algorithm,
            "mode": ledger.mode,
            "n_clients": ledger.n_clients,
            "clients": clients,
            "rounds": rounds,
        }
        return self.write_document("contributions.json", document)

    def save_client_summary(self, p: Sequence[float], rho: Sequence[float], test_scores: Sequence[float]) -> Path:
        rows = ([i, p[i], rho[i], test_scores[i]] for i in range(len(p)))
        return self.write_table("clients.csv", ["client_id", "sample_share", "rho_final", "test_score"], rows)

    def save_report(self, reports: Sequence[FairnessReport], seeds: Sequence[int], text: str) -> Path:
        rows = (
            [r.method, seed, r.mean, r.std, r.pearson_r, r.p_value, r.euclidean_distance, r.cosine_similarity]
            for r, seed in zip(reports, seeds)
        )
        self.write_text("report.txt", text)
        return self.write_table("report.csv", REPORT_COLUMNS, rows)

    def save_valuation(self, valuation: ValuationResult) -> Path:
        document = {
            "clients": valuation.per_client(),
            "full_performance": valuation.full_performance,
            "empty_performance": valuation.empty_performance,
        }
        return self.write_document("valuation.json", document)

    def save_alignment(self, alignments: Sequence[AlignmentMetrics]) -> Path:
        rows = (
            [a.method, a.pearson_r, a.p_value, a.euclidean_distance, a.cosine_similarity] for a in alignments
        )
        return self.write_table("alignment.csv", ALIGNMENT_COLUMNS, rows)

    def save_freerider(self, result: FreeRiderResult, snapshot_rounds: Sequence[int]) -> List[Path]:
        scores = (
            [position, k, i, score]
            for position, per_round in zip(result.positions, result.scores)
            for k, per_client in enumerate(per_round)
            for i, score in enumerate(per_client)
        )
        cosines = (
            [k, position, i, cosine]
            for position, per_round in zip(result.positions, result.cosines)
            for k, per_client in enumerate(per_round)
            for i, cosine in enumerate(per_client)
        )
        n_clients = len(result.scores[0][0]) if result.scores and result.scores[0] else 0
        matrix_header = ["free_rider", "round"] + [f"client_{i}" for i in range(n_clients)] + ["detected_round"]
        matrix = (
            [position, k] + list(per_round[k]) + [detected]
            for position, per_round, detected in zip(result.positions, result.scores, result.detected_round)
            for k in snapshot_rounds
            if k < len(per_round)
        )
        return [
            self.write_table("freerider.csv", ["free_rider", "round", "client_id", "free_rider_score"], scores),
            self.write_table("freerider_matrix.csv", matrix_header, matrix),
            self.write_table("freerider_cosine.csv", ["round", "free_rider", "client_id", "cosine"], cosines),
        ]

    def save_shift_check(self, result: ShiftCheckResult) -> Path:
        return self.write_document("shift_check.json", result.model_dump())

    def save_convergence(self, curves: ConvergenceCurves) -> Path:
        rows = (
            [k, algorithm, seed, score]
            for algorithm, per_seed in curves.curves.items()
            for seed, curve in per_seed.items()
            for k, score in enumerate(curve)
        )
        return self.write_table("convergence.csv", ["round", "algorithm", "seed", "mean_val_score"], rows)

    def save_rho_trace(self, trace: RhoBoundTrace) -> Path:
        columns = ["round", "client_id", "rho", "local_steps", "client_lr", "bound_proxy"]
        rows = ([getattr(row, c) for c in columns] for row in trace.rows)
        return self.write_table("rho_trace.csv", columns, rows)

    def save_ablation(self, rows: Iterable[Sequence[Any]]) -> Path:
        return self.write_table("ablation.csv", ABLATION_COLUMNS, rows)

    def save_config(self, config: ExperimentConfig) -> Path:
        return self.write_text("config.resolved.yaml", dump_experiment_config(config))

    def save_checkpoint(self, name: str, w: ParamVector) -> Path:
        return CheckpointRepository(self.path("checkpoints")).save(name, w)
