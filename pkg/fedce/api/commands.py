"""
Subcommand handlers. Each takes a validated ExperimentConfig, writes its
artifacts under config.output_dir and returns the process exit code.

Multi-seed runs write per-seed artifacts into seed-<s>/ subfolders; tables
that carry a seed column are written once at the output root.
"""
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import structlog

from fedce.api import render
from fedce.core.concurrency import ordered_map
from fedce.exceptions.errors import FederationSpecError
from fedce.models.experiment import Algorithm, ExperimentConfig
from fedce.models.federation import ClientDataset, FreeRiderSpec
from fedce.models.reports import AlignmentMetrics, FairnessReport, FreeRiderResult, ValuationResult
from fedce.repositories.artifact_repository import FileArtifactRepository
from fedce.repositories.federation_repository import FileFederationRepository
from fedce.services import metrics
from fedce.services.contribution import first_detection_round
from fedce.services.fl_engine import client_test_scores, run_experiment
from fedce.services.oracles import FederatedUtility, estimate_vs_oracle, leave_one_out, shapley_valuation
from fedce.services.synthdata import generate_federation
from fedce.services.theory_checks import convergence_compare, rho_bound_trace, shift_robustness_check

logger = structlog.get_logger(__name__)

REPORT_ALGORITHMS = [Algorithm.STANDALONE, Algorithm.FEDAVG, Algorithm.FEDCE_MULTI, Algorithm.FEDCE_SUM]
ABLATION_ALGORITHMS = [
    Algorithm.FEDAVG,
    Algorithm.FEDCE_MULTI,
    Algorithm.FEDCE_SUM,
    Algorithm.FEDCE_COS,
    Algorithm.FEDCE_ERR,
]


def _settings():
    from fedce.core.config import settings

    return settings


def _threads(threads: Optional[int]) -> int:
    return threads if threads is not None else _settings().THREADS


def load_clients(config: ExperimentConfig) -> List[ClientDataset]:
    """Clients from config.federation_file when set, else generated from config.federation."""
    if config.federation_file is None:
        return generate_federation(config.federation)
    clients = FileFederationRepository(config.federation_file).load()
    if len(clients) != config.federation.n_clients:
        raise FederationSpecError(
            f"{config.federation_file} holds {len(clients)} clients, config declares {config.federation.n_clients}"
        )
    return clients


def _repositories(config: ExperimentConfig):
    root = FileArtifactRepository(config.output_dir)
    multi = len(config.seeds) > 1
    return root, [(seed, root.scoped(seed) if multi else root) for seed in config.seeds]


def _export_path(export: Path, seed: int, multi: bool) -> Path:
    if not multi:
        return export
    return export.with_name(f"{export.stem}.seed-{seed}{export.suffix}")


def _emit(text: str) -> None:
    print(text, end="")


def cmd_run(config: ExperimentConfig, threads: Optional[int] = None, export_federation: Optional[Path] = None) -> int:
    """Train the configured algorithm once per seed."""
    threads = _threads(threads)
    root, seeded = _repositories(config)
    root.save_config(config)
    for seed, repo in seeded:
        run_config = config.for_seed(seed)
        clients = load_clients(run_config)
        if export_federation is not None:
            target = _export_path(Path(export_federation), seed, len(seeded) > 1)
            FileFederationRepository(target).save(clients, run_config.federation.task.value)
            logger.info("federation_exported", path=str(target), seed=seed)

        result = run_experiment(run_config, clients, threads=threads)
        scores = client_test_scores(run_config.model, result, clients)
        p = [c.p for c in clients]

        repo.save_round_logs(result.round_logs)
        repo.save_contributions(result.ledger, config.algorithm.value)
        repo.save_client_summary(p, result.final_rho.tolist(), scores.tolist())
        if result.final_w is not None:
            repo.save_checkpoint(f"seed-{seed}", result.final_w)
        else:
            for i, w in enumerate(result.client_models):
                repo.save_checkpoint(f"seed-{seed}-client-{i}", w)

        _emit(
            render.render_client_summary(
                p, result.final_rho.tolist(), scores.tolist(), f"{config.algorithm.value} seed={seed}"
            )
        )
        logger.info("run_finished", seed=seed, algorithm=config.algorithm.value, mean_test_score=float(scores.mean()))
    return 0


def _alignments(
    config: ExperimentConfig,
    clients: Sequence[ClientDataset],
    oracle: ValuationResult,
    threads: int,
) -> List[AlignmentMetrics]:
    algorithms = list(config.valuation.compare_algorithms)
    results = ordered_map(
        lambda a: run_experiment(config.with_algorithm(a), clients, threads=1), algorithms, threads
    )
    rows = [estimate_vs_oracle(r.final_rho, oracle, a.value) for a, r in zip(algorithms, results)]
    rows.append(estimate_vs_oracle([c.p for c in clients], oracle, Algorithm.FEDAVG.value))
    return rows


def _valuation_command(config: ExperimentConfig, threads: Optional[int], kind: str) -> int:
    threads = _threads(threads)
    settings = _settings()
    root, seeded = _repositories(config)
    root.save_config(config)
    for seed, repo in seeded:
        run_config = config.for_seed(seed)
        clients = load_clients(run_config)
        utility = FederatedUtility(run_config, clients, cache_size=settings.UTILITY_CACHE_SIZE, threads=1)
        if kind == "shapley":
            oracle = shapley_valuation(
                run_config, clients, utility, max_clients=settings.SHAPLEY_MAX_CLIENTS, threads=threads
            )
        else:
            oracle = leave_one_out(run_config, clients, utility, threads=threads)
        alignments = _alignments(run_config, clients, oracle, threads)

        repo.save_valuation(oracle)
        repo.save_alignment(alignments)
        _emit(render.render_contribution_table(oracle, f"{kind} valuation seed={seed}"))
        _emit(render.render_alignment_table(alignments, f"estimate vs {kind} seed={seed}"))
        logger.info(f"{kind}_finished", seed=seed, n_clients=len(clients))
    return 0


def cmd_shapley(config: ExperimentConfig, threads: Optional[int] = None) -> int:
    """Exact Shapley valuation and the alignment of the estimators with it."""
    return _valuation_command(config, threads, "shapley")


def cmd_loo(config: ExperimentConfig, threads: Optional[int] = None) -> int:
    """Leave-one-out valuation and the alignment of the estimators with it."""
    return _valuation_command(config, threads, "loo")


def cmd_freerider(config: ExperimentConfig, threads: Optional[int] = None) -> int:
    """One federation per free-rider position; records every client's per-round score."""
    threads = _threads(threads)
    section = config.freerider
    root, seeded = _repositories(config)
    root.save_config(config)
    positions = section.positions if section.positions is not None else list(range(config.federation.n_clients))
    for position in positions:
        if not 0 <= position < config.federation.n_clients:
            raise FederationSpecError(f"free-rider position {position} is not a client index")

    for seed, repo in seeded:
        run_config = config.for_seed(seed)

        def _federation(position: int):
            spec = FreeRiderSpec(client=position, repeat=section.repeat)
            federation = run_config.federation.model_copy(update={"free_rider": spec})
            clients = generate_federation(federation)
            return run_experiment(run_config.with_federation(federation), clients, threads=1)

        results = ordered_map(_federation, positions, threads)
        scores = [[[row.free_rider_score for row in log.rows] for log in r.round_logs] for r in results]
        cosines = [[[row.local_global_cosine for row in log.rows] for log in r.round_logs] for r in results]
        detected = [first_detection_round(s, position) for s, position in zip(scores, positions)]
        outcome = FreeRiderResult(positions=positions, scores=scores, cosines=cosines, detected_round=detected)

        repo.save_freerider(outcome, section.snapshot_rounds)
        _emit(render.render_freerider_table(outcome, section.snapshot_rounds, f"free-rider scores seed={seed}"))
        for position, k in zip(positions, detected):
            if k is None or k > section.detect_by_round:
                logger.warning("free_rider_undetected", seed=seed, free_rider=position, detected_round=k)
        logger.info("freerider_finished", seed=seed, detected_round=detected)
    return 0


def cmd_theory(config: ExperimentConfig, threads: Optional[int] = None) -> int:
    """Shift-robustness check and weight trace per seed, then convergence curves over all seeds."""
    threads = _threads(threads)
    root, seeded = _repositories(config)
    root.save_config(config)
    federations = {}
    for seed, repo in seeded:
        run_config = config.for_seed(seed)
        clients = load_clients(run_config)
        federations[seed] = clients

        shift = shift_robustness_check(run_config, clients, threads=threads)
        repo.save_shift_check(shift)
        _emit(render.render_shift_table(shift, f"shift check seed={seed} removed=Client {shift.removed_client + 1}"))

        result = run_experiment(run_config, clients, threads=threads)
        trace = rho_bound_trace(result.ledger, run_config)
        repo.save_rho_trace(trace)

    curves_per_seed = [
        convergence_compare(config.for_seed(seed), [seed], clients=federations[seed], threads=threads)
        for seed in config.seeds
    ]
    merged = curves_per_seed[0]
    for curves in curves_per_seed[1:]:
        for algorithm, per_seed in curves.curves.items():
            merged.curves[algorithm].update(per_seed)
    root.save_convergence(merged)
    logger.info("theory_finished", seeds=list(config.seeds))
    return 0


def cmd_report(config: ExperimentConfig, threads: Optional[int] = None) -> int:
    """Fairness table: standalone, FedAvg and both FedCE combinations on the same federation."""
    threads = _threads(threads)
    root, _ = _repositories(config)
    root.save_config(config)
    reports: List[FairnessReport] = []
    report_seeds: List[int] = []
    for seed in config.seeds:
        run_config = config.for_seed(seed)
        clients = load_clients(run_config)
        results = ordered_map(
            lambda a: run_experiment(run_config.with_algorithm(a), clients, threads=1), REPORT_ALGORITHMS, threads
        )
        scores = [client_test_scores(run_config.model, r, clients) for r in results]
        standalone = scores[0]
        for algorithm, method_scores in zip(REPORT_ALGORITHMS, scores):
            reports.append(metrics.build_fairness_report(method_scores, standalone, algorithm.value))
            report_seeds.append(seed)

    text = render.render_fairness_table(reports, report_seeds, "fairness comparison (r x100, p-value)")
    root.save_report(reports, report_seeds, text)
    _emit(text)
    return 0


def cmd_ablation(config: ExperimentConfig, threads: Optional[int] = None) -> int:
    """FedAvg and every FedCE combination mode on the same federation and seeds."""
    threads = _threads(threads)
    root, _ = _repositories(config)
    root.save_config(config)
    rows = []
    for seed in config.seeds:
        run_config = config.for_seed(seed)
        clients = load_clients(run_config)
        results = ordered_map(
            lambda a: run_experiment(run_config.with_algorithm(a), clients, threads=1), ABLATION_ALGORITHMS, threads
        )
        for algorithm, result in zip(ABLATION_ALGORITHMS, results):
            scores = client_test_scores(run_config.model, result, clients)
            rows.append([algorithm.value, seed, float(np.mean(scores)), metrics.client_std(scores)])

    root.save_ablation(rows)
    _emit(render.render_ablation_table(rows, "combination ablation"))
    return 0


COMMANDS = {
    "run": cmd_run,
    "shapley": cmd_shapley,
    "loo": cmd_loo,
    "freerider": cmd_freerider,
    "theory": cmd_theory,
    "report": cmd_report,
    "ablation": cmd_ablation,
}
