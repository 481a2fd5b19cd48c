"""
Empirical checks of the estimator's stability and convergence behaviour:
1-D Wasserstein distances, contribution shift under client removal, a weight
monitoring trace and convergence-curve comparison across algorithms.
"""
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.stats import wasserstein_distance

from fedce.core.concurrency import ordered_map
from fedce.exceptions.errors import DimensionMismatchError, EmptyDatasetError, SimulationError
from fedce.models.experiment import Algorithm, ExperimentConfig
from fedce.models.federation import ClientDataset
from fedce.models.ledger import ContributionLedger
from fedce.models.reports import ConvergenceCurves, RhoBoundTrace, RhoTraceRow, ShiftCheckResult
from fedce.services.fl_engine import SIMPLEX_TOL, run_experiment
from fedce.services.synthdata import (
    client_projection,
    generate_federation,
    pooled_projection,
    subset_federation,
)

logger = structlog.get_logger(__name__)


def wasserstein_1d(a: Sequence[float], b: Sequence[float]) -> float:
    """
    W1 between two equal-size 1-D empirical distributions: mean |sorted(a) - sorted(b)|.

    Raises:
        EmptyDatasetError: either sample is empty
        DimensionMismatchError: sample sizes differ
    """
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    if x.size == 0 or y.size == 0:
        raise EmptyDatasetError("wasserstein_1d needs nonempty samples")
    if x.size != y.size:
        raise DimensionMismatchError(f"wasserstein_1d needs equal sizes, got {x.size} and {y.size}")
    return float(np.mean(np.abs(np.sort(x) - np.sort(y))))


def wasserstein_pooled(a: Sequence[float], b: Sequence[float]) -> float:
    """W1 between 1-D empirical distributions of any sizes."""
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    if x.size == 0 or y.size == 0:
        raise EmptyDatasetError("wasserstein distance needs nonempty samples")
    return float(wasserstein_distance(x, y))


def pairwise_client_distances(clients: Sequence[ClientDataset]) -> np.ndarray:
    """W1 between every pair of client feature projections (sizes may differ)."""
    projections = [client_projection(c) for c in clients]
    n = len(projections)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if projections[i].size == projections[j].size:
                d = wasserstein_1d(projections[i], projections[j])
            else:
                d = wasserstein_pooled(projections[i], projections[j])
            out[i, j] = out[j, i] = d
    return out


def _fedce_config(config: ExperimentConfig) -> ExperimentConfig:
    if config.algorithm.combine_mode is None:
        return config.with_algorithm(Algorithm.FEDCE_MULTI)
    return config


def shift_robustness_check(
    config: ExperimentConfig,
    clients: Optional[Sequence[ClientDataset]] = None,
    removable_client: Optional[int] = None,
    threads: Optional[int] = None,
) -> ShiftCheckResult:
    """
    Compare contribution estimates with and without one client.

    The N-client estimates are restricted to the survivors and renormalized,
    then compared with the estimates of a run on the N-1 survivors.
    """
    config = _fedce_config(config)
    if removable_client is None:
        removable_client = config.theory.removable_client
    if removable_client is None:
        removable_client = config.federation.outlier_client
    if removable_client is None:
        raise SimulationError("shift check needs theory.removable_client or federation.outlier_client")
    clients = list(clients) if clients is not None else generate_federation(config.federation)
    n = len(clients)
    if not 0 <= removable_client < n:
        raise SimulationError(f"removable client {removable_client} is not in a {n}-client federation")
    survivors = [i for i in range(n) if i != removable_client]
    reduced_clients = subset_federation(clients, survivors)

    seed = config.federation.seed
    full, reduced = ordered_map(
        lambda members: run_experiment(config, members, threads=1, init_seed=seed),
        [clients, reduced_clients],
        threads,
    )
    rho_full = np.asarray(full.final_rho)
    kept = rho_full[survivors]
    total = float(np.sum(kept))
    renormalized = kept / total if total > 0 else np.full(len(survivors), 1.0 / len(survivors))
    rho_reduced = np.asarray(reduced.final_rho)
    delta = rho_reduced - renormalized

    result = ShiftCheckResult(
        removed_client=removable_client,
        surviving_clients=survivors,
        estimate_full=rho_full.tolist(),
        estimate_full_renormalized=renormalized.tolist(),
        estimate_reduced=rho_reduced.tolist(),
        abs_change=np.abs(delta).tolist(),
        percent_change=(100.0 * delta).tolist(),
        max_abs_change=float(np.max(np.abs(delta))),
        wasserstein=wasserstein_pooled(pooled_projection(clients), pooled_projection(reduced_clients)),
        outlier_wasserstein=wasserstein_pooled(
            client_projection(clients[removable_client]), pooled_projection(reduced_clients)
        ),
    )
    logger.info(
        "shift_check_finished",
        removed_client=removable_client,
        max_abs_change=result.max_abs_change,
        wasserstein=result.wasserstein,
    )
    return result


def rho_bound_trace(ledger: ContributionLedger, config: ExperimentConfig) -> RhoBoundTrace:
    """
    Monitoring trace of the weights next to the local schedule.

    bound_proxy = rho * sqrt(local_steps * (round + 1)): the weight measured
    against a 1/sqrt(A) envelope with A approximated by the accumulated local
    steps. It is reported, never asserted.
    """
    rows: List[RhoTraceRow] = []
    simplex_ok = True
    finite_ok = True
    max_rho = 0.0
    for k, rho in enumerate(ledger.rho_history):
        rho = np.asarray(rho, dtype=np.float64)
        finite_ok = finite_ok and bool(np.all(np.isfinite(rho)))
        simplex_ok = simplex_ok and bool(np.all(rho >= 0)) and abs(float(np.sum(rho)) - 1.0) <= SIMPLEX_TOL
        scale = np.sqrt(config.local_steps * (k + 1))
        for i, value in enumerate(rho):
            max_rho = max(max_rho, float(value))
            rows.append(
                RhoTraceRow(
                    round=k,
                    client_id=i,
                    rho=float(value),
                    local_steps=config.local_steps,
                    client_lr=config.client_lr,
                    bound_proxy=float(value * scale),
                )
            )
    if not simplex_ok or not finite_ok:
        logger.warning("rho_trace_violation", simplex_ok=simplex_ok, finite_ok=finite_ok)
    return RhoBoundTrace(rows=rows, max_rho=max_rho, simplex_ok=simplex_ok, finite_ok=finite_ok)


def convergence_compare(
    config: ExperimentConfig,
    seeds: Optional[Sequence[int]] = None,
    algorithms: Optional[Sequence[Algorithm]] = None,
    clients: Optional[Sequence[ClientDataset]] = None,
    threads: Optional[int] = None,
) -> ConvergenceCurves:
    """
    Per-round mean validation score of each algorithm on the same federation and seed.

    When `clients` is given it is used for every seed; otherwise each seed
    generates its own federation.
    """
    seeds = list(seeds if seeds is not None else config.seeds)
    algorithms = list(algorithms if algorithms is not None else config.theory.convergence_algorithms)
    federations = {
        seed: list(clients) if clients is not None else generate_federation(config.for_seed(seed).federation)
        for seed in seeds
    }
    jobs: List[Tuple[Algorithm, int]] = [(a, s) for a in algorithms for s in seeds]

    def _curve(job: Tuple[Algorithm, int]) -> List[float]:
        algorithm, seed = job
        run_config = config.for_seed(seed).with_algorithm(algorithm)
        result = run_experiment(run_config, federations[seed], threads=1, init_seed=seed)
        return [log.mean_val_score for log in result.round_logs]

    curves = ordered_map(_curve, jobs, threads)
    table: Dict[str, Dict[int, List[float]]] = {a.value: {} for a in algorithms}
    for (algorithm, seed), curve in zip(jobs, curves):
        table[algorithm.value][seed] = curve
    return ConvergenceCurves(curves=table)


def rounds_to_reach(curves: ConvergenceCurves, algorithm: str, reference: str, seed: int) -> Optional[int]:
    """First round where `algorithm` reaches the final score of `reference` (None if never)."""
    target = curves.curves[reference][seed][-1]
    return curves.first_round_reaching(algorithm, seed, target)
