"""
Ground-truth client valuation by retraining: exact Shapley enumeration and
leave-one-out. Coalition utilities retrain the federation on the subset (FedAvg
by default, keeping the oracle independent of the estimator it grades) and score
the final model on every client's test set.
"""
import itertools
import math
import threading
from typing import Callable, Dict, FrozenSet, Iterable, Optional, Sequence

import numpy as np
import structlog
from cachetools import LRUCache

from fedce.core.concurrency import ordered_map
from fedce.exceptions.errors import (
    DimensionMismatchError,
    FedCEError,
    ShapleyCostError,
    SimulationError,
    SubExperimentError,
)
from fedce.models.experiment import Algorithm, ExperimentConfig
from fedce.models.federation import ClientDataset
from fedce.models.reports import AlignmentMetrics, ValuationResult
from fedce.services import metrics, predictors
from fedce.services.fl_engine import run_experiment
from fedce.services.synthdata import subset_federation

logger = structlog.get_logger(__name__)

MAX_EXACT_CLIENTS = 8

UtilityFn = Callable[[Iterable[int]], float]


class FederatedUtility:
    """
    U(S): retrain on clients S, return mean test score over all N clients.

    U(empty) is the score of the untrained initial model. Values are memoized
    per coalition; the object is safe to call from several threads.
    """

    def __init__(
        self,
        config: ExperimentConfig,
        clients: Sequence[ClientDataset],
        algorithm: Optional[Algorithm] = None,
        cache_size: int = 512,
        threads: Optional[int] = 1,
    ):
        self.config = config.with_algorithm(algorithm or config.valuation.utility_algorithm)
        self.clients = list(clients)
        self.n_clients = len(self.clients)
        self.threads = threads
        self.seed = config.federation.seed
        self._cache: LRUCache = LRUCache(maxsize=cache_size)
        self._lock = threading.Lock()

    def _score(self, w) -> float:
        model = self.config.model
        errors = [predictors.evaluate_error(model, w, c.test) for c in self.clients]
        return float(1.0 - np.mean(errors))

    def _evaluate(self, subset: FrozenSet[int]) -> float:
        if not subset:
            return self._score(predictors.init_params(self.config.model, self.seed))
        members = subset_federation(self.clients, sorted(subset))
        try:
            result = run_experiment(self.config, members, threads=self.threads, init_seed=self.seed)
        except FedCEError as e:
            raise SubExperimentError(sorted(subset), e) from e
        return self._score(result.final_w)

    def __call__(self, subset: Iterable[int]) -> float:
        key = frozenset(int(i) for i in subset)
        if any(i < 0 or i >= self.n_clients for i in key):
            raise SimulationError(f"coalition {sorted(key)} names unknown clients")
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        value = self._evaluate(key)
        with self._lock:
            self._cache[key] = value
        logger.debug("coalition_utility", subset=sorted(key), utility=value)
        return value


def exact_shapley(
    utility: UtilityFn,
    n_clients: int,
    max_clients: int = MAX_EXACT_CLIENTS,
    threads: Optional[int] = 1,
) -> np.ndarray:
    """
    Exact Shapley values by enumerating all 2^N coalitions.

    nu_i = sum_{S subset N without i} |S|!(N-1-|S|)!/N! * (U(S + i) - U(S))

    Raises:
        ShapleyCostError: N exceeds max_clients (cost grows as 2^N retrainings)
    """
    if n_clients > max_clients:
        raise ShapleyCostError(
            f"exact Shapley over {n_clients} clients needs {2 ** n_clients} utility evaluations; "
            f"the limit is {max_clients} clients"
        )
    if n_clients < 1:
        raise SimulationError("exact Shapley needs at least one client")

    coalitions = [
        frozenset(c) for size in range(n_clients + 1) for c in itertools.combinations(range(n_clients), size)
    ]
    values = ordered_map(lambda s: float(utility(s)), coalitions, threads)
    table: Dict[FrozenSet[int], float] = dict(zip(coalitions, values))

    fact = math.factorial
    coef = [fact(s) * fact(n_clients - 1 - s) / fact(n_clients) for s in range(n_clients)]
    nu = np.zeros(n_clients)
    for coalition, value in table.items():
        for i in range(n_clients):
            if i in coalition:
                continue
            nu[i] += coef[len(coalition)] * (table[coalition | {i}] - value)

    logger.info("exact_shapley_finished", n_clients=n_clients, evaluations=len(coalitions))
    return nu


def loo_shares(drops: Sequence[float]) -> np.ndarray:
    """max(drop, 0) normalized to sum 1; uniform when no removal hurts."""
    clipped = np.maximum(np.asarray(drops, dtype=np.float64), 0.0)
    total = float(np.sum(clipped))
    if total <= 0.0:
        logger.warning("degenerate_loo_shares", drops=[float(d) for d in drops])
        return np.full(clipped.size, 1.0 / clipped.size)
    return clipped / total


def leave_one_out(
    config: ExperimentConfig,
    clients: Sequence[ClientDataset],
    utility: Optional[FederatedUtility] = None,
    threads: Optional[int] = 1,
) -> ValuationResult:
    """
    N + 1 retrainings: all clients, then every N-1 subset.

    drop_i = Perf(all) - Perf(all without i); share_i = max(drop_i, 0) / sum_j max(drop_j, 0).

    Raises:
        SubExperimentError: a retraining failed; the failing subset is attached
    """
    n = len(clients)
    if n < 2:
        raise SimulationError("leave-one-out needs at least 2 clients")
    utility = utility or FederatedUtility(config, clients, threads=1)
    everyone = frozenset(range(n))
    subsets = [everyone] + [everyone - {i} for i in range(n)]
    values = ordered_map(utility, subsets, threads)
    full = values[0]
    drops = np.array([full - v for v in values[1:]])
    result = ValuationResult(
        loo_drop=drops.tolist(),
        loo_share=loo_shares(drops).tolist(),
        sample_share=[float(c.p) for c in clients],
        full_performance=full,
    )
    logger.info("leave_one_out_finished", n_clients=n, full_performance=full)
    return result


def shapley_valuation(
    config: ExperimentConfig,
    clients: Sequence[ClientDataset],
    utility: Optional[FederatedUtility] = None,
    max_clients: int = MAX_EXACT_CLIENTS,
    threads: Optional[int] = 1,
) -> ValuationResult:
    utility = utility or FederatedUtility(config, clients, threads=1)
    nu = exact_shapley(utility, len(clients), max_clients, threads)
    return ValuationResult(
        shapley=nu.tolist(),
        sample_share=[float(c.p) for c in clients],
        full_performance=utility(range(len(clients))),
        empty_performance=utility(()),
    )


def oracle_shares(oracle: ValuationResult) -> np.ndarray:
    """Contribution shares of an oracle: LOO shares, else clamped normalized Shapley values."""
    if oracle.loo_share is not None:
        return np.asarray(oracle.loo_share, dtype=np.float64)
    if oracle.shapley is not None:
        return loo_shares(oracle.shapley)
    raise SimulationError("valuation result holds neither LOO shares nor Shapley values")


def estimate_vs_oracle(
    rho_final: Sequence[float], oracle: ValuationResult, method: str = ""
) -> AlignmentMetrics:
    """Pearson r (+ p-value), Euclidean distance and cosine similarity between rho and oracle shares."""
    rho = np.asarray(rho_final, dtype=np.float64)
    shares = oracle_shares(oracle)
    if rho.shape != shares.shape:
        raise DimensionMismatchError(f"length mismatch: {rho.size} vs {shares.size}")
    r, p_value = metrics.pearson_or_none(rho, shares, method)
    return AlignmentMetrics(
        method=method,
        pearson_r=r,
        p_value=p_value,
        euclidean_distance=metrics.euclidean(rho, shares),
        cosine_similarity=metrics.cosine_sim(rho, shares),
    )
