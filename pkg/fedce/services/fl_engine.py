"""
Federated round loop: broadcast, local updates, pseudo-gradient bookkeeping,
client-exclusion constructions and weighted aggregation.

Pseudo-gradients are parameter deltas (post-update minus pre-update), so the
server step w + server_lr * sum(rho_i * delta_i) with server_lr = 1 equals the
weighted model average sum(rho_i * w_{k,i}).
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog

from fedce.core.concurrency import ordered_map
from fedce.exceptions.errors import (
    DimensionMismatchError,
    EmptyDatasetError,
    ExclusionError,
    NonFiniteError,
    SimulationError,
    WeightSimplexError,
)
from fedce.models.experiment import Algorithm, ExperimentConfig
from fedce.models.federation import ClientDataset
from fedce.models.ledger import ClientRoundRow, ContributionLedger, RoundContribution, RoundLog
from fedce.models.predictor import ModelSpec, ParamVector, PseudoGradient
from fedce.services import predictors

logger = structlog.get_logger(__name__)

SIMPLEX_TOL = 1e-9


@dataclass
class ClientUpdate:
    client_id: int
    w_local: ParamVector
    delta: PseudoGradient


@dataclass
class RoundState:
    """Server-side view of round k after the clients reported back."""

    round: int
    w: ParamVector  # w_k, the broadcast model
    w_prev: Optional[ParamVector]  # w_{k-1}; None in round 0
    rho_prev: np.ndarray  # weights used in round k-1 (p in round 0)
    updates: List[ClientUpdate] = field(default_factory=list)

    def __post_init__(self):
        check_simplex(self.rho_prev)

    @property
    def global_delta(self) -> Optional[PseudoGradient]:
        if self.w_prev is None:
            return None
        return global_pseudo_gradient(self.w, self.w_prev)


class WeightEstimator(ABC):
    """Supplies the aggregation weights of every round."""

    @abstractmethod
    def round_weights(
        self,
        state: RoundState,
        clients: Sequence[ClientDataset],
        model: ModelSpec,
        ledger: ContributionLedger,
    ) -> RoundContribution:
        """Append the round's contribution record to the ledger and return it.

        The record's rho is used for aggregation.
        """
        pass


class SampleProportionEstimator(WeightEstimator):
    """FedAvg weights p_i."""

    def round_weights(self, state, clients, model, ledger) -> RoundContribution:
        ledger.record_weights(state.round, [c.p for c in clients])
        return ledger.rounds[-1]


@dataclass
class ExperimentResult:
    algorithm: Algorithm
    final_w: Optional[ParamVector]
    final_rho: np.ndarray
    round_logs: List[RoundLog]
    ledger: ContributionLedger
    client_models: List[ParamVector]  # per-client final local models


def _as_vector(v) -> np.ndarray:
    return np.asarray(v, dtype=np.float64)


def _same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"dimension mismatch: {a.shape} vs {b.shape}")


def check_simplex(weights: Sequence[float], tol: float = SIMPLEX_TOL) -> np.ndarray:
    rho = _as_vector(weights)
    if rho.ndim != 1 or rho.size == 0:
        raise WeightSimplexError("weights must be a nonempty 1-D sequence")
    if not np.all(np.isfinite(rho)) or np.any(rho < 0):
        raise WeightSimplexError(f"weights must be finite and nonnegative: {rho.tolist()}")
    if abs(float(np.sum(rho)) - 1.0) > tol:
        raise WeightSimplexError(f"weights sum to {float(np.sum(rho))!r}, expected 1")
    return rho


def local_update(
    model: ModelSpec, w_k: ParamVector, client: ClientDataset, steps: int, lr: float
) -> Tuple[ParamVector, PseudoGradient]:
    """
    Run `steps` full-batch gradient-descent steps on the client's train set.

    Returns:
        (w_{k,i}, delta) with delta = w_{k,i} - w_k exactly
    """
    if len(client.train) == 0:
        raise EmptyDatasetError(f"client {client.client_id} has an empty train set")
    if steps < 1:
        raise SimulationError(f"local steps must be >= 1, got {steps}")
    if lr < 0:
        raise SimulationError(f"learning rate must be >= 0, got {lr}")
    w_k = _as_vector(w_k)
    w = w_k.copy()
    for _ in range(steps):
        w = w - lr * predictors.gradient(model, w, client.train)
    if not np.all(np.isfinite(w)):
        raise NonFiniteError(f"client {client.client_id} produced non-finite parameters")
    return w, w - w_k


def global_pseudo_gradient(w_k: ParamVector, w_prev: ParamVector) -> PseudoGradient:
    a, b = _as_vector(w_k), _as_vector(w_prev)
    _same_dim(a, b)
    return a - b


def _check_exclusion_weight(p_i: float) -> None:
    if p_i < 0:
        raise ExclusionError(f"exclusion weight must be >= 0, got {p_i}")
    if p_i >= 1:
        raise ExclusionError(f"cannot exclude a client holding weight {p_i} >= 1")


def exclude_client_gradient(gF: PseudoGradient, gFi: PseudoGradient, p_i: float) -> PseudoGradient:
    """Aggregate pseudo-gradient without client i: (gF - p_i * gFi) / (1 - p_i)."""
    _check_exclusion_weight(p_i)
    a, b = _as_vector(gF), _as_vector(gFi)
    _same_dim(a, b)
    return (a - p_i * b) / (1.0 - p_i)


def exclude_client_model(w_k: ParamVector, w_ki: ParamVector, p_i: float) -> ParamVector:
    """Aggregate model without client i: (w_k - p_i * w_{k,i}) / (1 - p_i)."""
    _check_exclusion_weight(p_i)
    a, b = _as_vector(w_k), _as_vector(w_ki)
    _same_dim(a, b)
    return (a - p_i * b) / (1.0 - p_i)


def aggregate(
    w_k: ParamVector, deltas: Sequence[PseudoGradient], weights: Sequence[float], server_lr: float = 1.0
) -> ParamVector:
    """w_{k+1} = w_k + server_lr * sum_i rho_i * delta_i, reduced in ascending client order."""
    rho = check_simplex(weights)
    w = _as_vector(w_k)
    if len(deltas) != rho.size:
        raise DimensionMismatchError(f"{len(deltas)} deltas but {rho.size} weights")
    step = np.zeros_like(w)
    for rho_i, delta in zip(rho, deltas):
        delta = _as_vector(delta)
        _same_dim(w, delta)
        step += rho_i * delta
    w_next = w + server_lr * step
    if not np.all(np.isfinite(w_next)):
        raise NonFiniteError("aggregation produced non-finite parameters")
    return w_next


def _estimator_for(algorithm: Algorithm) -> WeightEstimator:
    if algorithm.combine_mode is None:
        return SampleProportionEstimator()
    from fedce.services.contribution import FedCEEstimator

    return FedCEEstimator(algorithm.combine_mode)


def _validation_errors(model: ModelSpec, ws: Sequence[ParamVector], clients: Sequence[ClientDataset]) -> np.ndarray:
    return np.array([predictors.evaluate_error(model, w, c.val) for w, c in zip(ws, clients)])


def _validation_losses(model: ModelSpec, ws: Sequence[ParamVector], clients: Sequence[ClientDataset]) -> np.ndarray:
    return np.array([predictors.loss(model, w, c.val) for w, c in zip(ws, clients)])


def _round_rows(
    k: int,
    record: RoundContribution,
    weights: np.ndarray,
    updates: List[ClientUpdate],
    global_delta: PseudoGradient,
    model: ModelSpec,
    clients: Sequence[ClientDataset],
    global_ws: Sequence[ParamVector],
) -> List[ClientRoundRow]:
    from fedce.services.contribution import free_rider_score, local_global_cosine

    local_ws = [u.w_local for u in updates]
    local_err = _validation_errors(model, local_ws, clients)
    global_err = _validation_errors(model, global_ws, clients)
    local_loss = _validation_losses(model, local_ws, clients)
    global_loss = _validation_losses(model, global_ws, clients)
    rows = []
    for i, update in enumerate(updates):
        rows.append(
            ClientRoundRow(
                round=k,
                client_id=update.client_id,
                gamma_cos=float(record.gamma_cos[i]),
                gamma_err=float(record.gamma_err[i]),
                gamma_m=float(record.gamma_m[i]),
                gamma_s=float(record.gamma_s[i]),
                rho=float(weights[i]),
                local_val_error=float(local_err[i]),
                global_val_error=float(global_err[i]),
                local_val_loss=float(local_loss[i]),
                global_val_loss=float(global_loss[i]),
                free_rider_score=free_rider_score(update.delta, global_delta, local_loss[i], global_loss[i]),
                local_global_cosine=local_global_cosine(update.delta, global_delta),
            )
        )
    return rows


def run_experiment(
    config: ExperimentConfig,
    clients: Sequence[ClientDataset],
    estimator: Optional[WeightEstimator] = None,
    threads: Optional[int] = None,
    init_seed: Optional[int] = None,
) -> ExperimentResult:
    """
    Execute config.rounds federated rounds on `clients`.

    fedavg aggregates with p every round; FedCE variants take their weights from
    the contribution estimator; standalone trains every client alone for
    rounds * local_steps steps. Passing `estimator` overrides the algorithm's
    weight source.
    """
    if not clients:
        raise EmptyDatasetError("federation has no clients")
    model = config.model
    algorithm = config.algorithm
    n = len(clients)
    steps, lr = config.local_steps, config.client_lr
    seed = config.federation.seed if init_seed is None else init_seed
    p = check_simplex([c.p for c in clients])
    log = logger.bind(algorithm=algorithm.value, seed=seed, n_clients=n)

    w = predictors.init_params(model, seed)
    ledger = ContributionLedger(n, algorithm.combine_mode)
    round_logs: List[RoundLog] = []

    if algorithm == Algorithm.STANDALONE:
        models = [w.copy() for _ in range(n)]
        for k in range(config.rounds):
            before = list(models)
            results = ordered_map(
                lambda i: local_update(model, models[i], clients[i], steps, lr), list(range(n)), threads
            )
            updates = [ClientUpdate(c.client_id, w_i, d_i) for c, (w_i, d_i) in zip(clients, results)]
            models = [u.w_local for u in updates]
            ledger.record_weights(k, p)
            rows = _round_rows(k, ledger.rounds[-1], p, updates, np.zeros_like(w), model, clients, before)
            mean_val_score = float(np.mean([1.0 - r.local_val_error for r in rows]))
            round_logs.append(RoundLog(round=k, rows=rows, weights=p.tolist(), mean_val_score=mean_val_score))
        log.info("standalone_finished", rounds=config.rounds)
        return ExperimentResult(algorithm, None, p, round_logs, ledger, models)

    estimator = estimator or _estimator_for(algorithm)
    w_prev: Optional[ParamVector] = None
    rho_prev = p
    for k in range(config.rounds):
        w_k = w
        results = ordered_map(lambda c: local_update(model, w_k, c, steps, lr), list(clients), threads)
        updates = [ClientUpdate(c.client_id, w_i, d_i) for c, (w_i, d_i) in zip(clients, results)]
        state = RoundState(round=k, w=w_k, w_prev=w_prev, rho_prev=rho_prev, updates=updates)

        record = estimator.round_weights(state, clients, model, ledger)
        weights = check_simplex(record.rho)

        w_next = aggregate(w_k, [u.delta for u in updates], weights, config.server_lr)

        agg_err = _validation_errors(model, [w_next] * n, clients)
        gF = state.global_delta if state.global_delta is not None else np.zeros_like(w_k)
        rows = _round_rows(k, record, weights, updates, gF, model, clients, [w_k] * n)
        round_logs.append(
            RoundLog(
                round=k,
                rows=rows,
                weights=weights.tolist(),
                mean_val_score=float(np.mean(1.0 - agg_err)),
                degenerate=record.degenerate,
            )
        )
        log.debug("round_finished", round=k, mean_val_score=round_logs[-1].mean_val_score)

        w_prev, w, rho_prev = w_k, w_next, weights

    log.info("experiment_finished", rounds=config.rounds, final_rho=[round(float(r), 6) for r in rho_prev])
    return ExperimentResult(
        algorithm, w, rho_prev, round_logs, ledger, [u.w_local for u in updates]
    )


def client_test_scores(
    model: ModelSpec, result: ExperimentResult, clients: Sequence[ClientDataset]
) -> np.ndarray:
    """Per-client test score (1 - error); standalone uses each client's own model."""
    if result.final_w is None:
        ws = result.client_models
    else:
        ws = [result.final_w] * len(clients)
    return np.array([1.0 - predictors.evaluate_error(model, w, c.test) for w, c in zip(ws, clients)])
