"""
Per-round contribution estimation and the cumulative aggregation weights.

Gradient-space term: 1 - cos(client delta, aggregate delta without the client).
Data-space term: error of the aggregate model without the client on the
client's validation samples. Both are normalized over clients per round,
combined (product or sum), accumulated over rounds and normalized again into
the aggregation weights rho.
"""
from typing import Optional, Sequence, Tuple

import numpy as np
import structlog

from fedce.core.concurrency import ordered_map
from fedce.exceptions.errors import (
    DimensionMismatchError,
    EmptyDatasetError,
    ExclusionError,
    NegativeContributionError,
    SimulationError,
)
from fedce.models.federation import ClientDataset
from fedce.models.ledger import ContributionLedger, RoundContribution
from fedce.models.predictor import ModelSpec, ParamVector, PseudoGradient
from fedce.services import predictors
from fedce.services.fl_engine import (
    RoundState,
    WeightEstimator,
    exclude_client_gradient,
    exclude_client_model,
)

logger = structlog.get_logger(__name__)

NORM_EPS = 1e-12
COMBINE_MODES = ("multi", "sum", "cos", "err")


def _cosine_or_none(a: PseudoGradient, b: PseudoGradient) -> Optional[float]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < NORM_EPS or nb < NORM_EPS:
        return None
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def _gamma_cos_checked(gFi: PseudoGradient, gF_excl_i: PseudoGradient) -> Tuple[float, bool]:
    cos = _cosine_or_none(gFi, gF_excl_i)
    if cos is None:
        return 1.0, True
    return 1.0 - cos, False


def gamma_cos(gFi: PseudoGradient, gF_excl_i: PseudoGradient) -> float:
    """
    Gradient-space contribution 1 - cos(gFi, gF_excl_i), in [0, 2].

    A vector with norm below 1e-12 yields 1 (orthogonality-equivalent).
    """
    value, degenerate = _gamma_cos_checked(gFi, gF_excl_i)
    if degenerate:
        logger.warning("degenerate_cosine", fallback=value)
    return value


def gamma_err(model: ModelSpec, w_excl_i: ParamVector, client: ClientDataset) -> float:
    """Error of the leave-client-out model on the client's validation samples."""
    if len(client.val) == 0:
        raise EmptyDatasetError(f"client {client.client_id} has no validation samples")
    return predictors.evaluate_error(model, w_excl_i, client.val)


def normalize(values: Sequence[float]) -> Tuple[np.ndarray, bool]:
    """
    Scale nonnegative values onto the simplex.

    Returns:
        (normalized values, degenerate); a sum below 1e-12 yields the uniform vector
        and degenerate=True
    """
    v = np.asarray(values, dtype=np.float64)
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise NegativeContributionError(f"cannot normalize negative or non-finite values: {v.tolist()}")
    total = float(np.sum(v))
    if total < NORM_EPS:
        logger.warning("degenerate_normalization", n=v.size)
        return np.full(v.size, 1.0 / v.size), True
    return v / total, False


def combine(gcos: Sequence[float], gerr: Sequence[float], mode: str = "multi") -> np.ndarray:
    """Elementwise product ('multi') or sum ('sum'); 'cos'/'err' keep one term (ablation)."""
    a = np.asarray(gcos, dtype=np.float64)
    b = np.asarray(gerr, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"length mismatch: {a.size} vs {b.size}")
    if mode == "multi":
        return a * b
    if mode == "sum":
        return a + b
    if mode == "cos":
        return a.copy()
    if mode == "err":
        return b.copy()
    raise ValueError(f"unknown combine mode {mode!r}; expected one of {COMBINE_MODES}")


def _rho_from_cumulative(cumulative: np.ndarray) -> Tuple[np.ndarray, bool]:
    total = float(np.sum(cumulative))
    if total < NORM_EPS:
        return np.full(cumulative.size, 1.0 / cumulative.size), True
    return cumulative / total, False


def update_rho(ledger: ContributionLedger, round_index: int, combined: Sequence[float]) -> np.ndarray:
    """
    Add this round's combined terms to the ledger and return the new weights.

    rho_{k,i} = sum_{t<=k} G_{t,i} / sum_j sum_{t<=k} G_{t,j}; an all-zero history
    falls back to uniform weights.
    """
    g = np.asarray(combined, dtype=np.float64)
    if g.shape != (ledger.n_clients,):
        raise DimensionMismatchError(f"expected {ledger.n_clients} terms, got {g.shape}")
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        raise NegativeContributionError(f"contribution terms must be finite and >= 0: {g.tolist()}")
    ledger.cumulative_combined = ledger.cumulative_combined + g
    rho, degenerate = _rho_from_cumulative(ledger.cumulative_combined)
    if degenerate:
        logger.warning("degenerate_rho", round=round_index)
    return rho


def local_global_cosine(gFi: PseudoGradient, gF: PseudoGradient) -> float:
    """cos(client delta, global delta); 0 when either has norm below 1e-12."""
    cos = _cosine_or_none(gFi, gF)
    return 0.0 if cos is None else cos


def free_rider_score(
    gFi: PseudoGradient, gF: PseudoGradient, local_loss_on_i: float, global_loss_on_i: float
) -> float:
    """
    (1 - cos(gFi, gF)) * |local loss - global loss|, both losses on the client's validation data.

    Losses are mean training losses, not thresholded errors. Higher is more suspicious.
    """
    dissimilarity, _ = _gamma_cos_checked(gFi, gF)
    gap = abs(float(local_loss_on_i) - float(global_loss_on_i))
    return max(0.0, dissimilarity * gap)


def _client_terms(
    state: RoundState, client: ClientDataset, index: int, model: ModelSpec
) -> Tuple[float, float, bool]:
    update = state.updates[index]
    weight = float(state.rho_prev[index])
    try:
        gF_excl = exclude_client_gradient(state.global_delta, update.delta, weight)
        w_excl = exclude_client_model(state.w, update.w_local, weight)
    except ExclusionError:
        logger.warning("degenerate_exclusion", round=state.round, client_id=client.client_id, weight=weight)
        return 1.0, predictors.evaluate_error(model, state.w, client.val), True
    cos_term, degenerate = _gamma_cos_checked(update.delta, gF_excl)
    if degenerate:
        logger.warning("degenerate_cosine", round=state.round, client_id=client.client_id)
    return cos_term, gamma_err(model, w_excl, client), degenerate


def bootstrap_contribution(state: RoundState, ledger: ContributionLedger, mode: str) -> RoundContribution:
    """Round 0: weights stay p and the terms are recorded as uniform."""
    n = ledger.n_clients
    uniform = np.full(n, 1.0 / n)
    record = RoundContribution(
        round=state.round,
        gamma_cos=uniform,
        gamma_err=uniform,
        gamma_m=combine(uniform, uniform, "multi"),
        gamma_s=combine(uniform, uniform, "sum"),
        combined=combine(uniform, uniform, mode),
        rho=np.array(state.rho_prev, dtype=np.float64),
        bootstrap=True,
    )
    ledger.append(record)
    return record


def compute_round_contributions(
    state: RoundState,
    clients: Sequence[ClientDataset],
    model: ModelSpec,
    ledger: ContributionLedger,
    mode: str = "multi",
    threads: Optional[int] = None,
) -> RoundContribution:
    """
    Exclusions -> gradient/data terms -> normalization -> combination -> weights.

    The record is appended to the ledger and returned.
    """
    if state.round < 1 or state.global_delta is None:
        raise SimulationError("contributions need a previous global update (round >= 1)")
    if len(clients) != len(state.updates):
        raise DimensionMismatchError(f"{len(clients)} clients but {len(state.updates)} updates")

    terms = ordered_map(
        lambda i: _client_terms(state, clients[i], i, model), list(range(len(clients))), threads
    )
    raw_cos = np.array([t[0] for t in terms])
    raw_err = np.array([t[1] for t in terms])
    client_degenerate = np.array([t[2] for t in terms])

    gcos, cos_degenerate = normalize(raw_cos)
    gerr, err_degenerate = normalize(raw_err)
    combined = combine(gcos, gerr, mode)
    rho = update_rho(ledger, state.round, combined)
    rho_degenerate = float(np.sum(ledger.cumulative_combined)) < NORM_EPS

    record = RoundContribution(
        round=state.round,
        gamma_cos=gcos,
        gamma_err=gerr,
        gamma_m=combine(gcos, gerr, "multi"),
        gamma_s=combine(gcos, gerr, "sum"),
        combined=combined,
        rho=rho,
        degenerate=bool(cos_degenerate or err_degenerate or rho_degenerate),
        degenerate_clients=client_degenerate,
    )
    ledger.append(record)
    logger.debug(
        "round_contributions",
        round=state.round,
        rho=[round(float(r), 6) for r in rho],
        degenerate=record.degenerate,
    )
    return record


class FedCEEstimator(WeightEstimator):
    """Aggregation weights from accumulated contribution estimates."""

    def __init__(self, mode: str = "multi", threads: Optional[int] = None):
        if mode not in COMBINE_MODES:
            raise ValueError(f"unknown combine mode {mode!r}; expected one of {COMBINE_MODES}")
        self.mode = mode
        self.threads = threads

    def round_weights(self, state, clients, model, ledger) -> RoundContribution:
        if state.w_prev is None:
            return bootstrap_contribution(state, ledger, self.mode)
        return compute_round_contributions(state, clients, model, ledger, self.mode, self.threads)


def first_detection_round(scores: Sequence[Sequence[float]], position: int) -> Optional[int]:
    """First round k >= 1 where client `position` alone holds the highest positive free-rider score."""
    for k, per_client in enumerate(scores):
        if k < 1:
            continue
        values = np.asarray(per_client, dtype=float)
        top = float(values.max())
        if top > 0.0 and int(np.sum(values == top)) == 1 and values[position] == top:
            return k
    return None
