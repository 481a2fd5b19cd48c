from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class FairnessReport(BaseModel):
    """Per-client test scores of one method against the standalone reference."""

    method: str = ""
    scores: List[float]
    mean: float
    std: float = Field(ge=0)
    # None when either score vector has zero variance
    pearson_r: Optional[float] = Field(default=None, ge=-1, le=1)
    p_value: Optional[float] = Field(default=None, ge=0, le=1)
    euclidean_distance: float = Field(ge=0)
    cosine_similarity: float = Field(ge=-1, le=1)


class AlignmentMetrics(BaseModel):
    """Agreement between estimated weights and oracle contribution shares."""

    method: str = ""
    pearson_r: Optional[float] = None
    p_value: Optional[float] = None
    euclidean_distance: float = Field(ge=0)
    cosine_similarity: float


class ValuationResult(BaseModel):
    shapley: Optional[List[float]] = None
    loo_drop: Optional[List[float]] = None
    loo_share: Optional[List[float]] = None
    sample_share: List[float]
    full_performance: Optional[float] = None
    empty_performance: Optional[float] = None

    def per_client(self) -> Dict[str, Dict[str, Optional[float]]]:
        rows = {}
        for i, share in enumerate(self.sample_share):
            rows[str(i)] = {
                "shapley": None if self.shapley is None else self.shapley[i],
                "loo_drop": None if self.loo_drop is None else self.loo_drop[i],
                "loo_share": None if self.loo_share is None else self.loo_share[i],
                "sample_share": share,
            }
        return rows


class ShiftCheckResult(BaseModel):
    removed_client: int
    surviving_clients: List[int]
    estimate_full: List[float]  # N-client estimates
    estimate_full_renormalized: List[float]  # restricted to survivors, on the simplex
    estimate_reduced: List[float]  # N-1-client run
    abs_change: List[float]
    percent_change: List[float]
    max_abs_change: float
    wasserstein: float = Field(ge=0)
    outlier_wasserstein: float = Field(ge=0)


class RhoTraceRow(BaseModel):
    round: int
    client_id: int
    rho: float
    local_steps: int
    client_lr: float
    bound_proxy: float  # rho * sqrt(local_steps * (round + 1)), reported only


class RhoBoundTrace(BaseModel):
    rows: List[RhoTraceRow]
    max_rho: float
    simplex_ok: bool
    finite_ok: bool


class ConvergenceCurves(BaseModel):
    """Per-round mean validation score, keyed by algorithm then seed."""

    curves: Dict[str, Dict[int, List[float]]]

    def mean_curve(self, algorithm: str) -> List[float]:
        per_seed = list(self.curves[algorithm].values())
        rounds = len(per_seed[0])
        return [sum(curve[k] for curve in per_seed) / len(per_seed) for k in range(rounds)]

    def first_round_reaching(self, algorithm: str, seed: int, target: float) -> Optional[int]:
        for k, score in enumerate(self.curves[algorithm][seed]):
            if score >= target:
                return k
        return None


class FreeRiderResult(BaseModel):
    """One federation per free-rider position; scores[position][round][client]."""

    positions: List[int]
    scores: List[List[List[float]]]
    cosines: List[List[List[float]]]
    detected_round: List[Optional[int]]
