from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from pydantic import BaseModel

ROUND_COLUMNS = [
    "round",
    "client_id",
    "gamma_cos",
    "gamma_err",
    "gamma_m",
    "gamma_s",
    "rho",
    "local_val_error",
    "global_val_error",
]


class ClientRoundRow(BaseModel):
    """Per-round, per-client record; the first nine fields are the rounds.csv columns."""

    round: int
    client_id: int
    gamma_cos: float
    gamma_err: float
    gamma_m: float
    gamma_s: float
    rho: float
    local_val_error: float
    global_val_error: float
    local_val_loss: float
    global_val_loss: float
    free_rider_score: float
    local_global_cosine: float


class RoundLog(BaseModel):
    round: int
    rows: List[ClientRoundRow]
    weights: List[float]  # weights used to aggregate this round
    mean_val_score: float  # mean over clients of 1 - error of the aggregated model
    degenerate: bool = False


@dataclass
class RoundContribution:
    """Contribution terms of one round; gamma_cos/gamma_err are normalized."""

    round: int
    gamma_cos: np.ndarray
    gamma_err: np.ndarray
    gamma_m: np.ndarray
    gamma_s: np.ndarray
    combined: np.ndarray
    rho: np.ndarray
    bootstrap: bool = False
    degenerate: bool = False
    degenerate_clients: Optional[np.ndarray] = None


class ContributionLedger:
    """Per-round contribution history plus the cumulative sums behind the weights.

    Bootstrap rounds are recorded but never enter the cumulative sums.
    """

    def __init__(self, n_clients: int, mode: Optional[str] = None):
        self.n_clients = n_clients
        self.mode = mode
        self.rounds: List[RoundContribution] = []
        self.cumulative_gamma_cos = np.zeros(n_clients)
        self.cumulative_gamma_err = np.zeros(n_clients)
        self.cumulative_combined = np.zeros(n_clients)
        self.degenerate_round_count = np.zeros(n_clients, dtype=np.int64)
        self.rho_history: List[np.ndarray] = []

    def append(self, record: RoundContribution) -> None:
        if not record.bootstrap:
            self.cumulative_gamma_cos = self.cumulative_gamma_cos + record.gamma_cos
            self.cumulative_gamma_err = self.cumulative_gamma_err + record.gamma_err
        if record.degenerate:
            self.degenerate_round_count += 1
        elif record.degenerate_clients is not None:
            self.degenerate_round_count += record.degenerate_clients.astype(np.int64)
        self.rounds.append(record)
        self.rho_history.append(np.array(record.rho, dtype=np.float64))

    def record_weights(self, round_index: int, rho: np.ndarray) -> None:
        """Record weights of a round that computed no contribution terms."""
        nan = np.full(self.n_clients, np.nan)
        self.append(
            RoundContribution(
                round=round_index,
                gamma_cos=nan,
                gamma_err=nan,
                gamma_m=nan,
                gamma_s=nan,
                combined=nan,
                rho=np.array(rho, dtype=np.float64),
                bootstrap=True,
            )
        )

    @property
    def rho_final(self) -> np.ndarray:
        if not self.rho_history:
            raise ValueError("ledger is empty")
        return self.rho_history[-1]

    def __len__(self) -> int:
        return len(self.rounds)
