from enum import Enum
from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from fedce.models.federation import FederationSpec, Task
from fedce.models.predictor import ModelSpec


class Algorithm(str, Enum):
    FEDAVG = "fedavg"
    FEDCE_MULTI = "fedce_multi"
    FEDCE_SUM = "fedce_sum"
    FEDCE_COS = "fedce_cos"
    FEDCE_ERR = "fedce_err"
    STANDALONE = "standalone"

    @property
    def combine_mode(self) -> Optional[str]:
        """Combination mode of a FedCE variant, None for the baselines."""
        if self.value.startswith("fedce_"):
            return self.value.split("_", 1)[1]
        return None


class ValuationSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    # Oracle retraining stays on FedAvg so it is independent of the estimator
    utility_algorithm: Algorithm = Algorithm.FEDAVG
    compare_algorithms: List[Algorithm] = Field(
        default_factory=lambda: [Algorithm.FEDCE_MULTI, Algorithm.FEDCE_SUM]
    )


class FreeRiderSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    repeat: int = Field(default=50, ge=1)
    positions: Optional[List[int]] = None  # None: every client in turn
    snapshot_rounds: List[int] = Field(default_factory=lambda: [1, 5, 10, 20, 50, 100])
    detect_by_round: int = Field(default=10, ge=1)


class TheorySection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    removable_client: Optional[int] = Field(default=None, ge=0)
    convergence_algorithms: List[Algorithm] = Field(
        default_factory=lambda: [Algorithm.FEDAVG, Algorithm.FEDCE_MULTI, Algorithm.FEDCE_SUM]
    )


class ExperimentConfig(BaseModel):
    """One experiment: a federation, a predictor, an algorithm and its schedule.

    Each seed in `seeds` drives both the federation generator and the model
    initialisation; `federation.seed` is replaced per run.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    federation: FederationSpec
    model: ModelSpec
    algorithm: Algorithm = Algorithm.FEDCE_MULTI
    rounds: int = Field(ge=1)
    local_steps: int = Field(default=1, ge=1)
    client_lr: float = Field(ge=0)
    server_lr: float = Field(default=1.0, gt=0)
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)
    output_dir: Path = Path("runs/default")
    federation_file: Optional[Path] = None
    valuation: ValuationSection = Field(default_factory=ValuationSection)
    freerider: FreeRiderSection = Field(default_factory=FreeRiderSection)
    theory: TheorySection = Field(default_factory=TheorySection)

    @model_validator(mode="after")
    def validate_model_matches_federation(self):
        fed, model = self.federation, self.model
        if model.input_dim != fed.feature_dim:
            raise ValueError(
                f"model.input_dim={model.input_dim} but the federation produces {fed.feature_dim} features"
            )
        if (fed.task == Task.SEGMENTATION) != model.is_segmentation:
            raise ValueError(f"model family {model.family.value} does not fit task {fed.task.value}")
        if fed.task == Task.CLASSIFICATION and model.n_classes != fed.n_classes:
            raise ValueError("model.n_classes must equal federation.n_classes")
        for seed in self.seeds:
            if seed < 0 or seed >= 2**64:
                raise ValueError("seeds must be unsigned 64-bit integers")
        return self

    def for_seed(self, seed: int) -> "ExperimentConfig":
        """Copy with the federation seed set to `seed`."""
        federation = self.federation.model_copy(update={"seed": seed})
        return self.model_copy(update={"federation": federation, "seeds": [seed]})

    def with_algorithm(self, algorithm: Algorithm) -> "ExperimentConfig":
        return self.model_copy(update={"algorithm": algorithm})

    def with_federation(self, federation: FederationSpec) -> "ExperimentConfig":
        return self.model_copy(update={"federation": federation})
