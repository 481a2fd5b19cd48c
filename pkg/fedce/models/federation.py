from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Task(str, Enum):
    CLASSIFICATION = "classification"
    SEGMENTATION = "segmentation"


class ClientShift(BaseModel):
    """Distribution parameters of one client relative to the shared base."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    mean_offset: List[float] = Field(default_factory=list)
    rotation: float = 0.0  # radians; segmentation ignores it
    noise_scale: float = Field(default=1.0, gt=0)
    contrast: float = Field(default=1.0, gt=0)  # segmentation only

    def distance(self) -> float:
        """Parameter distance from the shared base distribution."""
        return float(
            np.linalg.norm(self.mean_offset)
            + abs(self.rotation)
            + abs(np.log(self.noise_scale))
            + abs(np.log(self.contrast))
        )


class FreeRiderSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    client: int = Field(ge=0)
    base_samples: int = Field(default=1, ge=1, le=1)
    repeat: int = Field(default=50, ge=1)


class FederationSpec(BaseModel):
    """Parameters of a seeded synthetic federation."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    n_clients: int = Field(ge=2)
    samples_per_client: List[int]
    task: Task = Task.CLASSIFICATION
    n_features: int = Field(default=8, ge=2)  # classification feature length
    n_classes: int = Field(default=2, ge=2)
    grid_size: int = Field(default=8, ge=2)  # segmentation grid side
    class_separation: float = Field(default=2.0, gt=0)
    shift_scale: float = Field(default=0.5, ge=0)
    max_rotation: float = Field(default=0.25, ge=0)
    client_shift: Optional[List[ClientShift]] = None
    outlier_client: Optional[int] = Field(default=None, ge=0)
    outlier_shift: float = Field(default=4.0, gt=0)
    free_rider: Optional[FreeRiderSpec] = None
    split_ratios: Tuple[float, float, float] = (0.5, 0.25, 0.25)
    per_client_streams: bool = True
    seed: int = Field(default=0, ge=0, lt=2**64)

    @field_validator("samples_per_client", mode="before")
    @classmethod
    def expand_samples(cls, v, info):
        if isinstance(v, int):
            n = info.data.get("n_clients", 0)
            return [v] * n
        return v

    @field_validator("samples_per_client")
    @classmethod
    def validate_samples(cls, v: List[int]) -> List[int]:
        for count in v:
            if count < 4:
                raise ValueError("every samples_per_client entry must be >= 4 (split infeasible)")
        return v

    @field_validator("split_ratios")
    @classmethod
    def validate_ratios(cls, v: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if any(r < 0 for r in v) or abs(sum(v) - 1.0) > 1e-9:
            raise ValueError("split ratios must be nonnegative and sum to 1")
        return v

    @model_validator(mode="after")
    def validate_indices(self):
        if len(self.samples_per_client) != self.n_clients:
            raise ValueError(
                f"samples_per_client has {len(self.samples_per_client)} entries, expected {self.n_clients}"
            )
        if self.outlier_client is not None and self.outlier_client >= self.n_clients:
            raise ValueError("outlier_client must be < n_clients")
        if self.free_rider is not None and self.free_rider.client >= self.n_clients:
            raise ValueError("free_rider.client must be < n_clients")
        if self.client_shift is not None:
            if len(self.client_shift) != self.n_clients:
                raise ValueError("client_shift needs one entry per client")
            for shift in self.client_shift:
                if shift.mean_offset and len(shift.mean_offset) != self.offset_dim:
                    raise ValueError(f"mean_offset must have length {self.offset_dim}")
        return self

    @property
    def feature_dim(self) -> int:
        if self.task == Task.SEGMENTATION:
            return self.grid_size * self.grid_size
        return self.n_features

    @property
    def offset_dim(self) -> int:
        # segmentation shifts are a scalar intensity offset
        return 1 if self.task == Task.SEGMENTATION else self.n_features


@dataclass(frozen=True, eq=False)
class Sample:
    """One (features, label) pair; label is a class index or a flat binary mask."""

    features: np.ndarray
    label: Union[int, np.ndarray]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Sample):
            return NotImplemented
        return np.array_equal(self.features, other.features) and np.array_equal(
            np.asarray(self.label), np.asarray(other.label)
        )

    def __hash__(self):
        return hash((self.features.tobytes(), np.asarray(self.label).tobytes()))


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Column storage for a sequence of samples.

    features has shape (n, f); labels has shape (n,) of int64 class indices or
    (n, m) of float64 0/1 mask cells.
    """

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels disagree on sample count")

    def __len__(self) -> int:
        return len(self.features)

    def __getitem__(self, i: int) -> Sample:
        label = self.labels[i]
        return Sample(
            features=self.features[i].copy(),
            label=int(label) if self.labels.ndim == 1 else label.copy(),
        )

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def is_segmentation(self) -> bool:
        return self.labels.ndim == 2

    def take(self, indices: Sequence[int]) -> "SampleSet":
        idx = np.asarray(indices, dtype=np.int64)
        return SampleSet(features=self.features[idx], labels=self.labels[idx])

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "SampleSet":
        if not samples:
            raise ValueError("cannot build a SampleSet from no samples")
        features = np.stack([np.asarray(s.features, dtype=np.float64) for s in samples])
        if np.ndim(samples[0].label) == 0:
            labels = np.asarray([int(s.label) for s in samples], dtype=np.int64)
        else:
            labels = np.stack([np.asarray(s.label, dtype=np.float64) for s in samples])
        return cls(features=features, labels=labels)

    @classmethod
    def empty_like(cls, other: "SampleSet") -> "SampleSet":
        return cls(
            features=np.empty((0, other.features.shape[1])),
            labels=np.empty((0,) + other.labels.shape[1:], dtype=other.labels.dtype),
        )

    def equals(self, other: "SampleSet") -> bool:
        return np.array_equal(self.features, other.features) and np.array_equal(
            self.labels, other.labels
        )


@dataclass(frozen=True)
class ClientDataset:
    client_id: int
    train: SampleSet
    val: SampleSet
    test: SampleSet
    p: float = 0.0
    is_free_rider: bool = False

    @property
    def n_train(self) -> int:
        return len(self.train)

    def with_weight(self, p: float) -> "ClientDataset":
        return replace(self, p=p)

    def with_id(self, client_id: int) -> "ClientDataset":
        return replace(self, client_id=client_id)
