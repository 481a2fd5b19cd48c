from enum import Enum
from typing import Optional

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, model_validator

# Flat parameter vector w of dimension d; pseudo-gradients share the layout.
ParamVector = npt.NDArray[np.float64]
PseudoGradient = npt.NDArray[np.float64]


class ModelFamily(str, Enum):
    LOGISTIC = "logistic"
    MLP1 = "mlp1"
    PIXEL_SEG = "pixel_seg"


class ModelSpec(BaseModel):
    """Predictor family and shape.

    logistic: weights (f x c) then biases (c), with c = 1 for binary output.
    mlp1: W1 (f x h), b1 (h), W2 (h x c), b2 (c); tanh hidden layer.
    pixel_seg: own-pixel weight, neighbourhood weight, shared intercept, then one bias per cell.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    family: ModelFamily = ModelFamily.LOGISTIC
    input_dim: int = Field(ge=1)
    hidden: Optional[int] = Field(default=None, ge=1)
    n_classes: int = Field(default=2, ge=2)
    grid_size: Optional[int] = Field(default=None, ge=2)

    @model_validator(mode="after")
    def validate_family(self):
        if self.family == ModelFamily.MLP1 and self.hidden is None:
            raise ValueError("mlp1 requires hidden >= 1")
        if self.family == ModelFamily.PIXEL_SEG:
            if self.grid_size is None:
                raise ValueError("pixel_seg requires grid_size")
            if self.input_dim != self.grid_size * self.grid_size:
                raise ValueError("pixel_seg input_dim must equal grid_size**2")
        return self

    @property
    def is_segmentation(self) -> bool:
        return self.family == ModelFamily.PIXEL_SEG

    @property
    def output_units(self) -> int:
        return 1 if self.n_classes == 2 else self.n_classes

    @property
    def dim(self) -> int:
        f, c = self.input_dim, self.output_units
        if self.family == ModelFamily.LOGISTIC:
            return f * c + c
        if self.family == ModelFamily.MLP1:
            h = self.hidden
            return f * h + h + h * c + c
        return 3 + self.input_dim
