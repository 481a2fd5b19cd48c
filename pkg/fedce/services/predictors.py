"""
Small differentiable predictors with closed-form gradients.

Classification families (logistic, mlp1) train on mean cross-entropy; the
pixel_seg family trains on the soft Dice loss averaged over samples.
"""
from typing import Tuple

import numpy as np
from scipy.special import expit, log_softmax, softmax

from fedce.exceptions.errors import DimensionMismatchError, EmptyDatasetError
from fedce.models.federation import SampleSet
from fedce.models.predictor import ModelFamily, ModelSpec, ParamVector
from fedce.services.metrics import dice_coefficients

DICE_EPS = 1e-6
DICE_THRESHOLD = 0.5


def _check_params(model: ModelSpec, w: ParamVector) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != model.dim:
        raise DimensionMismatchError(f"parameter vector has shape {w.shape}, model expects ({model.dim},)")
    return w


def _check_features(model: ModelSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.input_dim:
        raise DimensionMismatchError(f"features have length {x.shape[1]}, model expects {model.input_dim}")
    return x


def _check_batch(batch: SampleSet) -> None:
    if len(batch) == 0:
        raise EmptyDatasetError("batch is empty")


def _unpack(model: ModelSpec, w: np.ndarray):
    f, c = model.input_dim, model.output_units
    if model.family == ModelFamily.LOGISTIC:
        return w[: f * c].reshape(f, c), w[f * c :]
    if model.family == ModelFamily.MLP1:
        h = model.hidden
        i = 0
        w1 = w[i : i + f * h].reshape(f, h)
        i += f * h
        b1 = w[i : i + h]
        i += h
        w2 = w[i : i + h * c].reshape(h, c)
        i += h * c
        return w1, b1, w2, w[i:]
    return w[0], w[1], w[2], w[3:]


def _neighbour_mean(x: np.ndarray, g: int) -> np.ndarray:
    """Mean of the 4-neighbourhood of every cell (edge cells average fewer)."""
    img = x.reshape(-1, g, g)
    total = np.zeros_like(img)
    count = np.zeros((g, g))
    total[:, 1:, :] += img[:, :-1, :]
    count[1:, :] += 1
    total[:, :-1, :] += img[:, 1:, :]
    count[:-1, :] += 1
    total[:, :, 1:] += img[:, :, :-1]
    count[:, 1:] += 1
    total[:, :, :-1] += img[:, :, 1:]
    count[:, :-1] += 1
    return (total / count).reshape(x.shape)


def init_params(model: ModelSpec, seed: int) -> ParamVector:
    """Deterministic initialisation: weights uniform in +-min(1, 1/sqrt(fan_in)), biases 0."""
    rng = np.random.default_rng(seed)
    f, c = model.input_dim, model.output_units
    if model.family == ModelFamily.LOGISTIC:
        bound = min(1.0, 1.0 / np.sqrt(f))
        return np.concatenate([rng.uniform(-bound, bound, f * c), np.zeros(c)])
    if model.family == ModelFamily.MLP1:
        h = model.hidden
        b1, b2 = min(1.0, 1.0 / np.sqrt(f)), min(1.0, 1.0 / np.sqrt(h))
        return np.concatenate(
            [rng.uniform(-b1, b1, f * h), np.zeros(h), rng.uniform(-b2, b2, h * c), np.zeros(c)]
        )
    return np.concatenate([rng.uniform(-0.5, 0.5, 2), np.zeros(1 + model.input_dim)])


def _logits(model: ModelSpec, w: np.ndarray, x: np.ndarray):
    """Output pre-activations plus whatever the backward pass needs."""
    if model.family == ModelFamily.LOGISTIC:
        wm, b = _unpack(model, w)
        return x @ wm + b, None
    if model.family == ModelFamily.MLP1:
        w1, b1, w2, b2 = _unpack(model, w)
        hidden = np.tanh(x @ w1 + b1)
        return hidden @ w2 + b2, hidden
    a, c, b0, b = _unpack(model, w)
    nbr = _neighbour_mean(x, model.grid_size)
    return a * x + c * nbr + b0 + b, nbr


def _probabilities(model: ModelSpec, z: np.ndarray) -> np.ndarray:
    if model.is_segmentation or model.output_units == 1:
        return expit(z)
    return softmax(z, axis=1)


def predict(model: ModelSpec, w: ParamVector, x: np.ndarray) -> np.ndarray:
    """
    Class probabilities (n, n_classes) or per-cell mask probabilities (n, m).

    A single feature vector yields a single row.
    """
    w = _check_params(model, w)
    xb = _check_features(model, x)
    z, _ = _logits(model, w, xb)
    probs = _probabilities(model, z)
    if not model.is_segmentation and model.output_units == 1:
        probs = np.hstack([1.0 - probs, probs])
    return probs[0] if np.ndim(x) == 1 else probs


def _one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((len(labels), k))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _loss_and_output_grad(model: ModelSpec, z: np.ndarray, batch: SampleSet) -> Tuple[float, np.ndarray]:
    """Mean loss and its gradient with respect to the output pre-activations."""
    n = len(batch)
    if model.is_segmentation:
        p = expit(z)
        g = batch.labels
        inter = np.sum(p * g, axis=1)
        denom = np.sum(p, axis=1) + np.sum(g, axis=1) + DICE_EPS
        numer = 2.0 * inter + DICE_EPS
        loss = float(np.mean(1.0 - numer / denom))
        dp = (numer[:, None] - 2.0 * g * denom[:, None]) / (denom[:, None] ** 2)
        return loss, dp * p * (1.0 - p) / n
    if model.output_units == 1:
        zz = z[:, 0]
        y = batch.labels.astype(np.float64)
        loss = float(np.mean(np.logaddexp(0.0, zz) - y * zz))
        return loss, ((expit(zz) - y) / n)[:, None]
    y = _one_hot(batch.labels, model.n_classes)
    loss = float(-np.mean(np.sum(y * log_softmax(z, axis=1), axis=1)))
    return loss, (softmax(z, axis=1) - y) / n


def loss(model: ModelSpec, w: ParamVector, batch: SampleSet) -> float:
    """Soft Dice loss (segmentation) or cross-entropy (classification), averaged over the batch."""
    _check_batch(batch)
    w = _check_params(model, w)
    x = _check_features(model, batch.features)
    z, _ = _logits(model, w, x)
    value, _ = _loss_and_output_grad(model, z, batch)
    return value


def gradient(model: ModelSpec, w: ParamVector, batch: SampleSet) -> ParamVector:
    """Analytic gradient of `loss` with respect to w."""
    _check_batch(batch)
    w = _check_params(model, w)
    x = _check_features(model, batch.features)
    z, cache = _logits(model, w, x)
    _, dz = _loss_and_output_grad(model, z, batch)

    if model.family == ModelFamily.LOGISTIC:
        return np.concatenate([(x.T @ dz).ravel(), dz.sum(axis=0)])
    if model.family == ModelFamily.MLP1:
        hidden = cache
        _, _, w2, _ = _unpack(model, w)
        d_hidden = (dz @ w2.T) * (1.0 - hidden**2)
        return np.concatenate(
            [
                (x.T @ d_hidden).ravel(),
                d_hidden.sum(axis=0),
                (hidden.T @ dz).ravel(),
                dz.sum(axis=0),
            ]
        )
    nbr = cache
    return np.concatenate([[np.sum(dz * x), np.sum(dz * nbr), np.sum(dz)], dz.sum(axis=0)])


def evaluate_error(model: ModelSpec, w: ParamVector, dataset: SampleSet) -> float:
    """
    1 - mean Dice coefficient at threshold 0.5 (segmentation) or 1 - accuracy.

    Raises:
        EmptyDatasetError: dataset has no samples
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot evaluate on an empty dataset")
    probs = predict(model, w, dataset.features)
    if model.is_segmentation:
        pred = (probs >= DICE_THRESHOLD).astype(np.float64)
        return float(1.0 - np.mean(dice_coefficients(pred, dataset.labels)))
    correct = np.argmax(probs, axis=1) == dataset.labels
    return float(1.0 - np.mean(correct))
