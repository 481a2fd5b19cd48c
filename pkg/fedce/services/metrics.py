"""
Performance and fairness metrics.
"""
from typing import Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.special import betainc

from fedce.exceptions.errors import DimensionMismatchError, MetricError
from fedce.models.reports import FairnessReport

logger = structlog.get_logger(__name__)


def _vector(x: Sequence[float]) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).ravel()


def _pair(x: Sequence[float], y: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    xv, yv = _vector(x), _vector(y)
    if xv.shape != yv.shape:
        raise DimensionMismatchError(f"length mismatch: {xv.size} vs {yv.size}")
    return xv, yv


def dice_coefficients(pred_masks: np.ndarray, gt_masks: np.ndarray) -> np.ndarray:
    """Row-wise 2|P∩G| / (|P| + |G|) for binary masks; two empty masks score 1."""
    pred = np.asarray(pred_masks, dtype=np.float64)
    gt = np.asarray(gt_masks, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionMismatchError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    pred = pred.reshape(pred.shape[0], -1) if pred.ndim > 1 else pred[None, :]
    gt = gt.reshape(pred.shape)
    inter = np.sum(pred * gt, axis=1)
    size = np.sum(pred, axis=1) + np.sum(gt, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = np.where(size > 0, 2.0 * inter / np.where(size > 0, size, 1.0), 1.0)
    return scores


def dice_coefficient(pred_mask: np.ndarray, gt_mask: np.ndarray) -> float:
    pred = np.asarray(pred_mask, dtype=np.float64)
    gt = np.asarray(gt_mask, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionMismatchError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return float(dice_coefficients(pred.ravel()[None, :], gt.ravel()[None, :])[0])


def pearson(x: Sequence[float], y: Sequence[float]) -> Tuple[float, float]:
    """
    Sample Pearson r with its two-tailed p-value.

    The p-value is the t-distribution tail with n - 2 degrees of freedom,
    expressed through the regularized incomplete beta I_{1-r^2}((n-2)/2, 1/2).

    Raises:
        MetricError: fewer than 3 points or zero variance in either input
    """
    xv, yv = _pair(x, y)
    n = xv.size
    if n < 3:
        raise MetricError(f"pearson needs at least 3 points, got {n}")
    xc, yc = xv - xv.mean(), yv - yv.mean()
    sx, sy = np.sqrt(np.sum(xc**2)), np.sqrt(np.sum(yc**2))
    if sx == 0.0 or sy == 0.0:
        raise MetricError("pearson is undefined for a zero-variance input")
    r = float(np.clip(np.sum(xc * yc) / (sx * sy), -1.0, 1.0))
    return r, pearson_p_value(r, n)


def pearson_p_value(r: float, n: int) -> float:
    if n < 3:
        raise MetricError(f"p-value needs n >= 3, got {n}")
    df = n - 2
    x = max(0.0, 1.0 - r * r)
    return float(np.clip(betainc(df / 2.0, 0.5, x), 0.0, 1.0))


def euclidean(x: Sequence[float], y: Sequence[float]) -> float:
    xv, yv = _pair(x, y)
    return float(np.linalg.norm(xv - yv))


def cosine_sim(x: Sequence[float], y: Sequence[float]) -> float:
    xv, yv = _pair(x, y)
    nx, ny = np.linalg.norm(xv), np.linalg.norm(yv)
    if nx == 0.0 or ny == 0.0:
        raise MetricError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(xv, yv) / (nx * ny), -1.0, 1.0))


def client_std(scores: Sequence[float]) -> float:
    """Population standard deviation of per-client scores."""
    v = _vector(scores)
    if v.size < 2:
        raise MetricError(f"client_std needs at least 2 clients, got {v.size}")
    return float(np.std(v))


def pearson_or_none(
    x: Sequence[float], y: Sequence[float], label: str = ""
) -> Tuple[Optional[float], Optional[float]]:
    """Pearson r and p-value, or (None, None) when either input has zero variance."""
    try:
        return pearson(x, y)
    except MetricError as e:
        logger.warning("pearson_undefined", label=label, reason=str(e))
        return None, None


def build_fairness_report(
    method_scores: Sequence[float], standalone_scores: Sequence[float], method: str = ""
) -> FairnessReport:
    """Per-client scores of a method compared against the standalone score vector."""
    ms, ss = _pair(method_scores, standalone_scores)
    r, p_value = pearson_or_none(ms, ss, method)
    return FairnessReport(
        method=method,
        scores=[float(s) for s in ms],
        mean=float(np.mean(ms)),
        std=client_std(ms),
        pearson_r=r,
        p_value=p_value,
        euclidean_distance=euclidean(ms, ss),
        cosine_similarity=cosine_sim(ms, ss),
    )
