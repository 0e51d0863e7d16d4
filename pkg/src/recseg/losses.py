"""Training objective: per-pixel cross-entropy plus a dice regularizer.

All functions operate on numpy arrays shaped H x W x (K+1): ``pred`` holds a
per-pixel class distribution, ``target`` a one-hot encoding. The analytic
gradient of each loss with respect to ``pred`` is provided alongside the
value so that optimization backends can be cross-checked against finite
differences.

Cross entropy averages over pixels:

    ce = -(1 / (H*W)) * sum_j sum_k target[j, k] * log(max(pred[j, k], eps))

Dice is computed per foreground class c and averaged:

    d_c = 1 - (2 * sum_j pred[j,c] * target[j,c] + s)
              / (sum_j pred[j,c] + sum_j target[j,c] + s)

The smoothing term ``s`` keeps d_c = 0 when a class is absent from both
masks, so the mean over classes stays well defined. The dice term is applied
only to samples with true pixel-level ground truth; pseudo-labeled samples
are trained with cross entropy alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CHANNEL_SUM_TOL = 1e-5


@dataclass(frozen=True)
class LossConfig:
    dice_weight: float = 1.0
    dice_smoothing: float = 1.0
    log_epsilon: float = 1e-7

    def __post_init__(self):
        if self.dice_weight < 0:
            raise ValueError("dice_weight must be >= 0")
        if self.dice_smoothing <= 0:
            raise ValueError("dice_smoothing must be > 0")
        if not (0 < self.log_epsilon < 1e-3):
            raise ValueError("log_epsilon must lie in (0, 1e-3)")


def _check_shapes(pred: np.ndarray, target: np.ndarray) -> None:
    if pred.ndim != 3 or target.ndim != 3:
        raise ValueError(
            f"pred and target must be H x W x (K+1); got {pred.shape} and {target.shape}"
        )
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")


def _check_normalized(pred: np.ndarray) -> None:
    sums = pred.sum(axis=-1)
    worst = float(np.abs(sums - 1.0).max())
    if worst > CHANNEL_SUM_TOL:
        raise ValueError(
            f"prediction channels must sum to 1 per pixel (worst deviation {worst:.2e})"
        )


def cross_entropy(pred: np.ndarray, target: np.ndarray, log_epsilon: float = 1e-7) -> float:
    """Mean per-pixel multi-class cross entropy; always >= 0."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_shapes(pred, target)
    _check_normalized(pred)
    h, w = pred.shape[:2]
    clamped = np.maximum(pred, log_epsilon)
    return float(-(target * np.log(clamped)).sum() / (h * w))


def cross_entropy_grad(
    pred: np.ndarray, target: np.ndarray, log_epsilon: float = 1e-7
) -> np.ndarray:
    """d(cross_entropy)/d(pred); zero where the clamp is active."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_shapes(pred, target)
    h, w = pred.shape[:2]
    clamped = np.maximum(pred, log_epsilon)
    grad = -(target / clamped) / (h * w)
    grad[pred < log_epsilon] = 0.0
    return grad


def dice_loss(pred: np.ndarray, target: np.ndarray, smoothing: float = 1.0) -> float:
    """Soft dice loss averaged over foreground classes; value in [0, 1)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_shapes(pred, target)
    k = pred.shape[-1] - 1
    if k < 1:
        raise ValueError("need at least one foreground channel")
    total = 0.0
    for c in range(1, k + 1):
        inter = float((pred[..., c] * target[..., c]).sum())
        sums = float(pred[..., c].sum() + target[..., c].sum())
        total += 1.0 - (2.0 * inter + smoothing) / (sums + smoothing)
    return total / k


def dice_loss_grad(pred: np.ndarray, target: np.ndarray, smoothing: float = 1.0) -> np.ndarray:
    """d(dice_loss)/d(pred); background channel receives zero gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_shapes(pred, target)
    k = pred.shape[-1] - 1
    grad = np.zeros_like(pred)
    for c in range(1, k + 1):
        inter = float((pred[..., c] * target[..., c]).sum())
        sums = float(pred[..., c].sum() + target[..., c].sum())
        numer = 2.0 * inter + smoothing
        denom = sums + smoothing
        # d/dp of (1 - numer/denom): numer' = 2*t, denom' = 1
        grad[..., c] = -(2.0 * target[..., c] * denom - numer) / (denom * denom) / k
    return grad


def combined_loss(
    pred: np.ndarray,
    target: np.ndarray,
    has_pixel_gt: bool,
    cfg: LossConfig = LossConfig(),
) -> float:
    """Cross entropy, plus the weighted dice term when true ground truth exists.

    Pseudo-labeled samples (``has_pixel_gt=False``) are scored by cross
    entropy alone; the dice regularizer is reserved for samples whose mask
    is real annotation.
    """
    ce = cross_entropy(pred, target, cfg.log_epsilon)
    if not has_pixel_gt or cfg.dice_weight == 0.0:
        return ce
    return ce + cfg.dice_weight * dice_loss(pred, target, cfg.dice_smoothing)
