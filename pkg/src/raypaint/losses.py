"""Pixel-space objectives: stage-1 color/feature/depth reconstruction and the
stage-2 unmasked-region preservation loss.

All losses are sums over the ray batch of squared L2 norms (hatted = the
field's render, unhatted = supervision). Each *_grad returns the adjoint
with respect to the prediction, for the renderer's backward pass.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .validation import check_same_shape


@dataclass(frozen=True)
class LossWeights:
    feature: float = 1.0
    depth: float = 0.1
    unmask: float = 100.0
    clip: float = 1.0

    def __post_init__(self):
        for name in ("feature", "depth", "unmask", "clip"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"lambda_{name} must be >= 0")


@dataclass
class PixelBatch:
    """Predicted / ground-truth values for a ray batch; mask optional."""
    color_pred: np.ndarray = None      # (R, 3)
    color_gt: np.ndarray = None
    feature_pred: np.ndarray = None    # (R, D)
    feature_gt: np.ndarray = None
    depth_pred: np.ndarray = None      # (R,)
    depth_gt: np.ndarray = None
    mask: np.ndarray = None            # (R,) in [0, 1]


def _sq_sum(pred, gt, name):
    pred, gt = check_same_shape(pred, gt, f"{name}_pred", f"{name}_gt")
    diff = pred.astype(np.float64) - gt.astype(np.float64)
    return float(np.sum(diff * diff)), diff


def color_loss(pred, gt, normalize=False):
    """sum_r ||C(r) - C_hat(r)||^2 over the batch."""
    val, _ = _sq_sum(pred, gt, "color")
    return val / len(pred) if normalize else val


def color_loss_grad(pred, gt, normalize=False):
    val, diff = _sq_sum(pred, gt, "color")
    scale = 1.0 / len(pred) if normalize else 1.0
    return val * scale, 2.0 * scale * diff


def feature_loss(pred, gt, normalize=False):
    val, _ = _sq_sum(pred, gt, "feature")
    return val / len(pred) if normalize else val


def feature_loss_grad(pred, gt, normalize=False):
    val, diff = _sq_sum(pred, gt, "feature")
    scale = 1.0 / len(pred) if normalize else 1.0
    return val * scale, 2.0 * scale * diff


def depth_loss(pred, gt, normalize=False):
    val, _ = _sq_sum(pred, gt, "depth")
    return val / len(pred) if normalize else val


def depth_loss_grad(pred, gt, normalize=False):
    val, diff = _sq_sum(pred, gt, "depth")
    scale = 1.0 / len(pred) if normalize else 1.0
    return val * scale, 2.0 * scale * diff


def stage1_loss(batch, weights, normalize=False):
    """color + lambda_feature * feature + lambda_depth * depth."""
    total = color_loss(batch.color_pred, batch.color_gt, normalize)
    parts = {"color": total, "feature": 0.0, "depth": 0.0}
    if weights.feature != 0.0:
        parts["feature"] = feature_loss(batch.feature_pred, batch.feature_gt, normalize)
        total += weights.feature * parts["feature"]
    if weights.depth != 0.0:
        parts["depth"] = depth_loss(batch.depth_pred, batch.depth_gt, normalize)
        total += weights.depth * parts["depth"]
    return total, parts


def stage1_loss_grad(batch, weights, normalize=False):
    """Returns (total, parts, d_color, d_feature, d_depth)."""
    cval, dcol = color_loss_grad(batch.color_pred, batch.color_gt, normalize)
    total = cval
    parts = {"color": cval, "feature": 0.0, "depth": 0.0}
    dfeat = ddep = None
    if weights.feature != 0.0:
        fval, dfeat = feature_loss_grad(batch.feature_pred, batch.feature_gt, normalize)
        parts["feature"] = fval
        total += weights.feature * fval
        dfeat = weights.feature * dfeat
    if weights.depth != 0.0:
        dval, ddep = depth_loss_grad(batch.depth_pred, batch.depth_gt, normalize)
        parts["depth"] = dval
        total += weights.depth * dval
        ddep = weights.depth * ddep
    return total, parts, dcol, dfeat, ddep


def unmask_loss(pred, gt, mask, normalize=False):
    """Squared color error restricted to pixels with mask < 0.5; masked
    pixels contribute exactly zero. gt is the original (pre-edit) image.
    """
    pred, gt = check_same_shape(pred, gt, "color_pred", "color_gt")
    keep = (np.asarray(mask).reshape(len(pred)) < 0.5).astype(np.float64)
    diff = (pred.astype(np.float64) - gt.astype(np.float64)) * keep[:, None]
    val = float(np.sum(diff * diff))
    return val / len(pred) if normalize else val


def unmask_loss_grad(pred, gt, mask, normalize=False):
    pred, gt = check_same_shape(pred, gt, "color_pred", "color_gt")
    keep = (np.asarray(mask).reshape(len(pred)) < 0.5).astype(np.float64)
    diff = (pred.astype(np.float64) - gt.astype(np.float64)) * keep[:, None]
    val = float(np.sum(diff * diff))
    scale = 1.0 / len(pred) if normalize else 1.0
    return val * scale, 2.0 * scale * diff
