"""Loss functions for fitting and for provider-quality checks.

Fit-time terms compare a rendered body against a target bundle: depth MAE
over the union of foreground supports, silhouette MAE over all pixels, and
confidence-weighted joint distances. Train-time terms are the heatmap MSE,
scale-invariant log depth loss, and mask L1. All reductions are means, so
weights transfer across image sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class PolarityMismatch(ValueError):
    """Depth maps with different polarity tags were almost compared."""


class DomainError(ValueError):
    """An input lies outside a loss's mathematical domain."""


@dataclass
class LossWeights:
    """Balancing weights for the three fit terms."""

    lambda_d: float = 5.0
    lambda_m: float = 5.0
    lambda_j: float = 10.0

    def __post_init__(self):
        for name in ("lambda_d", "lambda_m", "lambda_j"):
            v = float(getattr(self, name))
            setattr(self, name, v)
            if v < 0 or not np.isfinite(v):
                raise ValueError("%s must be a nonnegative real, got %r" % (name, v))
        if self.lambda_d == 0 and self.lambda_m == 0 and self.lambda_j == 0:
            raise ValueError("at least one loss weight must be positive")


def loss_depth_fit(g_d, p_d, g_polarity="near_zero", p_polarity="near_zero"):
    """Mean absolute depth difference over the union of foreground supports.

    Support is where either map is > 0. Polarity tags must agree; an empty
    union yields 0.
    """
    if g_polarity != p_polarity:
        raise PolarityMismatch("target %r vs render %r" % (g_polarity, p_polarity))
    g = np.asarray(g_d, dtype=np.float64)
    p = np.asarray(p_d, dtype=np.float64)
    if g.shape != p.shape:
        raise ValueError("depth shapes differ: %r vs %r" % (g.shape, p.shape))
    support = (g > 0) | (p > 0)
    if not support.any():
        return 0.0
    return float(np.abs(g[support] - p[support]).mean())


def loss_mask_fit(g_m, p_m):
    """Mean absolute silhouette difference over all pixels."""
    g = np.asarray(g_m, dtype=np.float64)
    p = np.asarray(p_m, dtype=np.float64)
    if g.shape != p.shape:
        raise ValueError("mask shapes differ: %r vs %r" % (g.shape, p.shape))
    return float(np.abs(g - p).mean())


def loss_joints_fit(g_xy, g_conf, p_xy):
    """Confidence-weighted mean of per-joint Euclidean distances.

    With all confidences equal this is the plain mean of 2-norms. All-zero
    confidence yields 0.
    """
    g = np.asarray(g_xy, dtype=np.float64)
    p = np.asarray(p_xy, dtype=np.float64)
    conf = np.asarray(g_conf, dtype=np.float64)
    if g.shape != p.shape:
        raise ValueError("joint shapes differ: %r vs %r" % (g.shape, p.shape))
    if conf.shape != (g.shape[0],):
        raise ValueError("confidence must be (J,)")
    total = conf.sum()
    if total <= 0:
        return 0.0
    dist = np.linalg.norm(g - p, axis=1)
    return float((conf * dist).sum() / total)


def total_fit_loss(bundle, render, weights=None):
    """Weighted fit objective and its per-term breakdown.

    bundle: RepBundle targets. render: RenderOutput with joints2d set.
    Returns (total, {"depth", "mask", "joints", "total"}).
    """
    if weights is None:
        weights = LossWeights()
    g_xy, g_conf = bundle.coordinates()
    l_d = loss_depth_fit(bundle.depth, render.depth, bundle.depth_polarity, "near_zero")
    l_m = loss_mask_fit(bundle.silhouette, render.silhouette)
    if render.joints2d is None:
        raise ValueError("render carries no projected joints")
    p_xy = render.joints2d
    if g_xy.shape[0] != p_xy.shape[0]:
        # Heatmap-decoded targets are padded to 24 channels; align by prefix
        # when the model has fewer joints (extra channels carry conf 0).
        if g_xy.shape[0] > p_xy.shape[0] and np.all(g_conf[p_xy.shape[0]:] == 0):
            g_xy = g_xy[: p_xy.shape[0]]
            g_conf = g_conf[: p_xy.shape[0]]
        else:
            raise ValueError(
                "target has %d joints, render %d" % (g_xy.shape[0], p_xy.shape[0])
            )
    l_j = loss_joints_fit(g_xy, g_conf, p_xy)
    total = weights.lambda_d * l_d + weights.lambda_m * l_m + weights.lambda_j * l_j
    return total, {"depth": l_d, "mask": l_m, "joints": l_j, "total": total}


# ---------------------------------------------------------------------------
# Training-side losses (provider-quality checks)


def loss_pose_train(pred_heatmaps, gt_heatmaps):
    """Mean squared error over all heatmap entries."""
    p = np.asarray(pred_heatmaps, dtype=np.float64)
    g = np.asarray(gt_heatmaps, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError("heatmap shapes differ: %r vs %r" % (p.shape, g.shape))
    return float(np.mean((p - g) ** 2))


def loss_depth_train(pred_depth, gt_depth, foreground_mask):
    """Scale-invariant log depth loss over the foreground.

    With residuals r_i = log(gt_i) - log(pred_i):
    loss = sqrt( mean(r^2) - 0.5 * mean(r)^2 ). A uniform scaling by c gives
    exactly |ln c| / sqrt(2); it is scale-sensitive by design (the half
    variance weight). Empty foreground yields 0.
    """
    p = np.asarray(pred_depth, dtype=np.float64)
    g = np.asarray(gt_depth, dtype=np.float64)
    m = np.asarray(foreground_mask, dtype=bool)
    if p.shape != g.shape or m.shape != p.shape:
        raise ValueError("depth/mask shapes differ")
    if not m.any():
        return 0.0
    pv = p[m]
    gv = g[m]
    if (pv <= 0).any() or (gv <= 0).any():
        raise DomainError("nonpositive depth on foreground; log undefined")
    r = np.log(gv) - np.log(pv)
    val = np.mean(r**2) - 0.5 * np.mean(r) ** 2
    return float(np.sqrt(max(val, 0.0)))


def loss_mask_train(gt_mask, pred_mask):
    """Mean absolute silhouette difference."""
    return loss_mask_fit(gt_mask, pred_mask)
