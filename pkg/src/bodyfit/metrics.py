"""Evaluation metrics: MPJPE, PA-MPJPE, MVPE, mIoU.

Joint/vertex errors are reported in model units. MPJPE and MVPE subtract a
root (pelvis joint or centroid) before averaging; PA-MPJPE first solves the
least-squares similarity alignment (no reflection) and so can only tie or
improve on MPJPE for commensurate inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class AlignmentError(ValueError):
    """Point sets too degenerate for a well-posed similarity alignment."""


def mpjpe(pred_joints3d, gt_joints3d):
    """Mean per-joint distance after root-joint (index 0) alignment."""
    p = np.asarray(pred_joints3d, dtype=np.float64)
    g = np.asarray(gt_joints3d, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 2 or p.shape[1] != 3:
        raise ValueError("joint arrays must share shape (J, 3)")
    pc = p - p[0]
    gc = g - g[0]
    return float(np.linalg.norm(pc - gc, axis=1).mean())


def procrustes_align(pred, gt):
    """Least-squares similarity alignment of pred onto gt.

    Returns (scale, rotation, translation, aligned_pred) minimizing
    sum ||s·R·p_i + t − g_i||² with det(R) = +1 (no reflection).
    Rank-deficient (< 2) configurations raise AlignmentError.
    """
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 2 or p.shape[1] != 3:
        raise ValueError("point arrays must share shape (N, 3)")
    n = p.shape[0]
    if n < 3:
        raise AlignmentError("need at least 3 points, got %d" % n)
    mu_p = p.mean(axis=0)
    mu_g = g.mean(axis=0)
    pc = p - mu_p
    gc = g - mu_g
    var_p = (pc**2).sum() / n
    if var_p <= 0:
        raise AlignmentError("pred points are all coincident")
    cov = gc.T @ pc / n
    u, d, vt = np.linalg.svd(cov)
    scale_ref = max(d[0], 1.0)
    if d[1] <= 1e-12 * scale_ref:
        raise AlignmentError("point sets are rank-deficient (nearly collinear)")
    s_fix = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_fix[2] = -1.0
    rot = u @ np.diag(s_fix) @ vt
    scale = (d * s_fix).sum() / var_p
    trans = mu_g - scale * rot @ mu_p
    aligned = scale * p @ rot.T + trans
    return scale, rot, trans, aligned


def pa_mpjpe(pred_joints3d, gt_joints3d):
    """Mean joint distance after Procrustes similarity alignment."""
    _, _, _, aligned = procrustes_align(pred_joints3d, gt_joints3d)
    g = np.asarray(gt_joints3d, dtype=np.float64)
    return float(np.linalg.norm(aligned - g, axis=1).mean())


def mvpe(pred_vertices, gt_vertices, pred_root=None, gt_root=None, use_procrustes=False):
    """Mean per-vertex distance after root alignment.

    Roots default to the vertex centroids; pass joint-0 positions to root on
    the pelvis. use_procrustes switches to similarity alignment instead.
    """
    p = np.asarray(pred_vertices, dtype=np.float64)
    g = np.asarray(gt_vertices, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 2 or p.shape[1] != 3:
        raise ValueError("vertex arrays must share shape (V, 3)")
    if use_procrustes:
        _, _, _, aligned = procrustes_align(p, g)
        return float(np.linalg.norm(aligned - g, axis=1).mean())
    pr = p.mean(axis=0) if pred_root is None else np.asarray(pred_root, dtype=np.float64)
    gr = g.mean(axis=0) if gt_root is None else np.asarray(gt_root, dtype=np.float64)
    return float(np.linalg.norm((p - pr) - (g - gr), axis=1).mean())


def miou(mask_a, mask_b):
    """Intersection over union of masks binarized at 0.5; both-empty → 1."""
    a = np.asarray(mask_a, dtype=np.float64) > 0.5
    b = np.asarray(mask_b, dtype=np.float64) > 0.5
    if a.shape != b.shape:
        raise ValueError("mask shapes differ: %r vs %r" % (a.shape, b.shape))
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


@dataclass
class MetricReport:
    """Aggregate of the four metrics over a sample set.

    per_sample holds one dict per sample with the same four keys; the
    aggregate fields are their means. PA-MPJPE must not exceed MPJPE on any
    sample (alignment can only help or tie).
    """

    mpjpe: float
    pa_mpjpe: float
    mvpe: float
    miou: float
    count: int
    per_sample: list = field(default_factory=list)

    def __post_init__(self):
        for row in self.per_sample:
            if row["pa_mpjpe"] > row["mpjpe"] + 1e-9:
                raise ValueError(
                    "pa_mpjpe %.3g exceeds mpjpe %.3g on a sample"
                    % (row["pa_mpjpe"], row["mpjpe"])
                )


def aggregate_metrics(per_sample):
    """Build a MetricReport from per-sample metric dicts."""
    rows = list(per_sample)
    if not rows:
        raise ValueError("no samples to aggregate")

    def mean(key):
        return float(np.mean([row[key] for row in rows]))

    return MetricReport(
        mpjpe=mean("mpjpe"),
        pa_mpjpe=mean("pa_mpjpe"),
        mvpe=mean("mvpe"),
        miou=mean("miou"),
        count=len(rows),
        per_sample=rows,
    )
