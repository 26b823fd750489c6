"""Weak-perspective projection and mesh rasterization.

Produces the mesh-side intermediate representations for fitting: projected
2D joints, a normalized depth map, and hard or soft silhouettes. The camera
is weak-perspective only: p = s * (x, y) + t with z dropped; smaller
camera-space z is nearer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _raster_kernels as _k
from .body_model import pose_body


class EmptyRender(RuntimeError):
    """Raised when no pixel of the image is covered by the mesh."""


@dataclass
class Camera:
    """Weak-perspective camera: scale s, pixel translation t, image size.

    image_size is (H, W); both must be at least 16.
    """

    scale: float
    translation: np.ndarray
    image_size: tuple

    def __post_init__(self):
        self.scale = float(self.scale)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(2)
        h, w = self.image_size
        self.image_size = (int(h), int(w))
        if self.scale <= 0 or not np.isfinite(self.scale):
            raise ValueError("camera scale must be positive, got %r" % self.scale)
        if self.image_size[0] < 16 or self.image_size[1] < 16:
            raise ValueError("image_size must be at least 16x16, got %r" % (self.image_size,))
        if not np.all(np.isfinite(self.translation)):
            raise ValueError("camera translation must be finite")


@dataclass
class RenderOutput:
    """Silhouette (H, W) in [0,1], depth (H, W) in [0,1] with background 0,
    and optionally the projected joints (J, 2)."""

    silhouette: np.ndarray
    depth: np.ndarray
    joints2d: Optional[np.ndarray] = None


def project(points3d, cam):
    """Weak-perspective projection of (N, 3) points to (N, 2) pixels."""
    pts = np.asarray(points3d, dtype=np.float64)
    return cam.scale * pts[..., :2] + cam.translation


project_joints = project


def project_jacobian(points3d):
    """d(projection)/d(s, tx, ty) per point: (N, 2, 3).

    Row layout: d p_x / d(s, tx, ty) = (x, 1, 0); d p_y = (y, 0, 1).
    """
    pts = np.asarray(points3d, dtype=np.float64)
    n = pts.shape[0]
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = pts[:, 0]
    jac[:, 1, 0] = pts[:, 1]
    jac[:, 0, 1] = 1.0
    jac[:, 1, 2] = 1.0
    return jac


def default_soft_sigma(image_size):
    """One pixel at 256 resolution, scaled proportionally."""
    return max(image_size) / 256.0


def _as_face_array(faces):
    f = np.ascontiguousarray(np.asarray(faces, dtype=np.int64))
    if f.ndim != 2 or f.shape[1] != 3:
        raise ValueError("faces must be (F, 3), got %r" % (f.shape,))
    return f


def rasterize_hard_batch(xy, z, faces, image_size, out=None):
    """Raw z-buffer pass over a batch of projected meshes.

    xy: (K, V, 2) pixels, z: (K, V). Returns (zbuf, fidx): zbuf is +inf on
    background, fidx is -1 on background else the covering face index.
    Pass a previous call's (zbuf, fidx) pair as `out` to reuse its storage;
    it is reset in place when the shapes still match.
    """
    h, w = image_size
    xy = np.ascontiguousarray(xy, dtype=np.float64)
    z = np.ascontiguousarray(z, dtype=np.float64)
    faces = _as_face_array(faces)
    k = xy.shape[0]
    if out is not None and out[0].shape == (k, h, w):
        zbuf, fidx = out
        zbuf.fill(np.inf)
        fidx.fill(-1)
    else:
        zbuf = np.full((k, h, w), np.inf)
        fidx = np.full((k, h, w), -1, dtype=np.int32)
    _k.hard_raster_batch(xy, z, faces, h, w, zbuf, fidx)
    return zbuf, fidx


def normalize_depth(zbuf, covered):
    """Affinely map covered z to [0,1], nearest -> 0; background -> 0.

    A single distinct z value collapses to 0 everywhere on the foreground.
    """
    depth = np.zeros(zbuf.shape)
    if not covered.any():
        return depth
    zs = zbuf[covered]
    zmin = zs.min()
    zmax = zs.max()
    if zmax > zmin:
        depth[covered] = (zbuf[covered] - zmin) / (zmax - zmin)
    return depth


def rasterize_hard(vertices, faces, cam):
    """Binary-coverage render with z-buffered normalized depth.

    Coverage: pixel center inside a projected triangle under the top-left
    fill rule; nearest z wins, exact ties keep the lower face index.
    Raises EmptyRender when nothing lands inside the image.
    """
    verts = np.asarray(vertices, dtype=np.float64)
    xy = project(verts, cam)[None]
    z = verts[None, :, 2]
    zbuf, fidx = rasterize_hard_batch(xy, z, faces, cam.image_size)
    covered = fidx[0] >= 0
    if not covered.any():
        raise EmptyRender("mesh projects entirely outside the %r image" % (cam.image_size,))
    return RenderOutput(
        silhouette=covered.astype(np.float64),
        depth=normalize_depth(zbuf[0], covered),
    )


def rasterize_soft_batch(xy, faces, image_size, sigma):
    """Soft silhouettes for a batch of projected meshes: (K, H, W)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive, got %r" % sigma)
    h, w = image_size
    xy = np.ascontiguousarray(xy, dtype=np.float64)
    faces = _as_face_array(faces)
    log_acc = np.zeros((xy.shape[0], h, w))
    _k.soft_raster_batch(xy, faces, h, w, float(sigma), log_acc)
    return -np.expm1(log_acc)


def soft_weighted_sums(xy, faces, image_size, sigma, weight_field):
    """sum_p w(p) * softmask_k(p) for each projected mesh k: (K,) array.

    Exact (not approximate): zero-weight pixels contribute nothing, so the
    kernel never evaluates them. Cost scales with the weight support.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive, got %r" % sigma)
    h, w = image_size
    xy = np.ascontiguousarray(xy, dtype=np.float64)
    faces = _as_face_array(faces)
    weights = np.ascontiguousarray(weight_field, dtype=np.float64)
    if weights.shape != (h, w):
        raise ValueError("weight_field shape %r != image %r" % (weights.shape, (h, w)))
    nz_r, nz_c = np.nonzero(weights)
    out = np.zeros(xy.shape[0])
    scratch = np.zeros((h, w))
    _k.soft_weighted_sum_batch(
        xy, faces, h, w, float(sigma), weights,
        np.ascontiguousarray(nz_r), np.ascontiguousarray(nz_c), scratch, out,
    )
    return out


def soft_log_base(xy, faces, image_size, sigma, weight_field):
    """Per-pixel soft-mask log accumulator of one mesh at weighted pixels.

    Returns (log_acc, total): log_acc is (H, W) holding sum_f log(1 - s_f(p))
    wherever weight_field != 0 (0 elsewhere), evaluated without saturation
    shortcuts so incremental edits against it stay exact; total is
    sum_p w(p) * softmask(p), matching soft_weighted_sums on the same mesh.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive, got %r" % sigma)
    h, w = image_size
    xy = np.ascontiguousarray(xy, dtype=np.float64)
    faces = _as_face_array(faces)
    weights = np.ascontiguousarray(weight_field, dtype=np.float64)
    if weights.shape != (h, w):
        raise ValueError("weight_field shape %r != image %r" % (weights.shape, (h, w)))
    nz_r, nz_c = np.nonzero(weights)
    log_acc = np.zeros((h, w))
    total = _k.soft_log_base_kernel(
        xy, faces, h, w, float(sigma), weights,
        np.ascontiguousarray(nz_r), np.ascontiguousarray(nz_c), log_acc,
    )
    return log_acc, float(total)


def soft_weighted_sums_delta(
    base_xy, probe_xy, probe_faces, faces, image_size, sigma, weight_field,
    log_acc, base_total,
):
    """soft_weighted_sums for probes that each move only a subset of faces.

    probe_faces[k] lists the faces whose projected vertices differ between
    base_xy (V, 2) and probe_xy[k]; all other faces must coincide exactly.
    log_acc/base_total must come from soft_log_base at base_xy with the same
    weight field. Cost scales with the moved faces instead of the full mesh.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive, got %r" % sigma)
    h, w = image_size
    base_xy = np.ascontiguousarray(base_xy, dtype=np.float64)
    probe_xy = np.ascontiguousarray(probe_xy, dtype=np.float64)
    faces = _as_face_array(faces)
    weights = np.ascontiguousarray(weight_field, dtype=np.float64)
    if weights.shape != (h, w):
        raise ValueError("weight_field shape %r != image %r" % (weights.shape, (h, w)))
    k = probe_xy.shape[0]
    if len(probe_faces) != k:
        raise ValueError("need one face list per probe (%d != %d)" % (len(probe_faces), k))
    lengths = np.array([len(ids) for ids in probe_faces], dtype=np.int64)
    off = np.zeros(k + 1, dtype=np.int64)
    np.cumsum(lengths, out=off[1:])
    ids = (
        np.concatenate([np.asarray(f, dtype=np.int64) for f in probe_faces])
        if k and off[-1]
        else np.zeros(0, dtype=np.int64)
    )
    out = np.empty(k)
    if k:
        _k.soft_delta_batch(
            base_xy, probe_xy, faces, ids, off, h, w, float(sigma), weights,
            np.ascontiguousarray(log_acc, dtype=np.float64), float(base_total),
            np.full((h, w), -1, dtype=np.int32), np.empty((h, w)),
            np.empty(h * w, dtype=np.int64), out,
        )
    return out


def rasterize_soft(vertices, faces, cam, sigma=None):
    """Differentiable-in-expectation silhouette in [0,1].

    Per pixel: 1 - prod_f (1 - sigmoid(d_f / sigma)) with d_f the signed 2D
    distance to projected triangle f (positive inside); triangles farther
    than 3*sigma outside the pixel contribute factor 1.
    """
    if sigma is None:
        sigma = default_soft_sigma(cam.image_size)
    verts = np.asarray(vertices, dtype=np.float64)
    xy = project(verts, cam)[None]
    return rasterize_soft_batch(xy, faces, cam.image_size, sigma)[0]


def render_body(model, params, image_size):
    """Pose the model with params and render all three representations.

    The weak-perspective camera is taken from the params themselves
    (scale, translation). Returns (RenderOutput, PosedBody).
    """
    posed = pose_body(model, params)
    cam = Camera(scale=params.scale, translation=params.translation, image_size=image_size)
    out = rasterize_hard(posed.vertices, model.faces, cam)
    out.joints2d = project(posed.joints3d, cam)
    return out, posed


def default_camera(model, image_size, fill=0.8):
    """Camera that centers the rest-pose body at `fill` of the image height."""
    h, w = int(image_size[0]), int(image_size[1])
    s = fill * h / model.rest_height()
    return Camera(scale=s, translation=np.array([w / 2.0, h / 2.0]), image_size=(h, w))
