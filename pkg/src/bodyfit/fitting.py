"""Iterative fitting of body parameters to a target bundle.

The objective is the weighted sum of depth, silhouette, and joint terms,
always *reported* from the hard renderer. Gradients are a hybrid: the joint
term is analytic in (s, t) and finite-differenced through forward kinematics
for (theta, beta); the depth and mask terms differentiate a frozen
linearization — per-pixel residual signs, supports, and the hard raster's
pixel -> face assignment are fixed at the evaluation point, and probes move
only the interpolated depth / soft-mask values, which are smooth in the
parameters. At a perfect fit every sign field vanishes, so the gradient is
exactly zero.

Optimization runs in normalized internal coordinates (beta, theta, log s,
t / image size) so one Adam step size suits all groups.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .body_model import BodyParams, _shape, forward, rodrigues
from .losses import LossWeights, total_fit_loss
from .rendering import (
    Camera,
    EmptyRender,
    project_jacobian,
    rasterize_hard_batch,
    render_body,
    soft_log_base,
    soft_weighted_sums,
    soft_weighted_sums_delta,
)

PARAM_GROUPS = ("beta", "theta", "theta_root", "scale", "translation")
_ALL_GROUPS = ("beta", "theta", "scale", "translation")


class InitError(ValueError):
    """Initialization cannot produce usable starting parameters."""


class NumericError(RuntimeError):
    """A gradient probe stayed non-finite after the FD step was halved."""


@dataclass
class FDSteps:
    """Central-difference step sizes, in each group's natural units."""

    beta: float = 1e-3
    theta: float = 1e-3  # radians
    scale_rel: float = 1e-4  # multiplied by the current scale
    translation: float = 0.25  # pixels

    def __post_init__(self):
        for name in ("beta", "theta", "scale_rel", "translation"):
            if getattr(self, name) <= 0:
                raise ValueError("%s FD step must be positive" % name)


@dataclass
class FitConfig:
    iterations: int = 40
    optimizer: str = "adam"
    step_size: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    fd_steps: FDSteps = field(default_factory=FDSteps)
    stages: Optional[list] = None  # [(group names, iteration count), ...]
    soft_sigma: float = 1.0  # pixels
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1, got %d" % self.iterations)
        if self.optimizer not in ("adam", "gradient-descent-with-backtracking"):
            raise ValueError("unknown optimizer %r" % self.optimizer)
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.stages is None:
            first = min(10, max(self.iterations - 1, 1)) if self.iterations > 1 else 0
            self.stages = []
            if first:
                self.stages.append((("scale", "translation", "theta_root"), first))
            self.stages.append((_ALL_GROUPS, self.iterations - first))
        total = 0
        for groups, count in self.stages:
            for g in groups:
                if g not in PARAM_GROUPS:
                    raise ValueError("unknown parameter group %r" % g)
            if count < 0:
                raise ValueError("stage iteration count must be >= 0")
            total += count
        if total != self.iterations:
            raise ValueError(
                "stage counts sum to %d but iterations is %d" % (total, self.iterations)
            )


@dataclass
class FitReport:
    initial_params: BodyParams
    final_params: BodyParams
    loss_trace: list
    breakdown_trace: list
    best_iteration: int
    converged: bool
    wall_time_s: float

    def to_dict(self):
        return {
            "initial_params": self.initial_params.to_dict(),
            "final_params": self.final_params.to_dict(),
            "loss_trace": [float(v) for v in self.loss_trace],
            "breakdown_trace": [
                {k: float(v) for k, v in row.items()} for row in self.breakdown_trace
            ],
            "best_iteration": self.best_iteration,
            "converged": bool(self.converged),
            "wall_time_s": float(self.wall_time_s),
        }


# ---------------------------------------------------------------------------
# Initialization


def projected_area_centroid(model):
    """Area centroid of the rest template's orthographic footprint.

    Each face contributes its absolute projected xy area; for a watertight
    surface seen front-on every covered point is hit by a front and a back
    face, so this matches the silhouette's area centroid up to self-overlap.
    Used to turn a silhouette centroid into a body-origin estimate.
    """
    v = model.template_vertices[:, :2]
    a, b, c = (v[model.faces[:, i]] for i in range(3))
    e1, e2 = b - a, c - a
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    total = area.sum()
    if total <= 0:
        return np.zeros(2)
    return (area[:, None] * (a + b + c) / 3.0).sum(axis=0) / total


def initialize_params(bundle, model, min_scale=None):
    """Rest pose placed by silhouette moments.

    scale = silhouette bounding-box height over the template's rest height;
    translation = foreground centroid (pixel centers) pulled back by the
    template's own projected-area centroid, since limbs weight the
    silhouette differently than the mean-centered vertex cloud. A
    silhouette whose bounding box is a single row is degenerate: InitError,
    unless min_scale is given, in which case the scale is clamped to it.
    """
    fg = np.asarray(bundle.silhouette) > 0.5
    rows, cols = np.nonzero(fg)
    if rows.size == 0:
        raise InitError("empty silhouette: nothing to initialize from")
    box_h = int(rows.max() - rows.min() + 1)
    degenerate = box_h < 2
    if degenerate and min_scale is None:
        raise InitError("degenerate silhouette (bounding-box height %d)" % box_h)
    s = box_h / model.rest_height()
    if min_scale is not None:
        s = max(s, float(min_scale))
    centroid = np.array([cols.mean() + 0.5, rows.mean() + 0.5])
    t = centroid - s * projected_area_centroid(model)
    return BodyParams(
        beta=np.zeros(model.num_shape_coeffs),
        theta=np.zeros((model.num_joints, 3)),
        scale=s,
        translation=t,
    )


# ---------------------------------------------------------------------------
# Frozen-linearization objective and its gradient


def _erode1(mask):
    return ndimage.minimum_filter(
        mask.astype(np.float64), size=3, mode="constant", cval=0.0
    ) > 0.5


def _theta_moved_faces(model):
    """Per joint-angle row: indices of the faces its rotation can displace.

    A vertex follows row r iff it has skinning support on any joint in the
    subtree rooted at r; a face moves iff any of its vertices does.
    """
    j_dim = model.num_joints
    parents = np.asarray(model.kinematic_parents)
    subtree = np.zeros((j_dim, j_dim), dtype=bool)
    for j in range(j_dim):
        a = j
        while a >= 0:
            subtree[a, j] = True
            a = int(parents[a])
    support = model.skinning_weights > 1e-12  # (V, J)
    faces = model.faces
    return [
        np.flatnonzero(support[:, subtree[r]].any(axis=1)[faces].any(axis=1)).astype(
            np.int64
        )
        for r in range(j_dim)
    ]


def _interp_z(xy_batch, z_batch, tri, pix):
    """Barycentric z of fixed (pixel, triangle) pairs at probe geometry.

    tri: (N, 3) vertex ids, pix: (N, 2) pixel centers (x, y). Returns (K, N)
    interpolated depths — a smooth rational function of vertex positions,
    matching the hard rasterizer's interpolation wherever the pixel is still
    covered by its assigned face.
    """
    ax, ay = xy_batch[:, tri[:, 0], 0], xy_batch[:, tri[:, 0], 1]
    bx, by = xy_batch[:, tri[:, 1], 0], xy_batch[:, tri[:, 1], 1]
    cx, cy = xy_batch[:, tri[:, 2], 0], xy_batch[:, tri[:, 2], 1]
    px, py = pix[None, :, 0], pix[None, :, 1]
    w0 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    w1 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
    w2 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
    area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    za = z_batch[:, tri[:, 0]]
    zb = z_batch[:, tri[:, 1]]
    zc = z_batch[:, tri[:, 2]]
    return (w1 * za + w2 * zb + w0 * zc) / area2


@dataclass
class FrozenObjective:
    """Objective with signs, supports, and raster structure frozen at a base.

    value() = lambda_d * sum(sign_d * depth)/|U0| + lambda_m * sum(sign_m *
    softmask)/(H*W) + lambda_j * L_J(live), plus a constant absorbed away.
    The depth term evaluates the base render's pixel -> face assignment and
    normalization anchors at the probe geometry instead of re-rasterizing,
    so the functional is smooth at finite-difference scales; its gradient at
    the base point equals the true objective's descent direction under the
    frozen-support convention.
    """

    model: object
    bundle: object
    cam_size: tuple
    weights: LossWeights
    sigma: float
    sign_mask: np.ndarray  # sign(P_m - G_m) / (H*W)
    target_xy: np.ndarray
    residual_dirs: np.ndarray  # (J, 2): conf_j/C * unit residual at base
    depth_pix: np.ndarray  # (N, 2) support pixel centers (x, y)
    depth_tri: np.ndarray  # (N, 3) vertex ids of each pixel's covering face
    depth_sign: np.ndarray  # (N,) sign / |U0| at the support pixels
    norm_pix: np.ndarray  # (2, 2) pixel centers of the base (zmin, zmax)
    norm_tri: np.ndarray  # (2, 3) their covering faces
    norm_degenerate: bool  # base z-range was empty; normalize by 1 instead

    def mask_sums(self, xy_batch):
        """S_mask for a batch of projected meshes via the full soft kernel."""
        return (
            soft_weighted_sums(
                xy_batch, self.model.faces, self.cam_size, self.sigma, self.sign_mask
            )
            if self.weights.lambda_m != 0
            else np.zeros(xy_batch.shape[0])
        )

    def depth_sums(self, xy_batch, z_batch):
        """S_depth for a batch of projected meshes over the frozen structure.

        Each support pixel re-interpolates its frozen face's z at the probe
        geometry, normalized by the (re-evaluated) frozen extreme pixels.
        """
        k = xy_batch.shape[0]
        if self.weights.lambda_d == 0 or self.depth_sign.size == 0:
            return np.zeros(k)
        z_sup = _interp_z(xy_batch, z_batch, self.depth_tri, self.depth_pix)
        z_ext = _interp_z(xy_batch, z_batch, self.norm_tri, self.norm_pix)
        zmin = z_ext[:, :1]
        rng = np.ones((k, 1)) if self.norm_degenerate else z_ext[:, 1:] - zmin
        return ((z_sup - zmin) / rng) @ self.depth_sign

    def batch_terms(self, xy_batch, z_batch):
        """(S_depth, S_mask) for a batch of projected meshes."""
        return self.depth_sums(xy_batch, z_batch), self.mask_sums(xy_batch)

    def value(self, beta, theta, scale, translation):
        """Evaluate the frozen functional at raw (uncanonicalized) params."""
        posed = forward(self.model, beta, theta)
        xy = scale * posed.vertices[:, :2] + translation
        s_d, s_m = self.batch_terms(xy[None], posed.vertices[None, :, 2])
        p_xy = scale * posed.joints3d[:, :2] + translation
        dist = np.linalg.norm(p_xy - self.target_xy, axis=1)
        conf_dirs = np.linalg.norm(self.residual_dirs, axis=1)
        l_j = float((conf_dirs * dist).sum())
        return (
            self.weights.lambda_d * float(s_d[0])
            + self.weights.lambda_m * float(s_m[0])
            + self.weights.lambda_j * l_j
        )


def build_frozen_objective(params, model, bundle, cam_size, cfg):
    """Render the base point and freeze signs/supports for gradient work."""
    h, w = cam_size
    render, posed = render_body(model, params, cam_size)
    g_xy, g_conf = bundle.coordinates()
    if g_xy.shape[0] != render.joints2d.shape[0]:
        if g_xy.shape[0] > render.joints2d.shape[0] and np.all(
            g_conf[render.joints2d.shape[0]:] == 0
        ):
            g_xy = g_xy[: render.joints2d.shape[0]]
            g_conf = g_conf[: render.joints2d.shape[0]]
        else:
            raise ValueError(
                "target has %d joints, model %d" % (g_xy.shape[0], render.joints2d.shape[0])
            )

    union = (np.asarray(bundle.depth) > 0) | (render.depth > 0)
    core = _erode1(union)
    n_core = core.sum()
    sign_depth = np.zeros((h, w))
    if n_core:
        sign_depth[core] = np.sign(render.depth - bundle.depth)[core] / n_core

    sign_mask = np.sign(render.silhouette - np.asarray(bundle.silhouette)) / (h * w)

    # Freeze the raster structure: each support pixel keeps the face that
    # covered it at the base point, and the normalization anchors keep the
    # pixels where the base z-range was attained.
    base_xy = params.scale * posed.vertices[:, :2] + params.translation
    zbuf0, fidx0 = rasterize_hard_batch(
        base_xy[None], posed.vertices[None, :, 2], model.faces, (h, w)
    )
    zbuf0, fidx0 = zbuf0[0], fidx0[0]
    covered = fidx0 >= 0
    rr, cc = np.nonzero((sign_depth != 0) & covered)
    depth_pix = np.stack([cc + 0.5, rr + 0.5], axis=1)
    depth_tri = model.faces[fidx0[rr, cc]]
    depth_sign = sign_depth[rr, cc]
    flat = np.where(covered, zbuf0, np.inf).ravel()
    pmin = int(np.argmin(flat))
    pmax = int(np.argmax(np.where(covered, zbuf0, -np.inf).ravel()))
    norm_rc = np.array([[pmin // w, pmin % w], [pmax // w, pmax % w]])
    norm_pix = np.stack([norm_rc[:, 1] + 0.5, norm_rc[:, 0] + 0.5], axis=1)
    norm_tri = model.faces[fidx0[norm_rc[:, 0], norm_rc[:, 1]]]
    zrange = zbuf0[norm_rc[1, 0], norm_rc[1, 1]] - zbuf0[norm_rc[0, 0], norm_rc[0, 1]]

    resid = render.joints2d - g_xy
    norms = np.linalg.norm(resid, axis=1)
    total_conf = g_conf.sum()
    dirs = np.zeros_like(resid)
    if total_conf > 0:
        ok = norms > 1e-12
        dirs[ok] = (g_conf[ok] / total_conf)[:, None] * resid[ok] / norms[ok][:, None]

    frozen = FrozenObjective(
        model=model,
        bundle=bundle,
        cam_size=(h, w),
        weights=cfg.weights,
        sigma=cfg.soft_sigma,
        sign_mask=sign_mask,
        target_xy=g_xy,
        residual_dirs=dirs,
        depth_pix=depth_pix,
        depth_tri=depth_tri,
        depth_sign=depth_sign,
        norm_pix=norm_pix,
        norm_tri=norm_tri,
        norm_degenerate=not (zrange > 0),
    )
    return frozen, render, posed


def _pose_theta_batch(model, shaped, rest_joints, thetas):
    """forward() vectorized over poses that share one shaped template.

    The kinematic chain is arithmetic-identical to the single-pose path
    (joints bitwise equal); the vertex blend runs as one GEMM, which may
    round an ulp apart from forward(). Probe pairs always go through this
    same path, so central differences stay internally consistent, and a
    vertex untouched by the probed joint is bitwise identical across the
    +/- pair.
    """
    k, j_dim = thetas.shape[0], thetas.shape[1]
    rot = rodrigues(thetas)  # (K, J, 3, 3)
    world_rot = np.empty((k, j_dim, 3, 3))
    rel_trans = np.empty((k, j_dim, 3))
    world_rot[:, 0] = rot[:, 0]
    rel_trans[:, 0] = rest_joints[0] - np.einsum("kab,b->ka", world_rot[:, 0], rest_joints[0])
    parents = model.kinematic_parents
    for j in range(1, j_dim):
        p = parents[j]
        world_rot[:, j] = world_rot[:, p] @ rot[:, j]
        rel_trans[:, j] = rel_trans[:, p] + np.einsum(
            "kab,b->ka", world_rot[:, p] - world_rot[:, j], rest_joints[j]
        )
    world_pos = rel_trans + np.einsum("kjab,jb->kja", world_rot, rest_joints)
    w = model.skinning_weights
    # One GEMM for the blended 3x4 transforms, then a batched apply.
    trans = np.concatenate([world_rot, rel_trans[..., None]], axis=3)  # (K, J, 3, 4)
    blend = (w @ trans.transpose(1, 0, 2, 3).reshape(j_dim, -1)).reshape(
        shaped.shape[0], k, 3, 4
    )
    vertices = (
        np.einsum("vkab,vb->kva", blend[..., :3], shaped) + blend[..., 3].transpose(1, 0, 2)
    )
    return vertices, world_pos


def _active_set(active_groups):
    groups = set(active_groups if active_groups is not None else _ALL_GROUPS)
    unknown = groups - set(PARAM_GROUPS)
    if unknown:
        raise ValueError("unknown parameter groups %r" % sorted(unknown))
    return groups


def objective_gradient(params, model, bundle, cam_size, cfg, active_groups=None, scratch=None):
    """Descent direction over the active groups at the current parameters.

    Returns (grad, info): grad maps group name -> array (beta (B,), theta
    (J,3), scale scalar, translation (2,)); inactive groups are zero. info
    carries the frozen objective and the base render for reuse.
    """
    groups = _active_set(active_groups)
    frozen, render, posed = build_frozen_objective(params, model, bundle, cam_size, cfg)
    b_dim = model.num_shape_coeffs
    j_dim = model.num_joints
    lam = cfg.weights

    theta_rows = []
    if "theta" in groups:
        theta_rows = list(range(j_dim))
    elif "theta_root" in groups:
        theta_rows = [0]

    # FD probe plan: (kind, flat index, step). Probes come in +/- pairs.
    plan = []
    if "beta" in groups:
        plan += [("beta", i, cfg.fd_steps.beta) for i in range(b_dim)]
    plan += [("theta", 3 * r + c, cfg.fd_steps.theta) for r in theta_rows for c in range(3)]
    scale_step = cfg.fd_steps.scale_rel * params.scale
    if "scale" in groups:
        plan.append(("scale", 0, scale_step))
    if "translation" in groups:
        plan += [("translation", i, cfg.fd_steps.translation) for i in range(2)]

    grad = {
        "beta": np.zeros(b_dim),
        "theta": np.zeros((j_dim, 3)),
        "scale": 0.0,
        "translation": np.zeros(2),
    }
    if not plan:
        return grad, {"frozen": frozen, "render": render, "posed": posed}

    shaped = _shape(model, params.beta)
    rest_joints = model.joint_regressor @ shaped

    # Mask probes for joint rows that move only a small face subset go
    # through the incremental soft kernel; everything else (shape, camera,
    # and rows near the root that move most of the mesh) stays on the full
    # kernel, where recomputing from scratch is the cheaper option.
    mask_active = lam.lambda_m != 0 and frozen.sign_mask.any()
    delta_rows = frozenset()
    moved_faces = None
    if mask_active and theta_rows:
        if scratch is not None and "theta_moved" in scratch:
            moved_faces = scratch["theta_moved"]
        else:
            moved_faces = _theta_moved_faces(model)
            if scratch is not None:
                scratch["theta_moved"] = moved_faces
        n_faces = model.faces.shape[0]
        delta_rows = frozenset(
            r for r in theta_rows if 2 * moved_faces[r].shape[0] <= n_faces
        )
    delta_slots, delta_lists, full_slots = [], [], []
    for i, (kind, idx, _) in enumerate(plan):
        if kind == "theta" and idx // 3 in delta_rows:
            delta_slots += [2 * i, 2 * i + 1]
            delta_lists += [moved_faces[idx // 3]] * 2
        else:
            full_slots += [2 * i, 2 * i + 1]
    base_xy = params.scale * posed.vertices[:, :2] + params.translation
    soft_base = None  # (log_acc, total) at the base point, built on demand

    def probe_geometry(kind, idx, delta, sign):
        """xy, z, projected joints for one perturbed parameter set."""
        if kind == "beta":
            beta = params.beta.copy()
            beta[idx] += sign * delta
            p = forward(model, beta, params.theta)
            xy = params.scale * p.vertices[:, :2] + params.translation
            return xy, p.vertices[:, 2], params.scale * p.joints3d[:, :2] + params.translation
        if kind == "scale":
            s = params.scale + sign * delta
            xy = s * posed.vertices[:, :2] + params.translation
            return xy, posed.vertices[:, 2], s * posed.joints3d[:, :2] + params.translation
        t = params.translation.copy()
        t[idx] += sign * delta
        xy = params.scale * posed.vertices[:, :2] + t
        return xy, posed.vertices[:, 2], params.scale * posed.joints3d[:, :2] + t

    def evaluate_plan(step_scale):
        n_verts = model.num_vertices
        count = 2 * len(plan)
        xs = np.empty((count, n_verts, 2))
        zs = np.empty((count, n_verts))
        joint_projs = np.empty((count, j_dim, 2))

        theta_entries = [
            (i, idx, delta) for i, (kind, idx, delta) in enumerate(plan) if kind == "theta"
        ]
        if theta_entries:
            thetas = np.repeat(params.theta[None], 2 * len(theta_entries), axis=0)
            for b, (_, idx, delta) in enumerate(theta_entries):
                thetas[2 * b, idx // 3, idx % 3] += delta * step_scale
                thetas[2 * b + 1, idx // 3, idx % 3] -= delta * step_scale
            verts, joints = _pose_theta_batch(model, shaped, rest_joints, thetas)
            xy = params.scale * verts[..., :2] + params.translation
            jp = params.scale * joints[..., :2] + params.translation
            for b, (i, _, _) in enumerate(theta_entries):
                xs[2 * i], xs[2 * i + 1] = xy[2 * b], xy[2 * b + 1]
                zs[2 * i], zs[2 * i + 1] = verts[2 * b, :, 2], verts[2 * b + 1, :, 2]
                joint_projs[2 * i], joint_projs[2 * i + 1] = jp[2 * b], jp[2 * b + 1]

        for i, (kind, idx, delta) in enumerate(plan):
            if kind == "theta":
                continue
            for off, sign in ((0, +1.0), (1, -1.0)):
                xy, z, pj = probe_geometry(kind, idx, delta * step_scale, sign)
                xs[2 * i + off] = xy
                zs[2 * i + off] = z
                joint_projs[2 * i + off] = pj

        s_d = frozen.depth_sums(xs, zs)
        if not mask_active:
            s_m = np.zeros(count)
        elif not delta_slots:
            s_m = frozen.mask_sums(xs)
        else:
            nonlocal soft_base
            if soft_base is None:
                soft_base = soft_log_base(
                    base_xy, model.faces, cam_size, frozen.sigma, frozen.sign_mask
                )
            s_m = np.empty(count)
            if full_slots:
                s_m[full_slots] = frozen.mask_sums(xs[full_slots])
            s_m[delta_slots] = soft_weighted_sums_delta(
                base_xy, xs[delta_slots], delta_lists, model.faces, cam_size,
                frozen.sigma, frozen.sign_mask, soft_base[0], soft_base[1],
            )
        return s_d, s_m, joint_projs

    s_d, s_m, joint_projs = evaluate_plan(1.0)
    if not (np.all(np.isfinite(s_d)) and np.all(np.isfinite(s_m))):
        s_d, s_m, joint_projs = evaluate_plan(0.5)
        if not (np.all(np.isfinite(s_d)) and np.all(np.isfinite(s_m))):
            raise NumericError("non-finite loss at FD probe point after halving the step")
        plan = [(kind, idx, delta * 0.5) for kind, idx, delta in plan]

    dirs = frozen.residual_dirs
    for i, (kind, idx, delta) in enumerate(plan):
        hi, lo = 2 * i, 2 * i + 1
        g = lam.lambda_d * (s_d[hi] - s_d[lo]) + lam.lambda_m * (s_m[hi] - s_m[lo])
        if kind in ("beta", "theta"):
            # Joint positions move with the kinematics: include their FD term.
            g_j = float(np.sum(dirs * (joint_projs[hi] - joint_projs[lo])))
            g += lam.lambda_j * g_j
        g /= 2.0 * delta
        if kind == "beta":
            grad["beta"][idx] = g
        elif kind == "theta":
            grad["theta"][idx // 3, idx % 3] = g
        elif kind == "scale":
            grad["scale"] = g
        else:
            grad["translation"][idx] = g

    # The joint term is affine in (s, t): add its exact derivative there.
    if "scale" in groups or "translation" in groups:
        jac = project_jacobian(posed.joints3d)  # (J, 2, 3) wrt (s, tx, ty)
        g_stx = np.einsum("jc,jcs->s", dirs, jac) * lam.lambda_j
        if "scale" in groups:
            grad["scale"] += g_stx[0]
        if "translation" in groups:
            grad["translation"] += g_stx[1:]
    return grad, {"frozen": frozen, "render": render, "posed": posed}


# ---------------------------------------------------------------------------
# Optimizer loop


# Shape coefficients move vertices roughly a third as far per unit as a
# joint rotation moves a limb end, so their internal coordinate is
# compressed to let them take proportionally larger natural steps.
_BETA_SCALE = 3.0


def _encode(params, t_norm):
    return np.concatenate(
        [
            params.beta / _BETA_SCALE,
            params.theta.ravel(),
            [np.log(params.scale)],
            params.translation / t_norm,
        ]
    )


def _decode(u, b_dim, j_dim, t_norm):
    return BodyParams(
        beta=u[:b_dim] * _BETA_SCALE,
        theta=u[b_dim : b_dim + 3 * j_dim].reshape(j_dim, 3),
        scale=float(np.exp(u[b_dim + 3 * j_dim])),
        translation=u[-2:] * t_norm,
    )


def _freeze_inactive(candidate, current, groups):
    """Inactive groups pass through bitwise; decode round trips (beta/3*3,
    exp(log s)) would otherwise drift them by an ulp per iteration."""
    theta = candidate.theta
    if "theta" not in groups:
        if "theta_root" in groups:
            theta = np.vstack([candidate.theta[:1], current.theta[1:]])
        else:
            theta = current.theta.copy()
    return BodyParams(
        beta=candidate.beta if "beta" in groups else current.beta.copy(),
        theta=theta,
        scale=candidate.scale if "scale" in groups else current.scale,
        translation=(
            candidate.translation if "translation" in groups else current.translation.copy()
        ),
    )


def _grad_to_internal(grad, params, t_norm):
    """Chain rule from natural parameters to normalized coordinates."""
    return np.concatenate(
        [
            grad["beta"] * _BETA_SCALE,
            grad["theta"].ravel(),
            [grad["scale"] * params.scale],
            grad["translation"] * t_norm,
        ]
    )


def _group_mask(groups, b_dim, j_dim):
    mask = np.zeros(b_dim + 3 * j_dim + 3)
    if "beta" in groups:
        mask[:b_dim] = 1.0
    if "theta" in groups:
        mask[b_dim : b_dim + 3 * j_dim] = 1.0
    elif "theta_root" in groups:
        mask[b_dim : b_dim + 3] = 1.0
    if "scale" in groups:
        mask[b_dim + 3 * j_dim] = 1.0
    if "translation" in groups:
        mask[-2:] = 1.0
    return mask


def _hard_loss(model, params, bundle, cam_size, weights):
    try:
        render, _ = render_body(model, params, cam_size)
    except EmptyRender:
        return np.inf, None
    total, breakdown = total_fit_loss(bundle, render, weights)
    return total, breakdown


def fit(model, bundle, init, cfg=None):
    """Staged optimization of BodyParams against a target bundle.

    Returns a FitReport whose final_params are the best iterate seen (the
    raw trace may oscillate; the best-so-far sequence cannot). Deterministic
    for fixed inputs and config.
    """
    if cfg is None:
        cfg = FitConfig()
    cam_size = bundle.image_size
    t_norm = float(max(cam_size))
    b_dim = model.num_shape_coeffs
    j_dim = model.num_joints

    t0 = time.perf_counter()
    params = init.copy()
    loss, breakdown = _hard_loss(model, params, bundle, cam_size, cfg.weights)
    if not np.isfinite(loss):
        raise EmptyRender("initial parameters render no foreground")
    trace = [loss]
    breakdowns = [breakdown]
    best_loss, best_params, best_iter = loss, params.copy(), 0

    schedule = []
    for stage_idx, (groups, count) in enumerate(cfg.stages):
        schedule += [(stage_idx, tuple(groups))] * count

    u = _encode(params, t_norm)
    m = np.zeros_like(u)
    v = np.zeros_like(u)
    adam_t = 0
    prev_stage = 0
    scratch = {}

    for it, (stage_idx, groups) in enumerate(schedule, start=1):
        if stage_idx != prev_stage:
            # Warm restart at stage boundaries: moment magnitudes from an
            # earlier stage reflect stale gradient scales and would throttle
            # the newly activated (or refined) groups.
            m[:] = 0.0
            v[:] = 0.0
            adam_t = 0
            prev_stage = stage_idx
        if loss <= 0.0:
            # Exact fit: the objective cannot go lower, so hold position.
            trace.append(loss)
            breakdowns.append(breakdown)
            continue
        grad, _ = objective_gradient(params, model, bundle, cam_size, cfg, groups, scratch)
        g = _grad_to_internal(grad, params, t_norm) * _group_mask(groups, b_dim, j_dim)
        if not np.any(g):
            trace.append(loss)
            breakdowns.append(breakdown)
            continue

        if cfg.optimizer == "adam":
            adam_t += 1
            m = cfg.beta1 * m + (1 - cfg.beta1) * g
            v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
            m_hat = m / (1 - cfg.beta1**adam_t)
            v_hat = v / (1 - cfg.beta2**adam_t)
            step = cfg.step_size * m_hat / (np.sqrt(v_hat) + 1e-8)
            accepted = False
            for halving in (1.0, 0.5):
                u_try = u - halving * step
                try:
                    p_try = _freeze_inactive(_decode(u_try, b_dim, j_dim, t_norm), params, groups)
                except ValueError:
                    continue
                l_try, bd_try = _hard_loss(model, p_try, bundle, cam_size, cfg.weights)
                if np.isfinite(l_try):
                    params, loss, breakdown = p_try, l_try, bd_try
                    u = _encode(params, t_norm)
                    accepted = True
                    break
            if not accepted:
                pass  # step rejected entirely; parameters stay put
        else:  # gradient descent with backtracking line search
            alpha = cfg.step_size
            gnorm2 = float(g @ g)
            moved = False
            if gnorm2 > 0:
                for _ in range(8):
                    u_try = u - alpha * g
                    try:
                        p_try = _freeze_inactive(_decode(u_try, b_dim, j_dim, t_norm), params, groups)
                    except ValueError:
                        alpha *= 0.5
                        continue
                    l_try, bd_try = _hard_loss(model, p_try, bundle, cam_size, cfg.weights)
                    if np.isfinite(l_try) and l_try < loss:
                        params, loss, breakdown = p_try, l_try, bd_try
                        u = _encode(params, t_norm)
                        moved = True
                        break
                    alpha *= 0.5
            if not moved:
                pass  # no improving step found this iteration

        trace.append(loss)
        breakdowns.append(breakdown)
        if loss < best_loss:
            best_loss, best_params, best_iter = loss, params.copy(), it

    window = max(1, cfg.iterations // 4)
    best_seq = np.minimum.accumulate(trace)
    before = best_seq[-window - 1]
    converged = bool(
        best_loss <= 1e-12 or (before - best_seq[-1]) < 1e-6 * max(before, 1e-30)
    )
    return FitReport(
        initial_params=init.copy(),
        final_params=best_params,
        loss_trace=trace,
        breakdown_trace=breakdowns,
        best_iteration=best_iter,
        converged=converged,
        wall_time_s=time.perf_counter() - t0,
    )
