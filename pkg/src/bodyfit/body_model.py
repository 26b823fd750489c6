"""Linear-blend-skinned parametric body model.

A model bundles a template mesh, a linear shape basis, a joint regressor,
skinning weights, and a kinematic tree. Posing follows the usual pipeline:
shape blend, regress rest joints, chain per-joint rigid transforms along the
tree, then skin the shaped vertices with the rest-pose-relative transforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ROOT = -1

_MODEL_VERSION = "1"


class ModelValidationError(ValueError):
    """Raised when a model's arrays are inconsistent with its contract."""


# ---------------------------------------------------------------------------
# Rotations


def canonicalize_axis_angle(theta):
    """Map axis-angle rows into magnitude <= pi (axis flipped as needed)."""
    th = np.asarray(theta, dtype=np.float64)
    flat = th.reshape(-1, 3).copy()
    mag = np.linalg.norm(flat, axis=1)
    big = mag > np.pi
    if np.any(big):
        m = mag[big]
        wrapped = np.mod(m, 2.0 * np.pi)
        # Angles in (pi, 2pi) become negative rotations about the same axis.
        adjusted = np.where(wrapped > np.pi, wrapped - 2.0 * np.pi, wrapped)
        flat[big] *= (adjusted / m)[:, None]
    return flat.reshape(th.shape)


def rodrigues(axis_angle):
    """Axis-angle vectors (..., 3) to rotation matrices (..., 3, 3)."""
    aa = np.asarray(axis_angle, dtype=np.float64)
    shape = aa.shape[:-1]
    v = aa.reshape(-1, 3)
    theta = np.linalg.norm(v, axis=1)
    small = theta < 1e-8
    # Guard the division; the series branch takes over for tiny angles.
    safe = np.where(small, 1.0, theta)
    k = v / safe[:, None]
    kx, ky, kz = k[:, 0], k[:, 1], k[:, 2]
    zeros = np.zeros_like(kx)
    cross = np.stack(
        [zeros, -kz, ky, kz, zeros, -kx, -ky, kx, zeros], axis=1
    ).reshape(-1, 3, 3)
    eye = np.broadcast_to(np.eye(3), (v.shape[0], 3, 3))
    sin_t = np.sin(theta)[:, None, None]
    cos_t = np.cos(theta)[:, None, None]
    out = eye + sin_t * cross + (1.0 - cos_t) * (cross @ cross)
    if np.any(small):
        # R ~= I + [v]x + [v]x^2 / 2, accurate to O(theta^3).
        vx = np.stack(
            [zeros, -v[:, 2], v[:, 1], v[:, 2], zeros, -v[:, 0], -v[:, 1], v[:, 0], zeros],
            axis=1,
        ).reshape(-1, 3, 3)
        series = eye + vx + 0.5 * (vx @ vx)
        out = np.where(small[:, None, None], series, out)
    return out.reshape(shape + (3, 3))


# ---------------------------------------------------------------------------
# Types


@dataclass
class BodyModel:
    """Template mesh plus the linear machinery that poses it.

    template_vertices : (V, 3) rest-pose positions.
    faces             : (F, 3) int triangle indices, outward CCW winding.
    shape_basis       : (V, 3, B) per-coefficient displacement fields.
    joint_regressor   : (J, V), rows non-negative and summing to 1.
    skinning_weights  : (V, J), rows non-negative and summing to 1.
    kinematic_parents : (J,) int, parents[0] == ROOT and parents[j] < j.
    """

    template_vertices: np.ndarray
    faces: np.ndarray
    shape_basis: np.ndarray
    joint_regressor: np.ndarray
    skinning_weights: np.ndarray
    kinematic_parents: np.ndarray

    def __post_init__(self):
        self.template_vertices = np.asarray(self.template_vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        self.shape_basis = np.asarray(self.shape_basis, dtype=np.float64)
        self.joint_regressor = np.asarray(self.joint_regressor, dtype=np.float64)
        self.skinning_weights = np.asarray(self.skinning_weights, dtype=np.float64)
        self.kinematic_parents = np.asarray(self.kinematic_parents, dtype=np.int64)
        self.validate()

    @property
    def num_vertices(self):
        return self.template_vertices.shape[0]

    @property
    def num_joints(self):
        return self.joint_regressor.shape[0]

    @property
    def num_shape_coeffs(self):
        return self.shape_basis.shape[2]

    def rest_height(self):
        """Vertical (y) extent of the template, used by the initializer."""
        return float(np.ptp(self.template_vertices[:, 1]))

    def validate(self):
        v = self.template_vertices
        if v.ndim != 2 or v.shape[1] != 3:
            raise ModelValidationError("template_vertices must be (V, 3), got %r" % (v.shape,))
        V = v.shape[0]
        f = self.faces
        if f.ndim != 2 or f.shape[1] != 3:
            raise ModelValidationError("faces must be (F, 3), got %r" % (f.shape,))
        if f.size and (f.min() < 0 or f.max() >= V):
            raise ModelValidationError("face indices out of range [0, %d)" % V)
        if f.size and (
            np.any(f[:, 0] == f[:, 1]) or np.any(f[:, 1] == f[:, 2]) or np.any(f[:, 0] == f[:, 2])
        ):
            raise ModelValidationError("degenerate face: repeated vertex index")
        sb = self.shape_basis
        if sb.ndim != 3 or sb.shape[0] != V or sb.shape[1] != 3:
            raise ModelValidationError("shape_basis must be (V, 3, B), got %r" % (sb.shape,))
        jr = self.joint_regressor
        if jr.ndim != 2 or jr.shape[1] != V:
            raise ModelValidationError("joint_regressor must be (J, V), got %r" % (jr.shape,))
        J = jr.shape[0]
        if np.any(jr < -1e-12):
            raise ModelValidationError("joint_regressor has negative entries")
        if not np.allclose(jr.sum(axis=1), 1.0, atol=1e-6):
            raise ModelValidationError("joint_regressor rows must sum to 1")
        sw = self.skinning_weights
        if sw.shape != (V, J):
            raise ModelValidationError("skinning_weights must be (V, J), got %r" % (sw.shape,))
        if np.any(sw < -1e-12):
            raise ModelValidationError("skinning_weights has negative entries")
        if not np.allclose(sw.sum(axis=1), 1.0, atol=1e-6):
            raise ModelValidationError("skinning_weights rows must sum to 1")
        kp = self.kinematic_parents
        if kp.shape != (J,):
            raise ModelValidationError("kinematic_parents must be (J,), got %r" % (kp.shape,))
        if J and kp[0] != ROOT:
            raise ModelValidationError("kinematic_parents[0] must be the root sentinel %d" % ROOT)
        for j in range(1, J):
            if not 0 <= kp[j] < j:
                raise ModelValidationError("kinematic_parents[%d]=%d violates parent < child" % (j, kp[j]))
        for name, arr in (
            ("template_vertices", v),
            ("shape_basis", sb),
            ("joint_regressor", jr),
            ("skinning_weights", sw),
        ):
            if not np.all(np.isfinite(arr)):
                raise ModelValidationError("%s contains non-finite values" % name)


@dataclass
class BodyParams:
    """Shape, pose and weak-perspective placement for one subject.

    Axis-angle rows are canonicalized to magnitude <= pi on construction.
    """

    beta: np.ndarray
    theta: np.ndarray
    scale: float
    translation: np.ndarray

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        theta = np.asarray(self.theta, dtype=np.float64)
        if theta.ndim != 2 or theta.shape[1] != 3:
            raise ValueError("theta must be (J, 3), got %r" % (theta.shape,))
        self.theta = canonicalize_axis_angle(theta)
        self.scale = float(self.scale)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(2)
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise ValueError("scale must be positive and finite, got %r" % self.scale)
        for name, arr in (("beta", self.beta), ("theta", self.theta), ("translation", self.translation)):
            if not np.all(np.isfinite(arr)):
                raise ValueError("%s contains non-finite values" % name)

    def copy(self):
        return BodyParams(
            beta=self.beta.copy(),
            theta=self.theta.copy(),
            scale=self.scale,
            translation=self.translation.copy(),
        )

    def to_dict(self):
        return {
            "beta": self.beta.tolist(),
            "theta": self.theta.tolist(),
            "scale": self.scale,
            "translation": self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            beta=np.asarray(doc["beta"], dtype=np.float64),
            theta=np.asarray(doc["theta"], dtype=np.float64),
            scale=float(doc["scale"]),
            translation=np.asarray(doc["translation"], dtype=np.float64),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class PosedBody:
    vertices: np.ndarray  # (V, 3)
    joints3d: np.ndarray  # (J, 3)


# ---------------------------------------------------------------------------
# Forward kinematics


def _shape(model, beta):
    if beta.shape[0] != model.num_shape_coeffs:
        raise ValueError(
            "beta has %d coefficients, model expects %d" % (beta.shape[0], model.num_shape_coeffs)
        )
    return model.template_vertices + model.shape_basis @ beta


def _world_transforms(rest_joints, rotations, parents):
    """Compose per-joint world rotations and skinning translations.

    Returns (world_rot (J,3,3), world_pos (J,3), rel_trans (J,3)) where the
    skinning transform of joint j maps x -> world_rot[j] x + rel_trans[j].
    The translation is accumulated as t_j = t_p + (R_p - R_j) j_rest so a
    joint whose chain is entirely unrotated keeps t == 0 and position ==
    rest position bitwise (no (a - b) + b round trips).
    """
    J = rest_joints.shape[0]
    world_rot = np.empty((J, 3, 3))
    rel_trans = np.empty((J, 3))
    world_rot[0] = rotations[0]
    rel_trans[0] = rest_joints[0] - np.einsum("ab,b->a", world_rot[0], rest_joints[0])
    for j in range(1, J):
        p = parents[j]
        world_rot[j] = world_rot[p] @ rotations[j]
        rel_trans[j] = rel_trans[p] + np.einsum(
            "ab,b->a", world_rot[p] - world_rot[j], rest_joints[j]
        )
    world_pos = rel_trans + np.einsum("jab,jb->ja", world_rot, rest_joints)
    return world_rot, world_pos, rel_trans


def forward(model, beta, theta):
    """Pose the model; returns a PosedBody with skinned vertices and joints.

    With all rotations zero the vertices equal the shaped vertices exactly,
    and the joints equal joint_regressor @ shaped vertices.
    """
    beta = np.asarray(beta, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (model.num_joints, 3):
        raise ValueError(
            "theta has shape %r, model expects (%d, 3)" % (theta.shape, model.num_joints)
        )
    if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(theta))):
        raise ValueError("beta/theta must be finite")
    shaped = _shape(model, beta)
    rest_joints = model.joint_regressor @ shaped
    rotations = rodrigues(theta)
    world_rot, world_pos, rel_trans = _world_transforms(
        rest_joints, rotations, model.kinematic_parents
    )
    W = model.skinning_weights
    blend_rot = np.einsum("vj,jab->vab", W, world_rot)
    blend_trans = W @ rel_trans
    vertices = np.einsum("vab,vb->va", blend_rot, shaped) + blend_trans
    return PosedBody(vertices=vertices, joints3d=world_pos)


def forward_joints(model, beta, theta):
    """Joint positions only (no vertex skinning); used by fast paths."""
    beta = np.asarray(beta, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    shaped = _shape(model, beta)
    rest_joints = model.joint_regressor @ shaped
    rotations = rodrigues(theta)
    _, world_pos, _ = _world_transforms(rest_joints, rotations, model.kinematic_parents)
    return world_pos


def pose_body(model, params):
    """forward() using the pose fields of a BodyParams."""
    return forward(model, params.beta, params.theta)


# ---------------------------------------------------------------------------
# Serialization


def save_model(path, model):
    doc = {
        "template_vertices": model.template_vertices.tolist(),
        "faces": model.faces.tolist(),
        "shape_basis": model.shape_basis.tolist(),
        "joint_regressor": model.joint_regressor.tolist(),
        "skinning_weights": model.skinning_weights.tolist(),
        "kinematic_parents": model.kinematic_parents.tolist(),
        "meta": {
            "V": model.num_vertices,
            "F": int(model.faces.shape[0]),
            "J": model.num_joints,
            "B": model.num_shape_coeffs,
            "version": _MODEL_VERSION,
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        doc = json.load(fh)
    meta = doc.get("meta", {})
    model = BodyModel(
        template_vertices=np.asarray(doc["template_vertices"], dtype=np.float64),
        faces=np.asarray(doc["faces"], dtype=np.int64),
        shape_basis=np.asarray(doc["shape_basis"], dtype=np.float64),
        joint_regressor=np.asarray(doc["joint_regressor"], dtype=np.float64),
        skinning_weights=np.asarray(doc["skinning_weights"], dtype=np.float64),
        kinematic_parents=np.asarray(doc["kinematic_parents"], dtype=np.int64),
    )
    declared = (meta.get("V"), meta.get("F"), meta.get("J"), meta.get("B"))
    actual = (
        model.num_vertices,
        int(model.faces.shape[0]),
        model.num_joints,
        model.num_shape_coeffs,
    )
    if None not in declared and tuple(declared) != actual:
        raise ModelValidationError(
            "%s: meta dimensions %r do not match arrays %r" % (path, declared, actual)
        )
    return model


# ---------------------------------------------------------------------------
# Procedural toy body
#
# A humanoid assembled from lathed primitives: an ellipsoid torso and skull,
# capsule limbs. The canonical joint table is ordered so that any prefix of
# length >= 8 forms a valid tree (parents always precede children). y grows
# toward the feet so rendered images come out upright under p = s*(x,y) + t.

# Limb chains carry deliberate z offsets (bent knees/elbows, hands forward
# of the torso plane): with straight axis-aligned chains, joint twist and
# yaw-like rotations would move no visible geometry at the rest pose, which
# both stalls fitting and makes those axes untestable.
_JOINT_TABLE = [
    # name, parent, (x, y, z)
    ("pelvis", ROOT, (0.0, 0.0, 0.0)),
    ("spine", 0, (0.0, -0.12, 0.0)),
    ("chest", 1, (0.0, -0.24, 0.0)),
    ("head", 2, (0.0, -0.38, 0.0)),
    ("l_hip", 0, (-0.07, 0.02, 0.0)),
    ("r_hip", 0, (0.07, 0.02, 0.0)),
    ("l_knee", 4, (-0.08, 0.25, 0.04)),
    ("r_knee", 5, (0.08, 0.25, 0.04)),
    ("l_ankle", 6, (-0.09, 0.47, -0.024)),
    ("r_ankle", 7, (0.09, 0.47, -0.024)),
    ("l_shoulder", 2, (-0.12, -0.26, 0.0)),
    ("r_shoulder", 2, (0.12, -0.26, 0.0)),
    ("l_elbow", 10, (-0.27, -0.26, -0.05)),
    ("r_elbow", 11, (0.27, -0.26, -0.05)),
    ("l_wrist", 12, (-0.40, -0.26, -0.11)),
    ("r_wrist", 13, (0.40, -0.26, -0.11)),
    ("l_foot", 8, (-0.09, 0.50, 0.045)),
    ("r_foot", 9, (0.09, 0.50, 0.045)),
    ("l_hand", 14, (-0.46, -0.26, -0.14)),
    ("r_hand", 15, (0.46, -0.26, -0.14)),
    ("head_top", 3, (0.0, -0.47, 0.0)),
    ("l_toe", 16, (-0.09, 0.50, 0.095)),
    ("r_toe", 17, (0.09, 0.50, 0.095)),
    ("jaw", 3, (0.0, -0.335, 0.035)),
]

# Capsules keyed by distal joint: (radius, proximal joint override or None).
_CAPSULE_SPECS = {
    3: (0.032, 2),  # neck: chest -> head
    6: (0.055, 4),
    7: (0.055, 5),
    8: (0.038, 6),
    9: (0.038, 7),
    10: (0.042, 2),
    11: (0.042, 2),
    12: (0.040, 10),
    13: (0.040, 11),
    14: (0.032, 12),
    15: (0.032, 13),
    16: (0.030, 8),
    17: (0.030, 9),
    18: (0.026, 14),
    19: (0.026, 15),
    21: (0.022, 16),
    22: (0.022, 17),
}


@dataclass
class ToyModelSpec:
    """Knobs for the procedural body; defaults give a mid-size 16-joint rig."""

    joints: int = 16
    shape_coeffs: int = 4
    vertex_budget: int = 550
    seed: int = 7

    def __post_init__(self):
        if not 8 <= self.joints <= 24:
            raise ValueError("joints must be in [8, 24], got %d" % self.joints)
        if not 2 <= self.shape_coeffs <= 10:
            raise ValueError("shape_coeffs must be in [2, 10], got %d" % self.shape_coeffs)
        if self.vertex_budget < 100:
            raise ValueError("vertex_budget must be >= 100, got %d" % self.vertex_budget)


def _frame(axis):
    a = axis / np.linalg.norm(axis)
    h = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = h - np.dot(h, a) * a
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(a, e1)
    return e1, e2


def _lathe(pole_start, pole_end, rings, n_rad):
    """Triangulate a surface of revolution: two poles plus stacked rings.

    rings: list of (center, r1_vec, r2_vec); vertex = c + cos*r1 + sin*r2.
    Winding is outward-CCW for rings ordered from pole_start to pole_end
    with r1 x r2 pointing along the pole axis.
    """
    phis = 2.0 * np.pi * np.arange(n_rad) / n_rad
    cos_p, sin_p = np.cos(phis), np.sin(phis)
    verts = [np.asarray(pole_start, dtype=np.float64)]
    for c, r1, r2 in rings:
        ring = c[None, :] + cos_p[:, None] * r1[None, :] + sin_p[:, None] * r2[None, :]
        verts.append(ring)
    verts.append(np.asarray(pole_end, dtype=np.float64)[None, :])
    verts[0] = verts[0][None, :]
    vertices = np.concatenate(verts, axis=0)

    faces = []
    n_rings = len(rings)
    first = 1  # index of ring 0 vertex 0

    def rv(i, k):
        return first + i * n_rad + (k % n_rad)

    for k in range(n_rad):  # start fan
        faces.append((0, rv(0, k + 1), rv(0, k)))
    for i in range(n_rings - 1):  # bands
        for k in range(n_rad):
            faces.append((rv(i, k), rv(i, k + 1), rv(i + 1, k)))
            faces.append((rv(i, k + 1), rv(i + 1, k + 1), rv(i + 1, k)))
    last = first + n_rings * n_rad
    for k in range(n_rad):  # end fan
        faces.append((last, rv(n_rings - 1, k), rv(n_rings - 1, k + 1)))
    return vertices, np.asarray(faces, dtype=np.int64)


def _capsule(p0, p1, radius, n_rad, n_ax, cap_steps=1):
    """Capsule from p0 to p1: cylinder with spherical end caps."""
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    axis = p1 - p0
    a = axis / np.linalg.norm(axis)
    e1, e2 = _frame(a)
    rings = []
    anchors = []  # per-ring inflation anchor for the girth basis
    cap_angles = [(i + 1) * (np.pi / 2) / (cap_steps + 1) for i in range(cap_steps)]
    for th in cap_angles:
        c = p0 - radius * np.cos(th) * a
        r = radius * np.sin(th)
        rings.append((c, r * e1, r * e2))
        anchors.append(p0)
    for u in np.linspace(0.0, 1.0, n_ax):
        c = p0 + u * axis
        rings.append((c, radius * e1, radius * e2))
        anchors.append(c)
    for th in reversed(cap_angles):
        c = p1 + radius * np.cos(th) * a
        r = radius * np.sin(th)
        rings.append((c, r * e1, r * e2))
        anchors.append(p1)
    verts, faces = _lathe(p0 - radius * a, p1 + radius * a, rings, n_rad)
    anchor_pts = np.concatenate(
        [p0[None, :]] + [np.repeat(x[None, :], n_rad, axis=0) for x in anchors] + [p1[None, :]],
        axis=0,
    )
    return verts, faces, anchor_pts


def _ellipsoid(center, semi, n_rad, n_lat):
    """Axis-aligned ellipsoid with poles along y."""
    center = np.asarray(center, dtype=np.float64)
    sx, sy, sz = semi
    ex = np.array([1.0, 0.0, 0.0])
    ey = np.array([0.0, 1.0, 0.0])
    ez = np.array([0.0, 0.0, 1.0])
    rings = []
    for i in range(1, n_lat + 1):
        th = np.pi * i / (n_lat + 1)
        c = center - sy * np.cos(th) * ey
        rings.append((c, sx * np.sin(th) * ex, sz * np.sin(th) * ez))
    # r1 x r2 = x-hat cross z-hat scaled = -y... flip r2 so the frame points +y
    rings = [(c, r1, -r2) for c, r1, r2 in rings]
    verts, faces = _lathe(center - sy * ey, center + sy * ey, rings, n_rad)
    anchors = np.repeat(center[None, :], verts.shape[0], axis=0)
    return verts, faces, anchors


def _torso_weights(ys, joint_y, J):
    """Blend pelvis/spine/chest linearly along y between their rest heights."""
    w = np.zeros((ys.shape[0], J))
    y_pelvis, y_spine, y_chest = joint_y[0], joint_y[1], joint_y[2]
    for i, y in enumerate(ys):
        if y >= y_pelvis:
            w[i, 0] = 1.0
        elif y <= y_chest:
            w[i, 2] = 1.0
        elif y >= y_spine:  # between pelvis and spine
            u = (y_pelvis - y) / (y_pelvis - y_spine)
            w[i, 0] = 1.0 - u
            w[i, 1] = u
        else:  # between spine and chest
            u = (y_spine - y) / (y_spine - y_chest)
            w[i, 1] = 1.0 - u
            w[i, 2] = u
    return w


def _capsule_weights(verts, p0, p1, prox, dist, J):
    """Mostly the proximal joint; distal ramps in over the far quarter."""
    axis = p1 - p0
    L2 = float(np.dot(axis, axis))
    u = ((verts - p0) @ axis) / L2
    tip = np.clip((u - 0.75) / 0.25, 0.0, 1.0) * 0.5
    w = np.zeros((verts.shape[0], J))
    w[:, prox] = 1.0 - tip
    w[:, dist] = tip
    return w


def make_toy_model(spec=None):
    """Build the deterministic procedural humanoid for a given spec.

    Same spec (including seed) always yields byte-identical arrays. The
    template is mean-centered so silhouette-moment initialization can read
    translation straight off the foreground centroid.
    """
    if spec is None:
        spec = ToyModelSpec()
    J = spec.joints
    rng = np.random.default_rng(spec.seed)

    joint_pos = np.array([row[2] for row in _JOINT_TABLE[:J]], dtype=np.float64)
    parents = np.array([row[1] for row in _JOINT_TABLE[:J]], dtype=np.int64)

    res = np.sqrt(spec.vertex_budget / 550.0)
    res = min(max(res, 0.55), 2.5)

    def n(base, lo=3):
        return max(lo, int(round(base * res)))

    parts = []  # (verts, faces, anchors, weights)

    v, f, anc = _ellipsoid((0.0, -0.13, 0.0), (0.13, 0.175, 0.075), n(12, 6), n(9, 4))
    parts.append((v, f, anc, _torso_weights(v[:, 1], joint_pos[:, 1], J)))

    if J > 3:
        v, f, anc = _ellipsoid((0.0, -0.40, 0.0), (0.068, 0.085, 0.07), n(10, 6), n(7, 4))
        w = np.zeros((v.shape[0], J))
        w[:, 3] = 1.0
        parts.append((v, f, anc, w))

    for dist in range(3, J):
        if dist not in _CAPSULE_SPECS:
            continue
        radius, prox = _CAPSULE_SPECS[dist]
        p0, p1 = joint_pos[prox], joint_pos[dist]
        length = np.linalg.norm(p1 - p0)
        n_ax = max(2, int(round(length / 0.07 * res)))
        n_rad = n(8 if radius > 0.045 else 7, 5)
        v, f, anc = _capsule(p0, p1, radius, n_rad, n_ax)
        parts.append((v, f, anc, _capsule_weights(v, p0, p1, prox, dist, J)))

    verts_list, faces_list, anchor_list, weight_list = [], [], [], []
    offset = 0
    for v, f, anc, w in parts:
        verts_list.append(v)
        faces_list.append(f + offset)
        anchor_list.append(anc)
        weight_list.append(w)
        offset += v.shape[0]
    template = np.concatenate(verts_list, axis=0)
    faces = np.concatenate(faces_list, axis=0)
    anchors = np.concatenate(anchor_list, axis=0)
    skin = np.concatenate(weight_list, axis=0)

    # Center so the vertex centroid sits at the origin; shift the joint
    # targets along so the regressor still lands on the skeleton.
    center = template.mean(axis=0)
    template = template - center
    anchors = anchors - center
    joint_targets = joint_pos - center

    V = template.shape[0]
    if V < 100:
        raise ValueError("vertex_budget %d produced only %d vertices" % (spec.vertex_budget, V))

    # Joint regressor: gaussian weights over the nearest template vertices.
    regressor = np.zeros((J, V))
    k_near = min(V, max(8, int(round(12 * res))))
    for j in range(J):
        d2 = np.sum((template - joint_targets[j]) ** 2, axis=1)
        idx = np.argsort(d2, kind="stable")[:k_near]
        wj = np.exp(-d2[idx] / (2.0 * 0.06**2))
        wj /= wj.sum()
        regressor[j, idx] = wj

    # Shape basis: height, girth, torso/leg balance, arm span, then seeded
    # smooth fields. Per-unit-coefficient displacement stays below ~0.09.
    B = spec.shape_coeffs
    basis = np.zeros((V, 3, B))
    basis[:, 1, 0] = 0.12 * template[:, 1]
    if B >= 2:
        basis[:, :, 1] = 0.30 * (template - anchors)
    if B >= 3:
        basis[:, 1, 2] = 0.08 * np.tanh(template[:, 1] / 0.15)
    if B >= 4:
        basis[:, 0, 3] = 0.10 * template[:, 0]
    for b in range(4, B):
        freq = rng.uniform(3.0, 7.0, size=(3, 3))
        phase = rng.uniform(0.0, 2.0 * np.pi, size=3)
        amp = rng.uniform(0.015, 0.03, size=3)
        for axis in range(3):
            basis[:, axis, b] = amp[axis] * np.sin(template @ freq[axis] + phase[axis])

    skin = skin / skin.sum(axis=1, keepdims=True)
    regressor = regressor / regressor.sum(axis=1, keepdims=True)

    return BodyModel(
        template_vertices=template,
        faces=faces,
        shape_basis=basis,
        joint_regressor=regressor,
        skinning_weights=skin,
        kinematic_parents=parents,
    )
