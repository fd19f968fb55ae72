"""Parametric toy body: shape blendshapes, axis-angle pose, linear skinning.

The model mirrors the structure of statistical body models (template +
per-vertex shape displacements, a joint regressor, a kinematic tree, skin
weights) at a scale where every fit runs in milliseconds. ``make_toy_model``
builds a capsule-limb humanoid whose joint regressor reproduces the skeleton
scaffold exactly; shape coefficient 0 scales torso girth and the remaining
coefficients are smooth random orthonormal displacement fields.

Two forward paths exist on purpose: the plain numpy functions
(:func:`forward` and friends) and the tape-building :func:`forward_vars`
used inside optimization objectives. Tests pin them to each other.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionError, FormatError, IoError

MODEL_FORMAT = "omrfit-model/1"

# Part labels used by face_part and mask channels.
PART_NAMES = {1: "head", 2: "torso", 3: "l_arm", 4: "r_arm", 5: "l_leg", 6: "r_leg"}

# Mean per-vertex displacement (meters) of one unit of shape coefficient 0.
GIRTH_METERS_PER_UNIT = 0.014
# 3N-norm of each remaining shape axis.
_EXTRA_AXIS_NORM = 0.05
_RING_SEGMENTS = 10


@dataclass
class MeshParams:
    """Full per-sample state: shape, pose, and weak-perspective camera."""

    beta: np.ndarray
    theta: np.ndarray
    scale: float = 1.0
    trans: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64).ravel()
        self.theta = np.asarray(self.theta, dtype=np.float64).ravel()
        self.scale = float(self.scale)
        self.trans = np.asarray(self.trans, dtype=np.float64).ravel()
        if self.trans.size != 2:
            raise DimensionError(f"trans must have 2 entries, got {self.trans.size}")

    def copy(self):
        return MeshParams(self.beta.copy(), self.theta.copy(), self.scale, self.trans.copy())

    @classmethod
    def neutral(cls, n_shape, n_joints):
        """Mean shape, rest pose, unit-scale centered camera."""
        return cls(beta=np.zeros(n_shape), theta=np.zeros(3 * n_joints))

    def to_vector(self):
        return np.concatenate([self.beta, self.theta, [self.scale], self.trans])

    @classmethod
    def from_vector(cls, vec, n_shape, n_joints):
        vec = np.asarray(vec, dtype=np.float64).ravel()
        need = n_shape + 3 * n_joints + 3
        if vec.size != need:
            raise DimensionError(f"parameter vector has {vec.size} entries, expected {need}")
        return cls(
            beta=vec[:n_shape],
            theta=vec[n_shape : n_shape + 3 * n_joints],
            scale=float(vec[n_shape + 3 * n_joints]),
            trans=vec[n_shape + 3 * n_joints + 1 :],
        )

    def to_dict(self):
        return {
            "beta": self.beta.tolist(),
            "theta": self.theta.tolist(),
            "scale": self.scale,
            "trans": self.trans.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(beta=d["beta"], theta=d["theta"], scale=d["scale"], trans=d["trans"])
        except KeyError as e:
            raise FormatError(f"mesh parameter dict missing key {e}") from e


@dataclass(frozen=True)
class BodyModel:
    """Immutable body model. Arrays are marked read-only after construction."""

    name: str
    template: np.ndarray  # (N, 3)
    shape_dirs: np.ndarray  # (N, 3, n_shape)
    faces: np.ndarray  # (F, 3) int32
    face_part: np.ndarray  # (F,) int32, values 1..6
    joint_regressor: np.ndarray  # (K, N), rows sum to 1
    skin_weights: np.ndarray  # (N, K), rows sum to 1
    parents: np.ndarray  # (K,) int32, parents[0] == 0

    def __post_init__(self):
        for name in ("template", "shape_dirs", "joint_regressor", "skin_weights"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        for name in ("faces", "face_part", "parents"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int32))
        for name in (
            "template",
            "shape_dirs",
            "faces",
            "face_part",
            "joint_regressor",
            "skin_weights",
            "parents",
        ):
            getattr(self, name).setflags(write=False)

    @property
    def n_vertices(self):
        return self.template.shape[0]

    @property
    def n_joints(self):
        return self.parents.shape[0]

    @property
    def n_shape(self):
        return self.shape_dirs.shape[2]

    @property
    def n_faces(self):
        return self.faces.shape[0]


def validate_model(model):
    """Check structural invariants; raise ConfigError on violation."""
    n, k = model.n_vertices, model.n_joints
    if model.template.shape != (n, 3):
        raise ConfigError(f"template shape {model.template.shape} is not (N, 3)")
    if model.shape_dirs.shape[:2] != (n, 3):
        raise ConfigError("shape_dirs must be (N, 3, n_shape)")
    if model.faces.ndim != 2 or model.faces.shape[1] != 3:
        raise ConfigError("faces must be (F, 3)")
    if model.faces.size and (model.faces.min() < 0 or model.faces.max() >= n):
        raise ConfigError("face indices out of vertex range")
    if model.face_part.shape != (model.n_faces,):
        raise ConfigError("face_part must have one label per face")
    if model.face_part.size and not np.all((model.face_part >= 1) & (model.face_part <= 6)):
        raise ConfigError("face_part labels must lie in 1..6")
    if model.joint_regressor.shape != (k, n):
        raise ConfigError("joint_regressor must be (K, N)")
    if model.skin_weights.shape != (n, k):
        raise ConfigError("skin_weights must be (N, K)")
    for mat, axis, what in ((model.joint_regressor, 1, "joint_regressor"), (model.skin_weights, 1, "skin_weights")):
        if mat.min() < -1e-12:
            raise ConfigError(f"{what} has negative entries")
        sums = mat.sum(axis=axis)
        if not np.allclose(sums, 1.0, atol=1e-6):
            raise ConfigError(f"{what} rows must sum to 1 (max deviation {np.abs(sums - 1).max():.2e})")
    if model.parents[0] != 0:
        raise ConfigError("joint 0 must be its own parent (tree root)")
    if k > 1 and not np.all(model.parents[1:] < np.arange(1, k)):
        raise ConfigError("parents[j] < j required for j >= 1 (tree order)")
    if not np.all(np.isfinite(model.template)) or not np.all(np.isfinite(model.shape_dirs)):
        raise ConfigError("model arrays must be finite")
    return model


# ---------------------------------------------------------------------------
# Rotations


def _rot_coeffs(sq):
    """Rotation coefficients a = sin(t)/t, b = (1 - cos t)/t^2 for sq = t^2.

    Returns (a, b, da/dsq, db/dsq). Below sq = 1e-8 the closed forms cancel,
    so a second-order series in sq is used (truncation error ~sq^3/5040).
    """
    sq = np.asarray(sq, dtype=np.float64)
    small = sq < 1e-8
    safe = np.where(small, 1.0, sq)
    t = np.sqrt(safe)
    sin_t, cos_t = np.sin(t), np.cos(t)
    a = np.where(small, 1.0 - sq / 6.0 + sq * sq / 120.0, sin_t / t)
    b = np.where(small, 0.5 - sq / 24.0 + sq * sq / 720.0, (1.0 - cos_t) / safe)
    da = np.where(small, -1.0 / 6.0 + sq / 60.0, (t * cos_t - sin_t) / (2.0 * safe * t))
    db = np.where(
        small, -1.0 / 24.0 + sq / 360.0, (t * sin_t - 2.0 * (1.0 - cos_t)) / (2.0 * safe * safe)
    )
    return a, b, da, db


def _skew(w):
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def rodrigues_all(thetas):
    """Axis-angle vectors (..., 3) -> rotation matrices (..., 3, 3)."""
    thetas = np.asarray(thetas, dtype=np.float64)
    sq = (thetas * thetas).sum(axis=-1)
    a, b, _, _ = _rot_coeffs(sq)
    K = _skew(thetas)
    K2 = K @ K
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * K2


def rodrigues(axis_angle):
    """Single axis-angle vector (3,) -> rotation matrix (3, 3)."""
    axis_angle = np.asarray(axis_angle, dtype=np.float64)
    if axis_angle.shape != (3,):
        raise DimensionError(f"axis-angle vector must have shape (3,), got {axis_angle.shape}")
    return rodrigues_all(axis_angle[None])[0]


def _skewdot(m):
    """Contraction <M, E_k> with the skew basis, i.e. the 'curl' of M."""
    return np.stack(
        [
            m[..., 2, 1] - m[..., 1, 2],
            m[..., 0, 2] - m[..., 2, 0],
            m[..., 1, 0] - m[..., 0, 1],
        ],
        axis=-1,
    )


def rodrigues_all_vjp(thetas, g):
    """VJP of rodrigues_all: adjoint (..., 3, 3) -> gradient (..., 3)."""
    thetas = np.asarray(thetas, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    sq = (thetas * thetas).sum(axis=-1)
    a, b, da, db = _rot_coeffs(sq)
    K = _skew(thetas)
    K2 = K @ K
    Kt = np.swapaxes(K, -1, -2)
    lin = a[..., None] * _skewdot(g)
    lin2 = b[..., None] * _skewdot(g @ Kt + Kt @ g)
    dot_k = (g * K).sum(axis=(-1, -2))
    dot_k2 = (g * K2).sum(axis=(-1, -2))
    scal = 2.0 * (da * dot_k + db * dot_k2)
    return lin + lin2 + scal[..., None] * thetas


def rodrigues_vars(theta_mat):
    """Graph op: axis-angle matrix Var (K, 3) -> rotation Var (K, 3, 3)."""
    tm = ad.asvar(theta_mat)
    r = rodrigues_all(tm.value)

    def vjp(g):
        return (rodrigues_all_vjp(tm.value, g),)

    return ad.Var(r, (tm,), vjp, op="rodrigues")


# ---------------------------------------------------------------------------
# Forward model (plain numpy)


def shaped_vertices(model, beta):
    """Template plus shape blendshapes: T-pose vertices for coefficients beta."""
    beta = np.asarray(beta, dtype=np.float64).ravel()
    if beta.size != model.n_shape:
        raise DimensionError(f"beta has {beta.size} entries, model expects {model.n_shape}")
    return model.template + model.shape_dirs @ beta


def tpose_vertices(model, beta):
    """Alias of :func:`shaped_vertices`; the T-pose used by PVE-T."""
    return shaped_vertices(model, beta)


def regress_joints(model, vertices):
    """Joint locations as convex combinations of vertices (W @ V)."""
    if vertices.shape != (model.n_vertices, 3):
        raise DimensionError(f"vertices shape {vertices.shape} does not match model")
    return model.joint_regressor @ vertices


def forward_kinematics(model, theta, rest_joints):
    """Per-joint skinning transforms (4x4), i.e. world transform times inverse rest.

    Joint 0 rotates about ``rest_joints[0]``; every other joint composes its
    parent's world transform with a local rotation about its rest offset.
    With theta = 0 every returned transform is the identity.
    """
    k = model.n_joints
    theta = np.asarray(theta, dtype=np.float64).ravel()
    if theta.size != 3 * k:
        raise DimensionError(f"theta has {theta.size} entries, model expects {3 * k}")
    rot = rodrigues_all(theta.reshape(k, 3))
    t_local = rest_joints.copy()
    t_local[1:] -= rest_joints[model.parents[1:]]
    local = np.zeros((k, 4, 4))
    local[:, :3, :3] = rot
    local[:, :3, 3] = t_local
    local[:, 3, 3] = 1.0
    world = np.empty((k, 4, 4))
    world[0] = local[0]
    for j in range(1, k):
        world[j] = world[model.parents[j]] @ local[j]
    skin = world.copy()
    skin[:, :3, 3] -= np.einsum("kab,kb->ka", world[:, :3, :3], rest_joints)
    return skin


def skin_vertices(model, vertices, transforms):
    """Linear blend skinning of T-pose ``vertices`` by per-joint transforms."""
    if transforms.shape != (model.n_joints, 4, 4):
        raise DimensionError(f"transforms shape {transforms.shape} does not match model")
    per_vertex = np.einsum("nk,kab->nab", model.skin_weights, transforms)
    return (
        np.einsum("nab,nb->na", per_vertex[:, :3, :3], vertices) + per_vertex[:, :3, 3]
    )


def forward(model, params):
    """Posed vertices and regressed joints (body frame, no camera).

    Returns ``(vertices (N, 3), joints3d (K, 3))``; joints are regressed from
    the posed vertices so they follow the skinned surface.
    """
    shaped = shaped_vertices(model, params.beta)
    rest = regress_joints(model, shaped)
    transforms = forward_kinematics(model, params.theta, rest)
    posed = skin_vertices(model, shaped, transforms)
    return posed, regress_joints(model, posed)


# ---------------------------------------------------------------------------
# Forward model (autodiff graph)


def _assemble_rigid(rot, trans):
    """Stack rotation (K, 3, 3) and translation (K, 3) Vars into (K, 4, 4)."""
    rot = ad.asvar(rot)
    trans = ad.asvar(trans)
    k = rot.value.shape[0]
    out = np.zeros((k, 4, 4))
    out[:, :3, :3] = rot.value
    out[:, :3, 3] = trans.value
    out[:, 3, 3] = 1.0

    def vjp(g):
        return g[:, :3, :3], g[:, :3, 3]

    return ad.Var(out, (rot, trans), vjp, op="assemble_rigid")


def forward_vars(model, beta, theta):
    """Graph version of :func:`forward`; returns (vertices Var, joints Var)."""
    beta = ad.asvar(beta)
    theta = ad.asvar(theta)
    if beta.size != model.n_shape or theta.size != 3 * model.n_joints:
        raise DimensionError("beta/theta sizes do not match model")
    k = model.n_joints
    shaped = ad.einsum("nds,s->nd", model.shape_dirs, beta) + model.template
    rest = ad.matmul(model.joint_regressor, shaped)
    rot = rodrigues_vars(theta.reshape((k, 3)))
    offsets = rest - rest[np.asarray(model.parents)]
    root_mask = np.zeros((k, 1))
    root_mask[0, 0] = 1.0
    t_local = offsets + root_mask * rest[0:1, :]
    local = _assemble_rigid(rot, t_local)
    world_list = [local[0]]
    for j in range(1, k):
        world_list.append(ad.matmul(world_list[model.parents[j]], local[j]))
    world = ad.stack(world_list, axis=0)
    eye = np.broadcast_to(np.eye(3), (k, 3, 3)).copy()
    inv_rest = _assemble_rigid(eye, -rest)
    skin = ad.matmul(world, inv_rest)
    per_vertex = ad.einsum("nk,kab->nab", model.skin_weights, skin)
    posed = ad.einsum("nab,nb->na", per_vertex[:, :3, :3], shaped) + per_vertex[:, :3, 3]
    joints = ad.matmul(model.joint_regressor, posed)
    return posed, joints


# ---------------------------------------------------------------------------
# Toy model construction

# (name, parent name, scaffold position). Order fixes joint indices; the
# first n_joints entries are used, so parents always precede children.
_TOY_JOINTS = [
    ("pelvis", None, (0.0, 0.0, 0.0)),
    ("chest", "pelvis", (0.0, 0.30, 0.0)),
    ("neck", "chest", (0.0, 0.50, 0.0)),
    ("head", "neck", (0.0, 0.66, 0.0)),
    ("l_hip", "pelvis", (0.10, -0.04, 0.0)),
    ("r_hip", "pelvis", (-0.10, -0.04, 0.0)),
    ("l_shoulder", "chest", (0.20, 0.44, 0.0)),
    ("r_shoulder", "chest", (-0.20, 0.44, 0.0)),
    ("l_knee", "l_hip", (0.11, -0.46, 0.0)),
    ("r_knee", "r_hip", (-0.11, -0.46, 0.0)),
    ("l_elbow", "l_shoulder", (0.48, 0.44, 0.0)),
    ("r_elbow", "r_shoulder", (-0.48, 0.44, 0.0)),
    ("l_ankle", "l_knee", (0.12, -0.86, 0.0)),
    ("r_ankle", "r_knee", (-0.12, -0.86, 0.0)),
    ("l_wrist", "l_elbow", (0.74, 0.44, 0.0)),
    ("r_wrist", "r_elbow", (-0.74, 0.44, 0.0)),
    ("l_toe", "l_ankle", (0.12, -0.91, 0.10)),
    ("r_toe", "r_ankle", (-0.12, -0.91, 0.10)),
    ("l_hand", "l_wrist", (0.84, 0.44, 0.0)),
    ("r_hand", "r_wrist", (-0.84, 0.44, 0.0)),
    ("jaw", "head", (0.0, 0.60, 0.06)),
    ("l_clav", "chest", (0.08, 0.42, 0.0)),
    ("r_clav", "chest", (-0.08, 0.42, 0.0)),
    ("nose", "head", (0.0, 0.64, 0.09)),
]

# Tube of the bone ending at this joint: (radius at parent, radius at child,
# mid bulge, part label). Joints without a tube (hips, shoulders, jaw, ...)
# are junctions; their regressor anchor is the first ring of a child tube.
_TOY_TUBES = {
    "chest": (0.130, 0.115, 0.020, 2),
    "neck": (0.105, 0.060, 0.000, 2),
    "head": (0.050, 0.050, 0.036, 1),
    "l_knee": (0.075, 0.055, 0.000, 5),
    "r_knee": (0.075, 0.055, 0.000, 6),
    "l_ankle": (0.055, 0.040, 0.000, 5),
    "r_ankle": (0.055, 0.040, 0.000, 6),
    "l_elbow": (0.047, 0.040, 0.000, 3),
    "r_elbow": (0.047, 0.040, 0.000, 4),
    "l_wrist": (0.040, 0.032, 0.000, 3),
    "r_wrist": (0.040, 0.032, 0.000, 4),
    "l_toe": (0.030, 0.025, 0.000, 5),
    "r_toe": (0.030, 0.025, 0.000, 6),
    "l_hand": (0.030, 0.026, 0.000, 3),
    "r_hand": (0.030, 0.026, 0.000, 4),
}


def _ring_basis(axis):
    ref = np.array([1.0, 0.0, 0.0])
    if abs(axis @ ref) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    u = np.cross(axis, ref)
    u /= np.linalg.norm(u)
    return u, np.cross(axis, u)


def _distribute_rings(lengths, total):
    """Split ``total`` rings over tubes, >= 2 each, proportionally to length."""
    n = len(lengths)
    base = np.full(n, 2, dtype=int)
    extra = total - 2 * n
    if extra <= 0:
        return base
    quota = extra * np.asarray(lengths) / np.sum(lengths)
    counts = np.floor(quota).astype(int)
    rem = quota - counts
    for i in np.argsort(-rem, kind="stable")[: extra - counts.sum()]:
        counts[i] += 1
    return base + counts


def _girth_field(template):
    """Radial torso-belt displacement, scaled to GIRTH_METERS_PER_UNIT mean norm."""
    x, y, z = template[:, 0], template[:, 1], template[:, 2]
    r_axis = np.hypot(x, z)
    safe_r = np.maximum(r_axis, 1e-6)
    belt = np.exp(-(((y - 0.16) / 0.24) ** 4))
    near = np.exp(-((r_axis / 0.32) ** 4))
    amp = belt * near
    out = np.stack([amp * x / safe_r, np.zeros_like(y), amp * z / safe_r], axis=1)
    mean_norm = np.linalg.norm(out, axis=1).mean()
    return out * (GIRTH_METERS_PER_UNIT / mean_norm)


def make_toy_model(seed=0, n_vertices=602, n_joints=16, n_shape=10):
    """Build the deterministic toy humanoid.

    ``n_vertices`` is a target: ring counts are rounded to the closest
    achievable mesh (the default hits 602 exactly). Tube radii and the
    skeleton scaffold are fixed; ``seed`` only drives the random shape axes.
    """
    if n_vertices < 100:
        raise ConfigError(f"n_vertices must be >= 100, got {n_vertices}")
    if not 8 <= n_joints <= 24:
        raise ConfigError(f"n_joints must lie in 8..24, got {n_joints}")
    if not 1 <= n_shape <= 32:
        raise ConfigError(f"n_shape must lie in 1..32, got {n_shape}")

    names = [j[0] for j in _TOY_JOINTS[:n_joints]]
    index = {name: i for i, name in enumerate(names)}
    parents = np.array([index[j[1]] if j[1] else 0 for j in _TOY_JOINTS[:n_joints]], dtype=np.int32)
    scaffold = np.array([j[2] for j in _TOY_JOINTS[:n_joints]], dtype=np.float64)

    tubes = [
        (index[child], parents[index[child]], _TOY_TUBES[child])
        for child in names
        if child in _TOY_TUBES
    ]
    seg = _RING_SEGMENTS
    lengths = [np.linalg.norm(scaffold[c] - scaffold[p]) for c, p, _ in tubes]
    ring_total = max(2 * len(tubes), int(round((n_vertices - 2 * len(tubes)) / seg)))
    rings_per_tube = _distribute_rings(lengths, ring_total)

    verts = []
    faces = []
    face_part = []
    anchors_end = {}  # joint -> vertex ids of the ring centered at it (tube end)
    anchors_start = {}  # joint -> vertex ids of the first ring of a child tube
    skin_rows = []  # (vertex id, joint a, joint b, blend toward b)

    tube_parents = {p for _, p, _ in tubes}
    for (child, parent, (r0, r1, bulge, part)), n_rings in zip(tubes, rings_per_tube):
        a, b = scaffold[parent], scaffold[child]
        axis = (b - a) / np.linalg.norm(b - a)
        u, w = _ring_basis(axis)
        cap_weight = 0.5 if child in tube_parents else 1.0
        ts = np.linspace(0.0, 1.0, n_rings)
        ring_ids = []
        for t in ts:
            center = a + t * (b - a)
            radius = r0 + (r1 - r0) * t + bulge * np.sin(np.pi * t)
            ids = []
            for kseg in range(seg):
                phi = 2.0 * np.pi * kseg / seg
                verts.append(center + radius * (np.cos(phi) * u + np.sin(phi) * w))
                ids.append(len(verts) - 1)
            ring_ids.append(ids)
            ramp = np.clip((t - 0.45) / 0.55, 0.0, 1.0)
            blend = cap_weight * (ramp * ramp * (3.0 - 2.0 * ramp))
            skin_rows.extend((vid, parent, child, blend) for vid in ids)
        # end caps: one vertex just past each end of the tube
        cap0 = len(verts)
        verts.append(a - 0.35 * (r0 + bulge * 0.0) * axis)
        skin_rows.append((cap0, parent, child, 0.0))
        cap1 = len(verts)
        verts.append(b + 0.35 * r1 * axis)
        skin_rows.append((cap1, parent, child, cap_weight))
        for i in range(n_rings - 1):
            lo, hi = ring_ids[i], ring_ids[i + 1]
            for kseg in range(seg):
                k2 = (kseg + 1) % seg
                faces.append((lo[kseg], lo[k2], hi[k2]))
                faces.append((lo[kseg], hi[k2], hi[kseg]))
                face_part.extend((part, part))
        for kseg in range(seg):
            k2 = (kseg + 1) % seg
            faces.append((cap0, ring_ids[0][k2], ring_ids[0][kseg]))
            faces.append((cap1, ring_ids[-1][kseg], ring_ids[-1][k2]))
            face_part.extend((part, part))
        anchors_end[child] = ring_ids[-1]
        anchors_start.setdefault(parent, ring_ids[0])

    template = np.asarray(verts)
    n = template.shape[0]

    skin_weights = np.zeros((n, n_joints))
    for vid, ja, jb, blend in skin_rows:
        skin_weights[vid, jb] += blend
        skin_weights[vid, ja] += 1.0 - blend

    regressor = np.zeros((n_joints, n))

    def anchor_ring(j):
        if j in anchors_end:
            return anchors_end[j]
        if j in anchors_start:
            return anchors_start[j]
        return anchor_ring(int(parents[j]))

    for j in range(n_joints):
        regressor[j, anchor_ring(j)] = 1.0 / seg

    rng = np.random.default_rng(seed)
    dirs = np.zeros((n, 3, n_shape))
    girth = _girth_field(template)
    dirs[:, :, 0] = girth
    basis = [girth.ravel() / np.linalg.norm(girth.ravel())]
    for axi in range(1, n_shape):
        vec = None
        for _ in range(16):
            f = np.zeros((n, 3))
            for c in range(3):
                for m in range(3):
                    kvec = rng.normal(size=3)
                    kvec *= rng.uniform(2.0, 6.0) / np.linalg.norm(kvec)
                    phase = rng.uniform(0.0, 2.0 * np.pi)
                    f[:, c] += rng.normal() / (m + 1.0) * np.sin(template @ kvec + phase)
            cand = f.ravel()
            for bvec in basis:
                cand = cand - (cand @ bvec) * bvec
            norm = np.linalg.norm(cand)
            if norm > 1e-3:
                vec = cand / norm
                break
        if vec is None:
            raise ConfigError("failed to draw an independent shape axis")
        basis.append(vec)
        dirs[:, :, axi] = _EXTRA_AXIS_NORM * vec.reshape(n, 3)

    model = BodyModel(
        name=f"toy-s{seed}-v{n}-j{n_joints}-b{n_shape}",
        template=template,
        shape_dirs=dirs,
        faces=np.asarray(faces, dtype=np.int32),
        face_part=np.asarray(face_part, dtype=np.int32),
        joint_regressor=regressor,
        skin_weights=skin_weights,
        parents=parents,
    )
    return validate_model(model)


# ---------------------------------------------------------------------------
# Serialization


def save_model(model, path):
    """Write the model as versioned JSON (arrays flattened row-major)."""
    doc = {
        "version": MODEL_FORMAT,
        "name": model.name,
        "n_vertices": model.n_vertices,
        "n_joints": model.n_joints,
        "n_shape": model.n_shape,
        "n_faces": model.n_faces,
        "template": model.template.ravel().tolist(),
        "faces": model.faces.ravel().tolist(),
        "face_part": model.face_part.ravel().tolist(),
        "shape_dirs": model.shape_dirs.ravel().tolist(),
        "joint_regressor": model.joint_regressor.ravel().tolist(),
        "skin_weights": model.skin_weights.ravel().tolist(),
        "parents": model.parents.ravel().tolist(),
    }
    try:
        with open(path, "w") as f:
            json.dump(doc, f)
    except OSError as e:
        raise IoError(f"cannot write model file {path}: {e}") from e


def load_model(path):
    """Read a model JSON written by :func:`save_model`; validates invariants."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise IoError(f"cannot read model file {path}: {e}") from e
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise FormatError(f"model file {path} is not valid JSON: {e.msg}", offset=e.pos) from e
    if not isinstance(doc, dict) or doc.get("version") != MODEL_FORMAT:
        raise FormatError(
            f"model file {path} has version {doc.get('version')!r}, expected {MODEL_FORMAT!r}"
        )
    try:
        n, k, s, nf = (int(doc[key]) for key in ("n_vertices", "n_joints", "n_shape", "n_faces"))
        model = BodyModel(
            name=str(doc["name"]),
            template=np.asarray(doc["template"], dtype=np.float64).reshape(n, 3),
            shape_dirs=np.asarray(doc["shape_dirs"], dtype=np.float64).reshape(n, 3, s),
            faces=np.asarray(doc["faces"], dtype=np.int32).reshape(nf, 3),
            face_part=np.asarray(doc["face_part"], dtype=np.int32).reshape(nf),
            joint_regressor=np.asarray(doc["joint_regressor"], dtype=np.float64).reshape(k, n),
            skin_weights=np.asarray(doc["skin_weights"], dtype=np.float64).reshape(n, k),
            parents=np.asarray(doc["parents"], dtype=np.int32).reshape(k),
        )
    except (KeyError, ValueError, TypeError) as e:
        raise FormatError(f"model file {path} is malformed: {e}") from e
    return validate_model(model)
