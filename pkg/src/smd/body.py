"""Procedural parametric humanoid and synthetic labelled motion data.

Stand-in for a licensed statistical body model: a fixed-topology surface built
from tubes around a 16-joint skeleton, eight linear blendshapes, linear blend
skinning, and procedural gait curves for eight action classes.

Coordinates: y up, floor at y = 0, the body faces +z in its rest frame, its
left side is +x. Units are meters and radians.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import formats
from .spectral import MeshTopology

ACTIONS = ("walk", "run", "jump", "wave", "squat", "turn", "kick", "idle-sway")
NUM_ACTIONS = len(ACTIONS)
NUM_BETAS = 8
BETA_BOUND = 2.5

JOINT_NAMES = (
    "pelvis", "spine", "chest", "head",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle",
    "r_hip", "r_knee", "r_ankle",
)
PARENTS = np.array([-1, 0, 1, 2, 2, 4, 5, 2, 7, 8, 0, 10, 11, 0, 13, 14])
MIRROR_JOINT = np.array([0, 1, 2, 3, 7, 8, 9, 4, 5, 6, 13, 14, 15, 10, 11, 12])
J = len(JOINT_NAMES)

PELVIS, SPINE, CHEST, HEAD = 0, 1, 2, 3
L_SHOULDER, L_ELBOW, L_WRIST = 4, 5, 6
R_SHOULDER, R_ELBOW, R_WRIST = 7, 8, 9
L_HIP, L_KNEE, L_ANKLE = 10, 11, 12
R_HIP, R_KNEE, R_ANKLE = 13, 14, 15

# rest-pose joint locations (left side; right side is mirrored)
_TORSO_RINGS = np.array([0.84, 0.95, 1.05, 1.15, 1.25, 1.35, 1.44, 1.52])
_TORSO_RX = np.array([0.150, 0.165, 0.145, 0.135, 0.155, 0.170, 0.130, 0.060])
_TORSO_RZ = np.array([0.105, 0.110, 0.100, 0.095, 0.105, 0.110, 0.090, 0.055])
_ARM_RINGS = np.array([0.18, 0.26, 0.36, 0.46, 0.56, 0.64, 0.72, 0.79, 0.86])
_ARM_R = np.array([0.055, 0.052, 0.047, 0.042, 0.040, 0.036, 0.033, 0.040, 0.030])
_ARM_Y = 1.44
_LEG_RINGS = np.array([0.92, 0.82, 0.71, 0.60, 0.50, 0.40, 0.30, 0.20, 0.10])
_LEG_R = np.array([0.080, 0.078, 0.070, 0.060, 0.052, 0.055, 0.050, 0.042, 0.040])
_HIP_X = 0.10
_FOOT_Z = np.array([-0.06, -0.01, 0.04, 0.09, 0.14, 0.19])
_HEAD_CENTER = np.array([0.0, 1.66, 0.0])
_HEAD_R = 0.10
_BLEND = 0.06  # half-width of the skin-weight blend zone around a joint


@dataclass
class BodyModel:
    topology: MeshTopology
    template: np.ndarray         # (N, 3)
    shape_basis: np.ndarray      # (S, N, 3)
    parents: np.ndarray          # (J,)
    rest_joints: np.ndarray      # (J, 3) template joint positions
    joint_regressor: np.ndarray  # (J, N), rows sum to 1
    skin_weights: np.ndarray     # (N, J), row-stochastic
    sole_vertices: dict          # {"left": idx, "right": idx} flat-bottom foot vertices
    pelvis_sides: dict           # {"left": idx, "right": idx} pelvis-ring vertices by side
    seed: int = 0

    @property
    def n_vertices(self) -> int:
        return self.template.shape[0]

    @property
    def rest_offsets(self) -> np.ndarray:
        off = self.rest_joints.copy()
        off[1:] -= self.rest_joints[self.parents[1:]]
        return off


@dataclass
class ShapeParams:
    betas: np.ndarray

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64).reshape(-1)
        if self.betas.shape[0] != NUM_BETAS:
            raise ValueError(f"expected {NUM_BETAS} betas, got {self.betas.shape[0]}")
        if np.any(np.abs(self.betas) > BETA_BOUND):
            raise ValueError(f"betas must lie in [-{BETA_BOUND}, {BETA_BOUND}]")

    @classmethod
    def zeros(cls) -> "ShapeParams":
        return cls(np.zeros(NUM_BETAS))


@dataclass
class PoseParams:
    joint_rotations: np.ndarray  # (J, 3) axis-angle
    root_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    root_yaw: float = 0.0

    def __post_init__(self):
        self.joint_rotations = np.asarray(self.joint_rotations, dtype=np.float64).reshape(J, 3)
        self.root_translation = np.asarray(self.root_translation, dtype=np.float64).reshape(3)
        if np.any(np.linalg.norm(self.joint_rotations, axis=1) > np.pi + 1e-9):
            raise ValueError("joint rotation magnitude exceeds pi")

    @classmethod
    def zero(cls) -> "PoseParams":
        return cls(np.zeros((J, 3)))


@dataclass
class MotionSequence:
    frames: np.ndarray  # (F, N, 3)
    action_id: int
    fps: float
    shape: ShapeParams | None = None
    # ground-truth generator state, present for synthetic motions only
    joint_rotations: np.ndarray | None = None   # (F, J, 3)
    root_translation: np.ndarray | None = None  # (F, 3)
    root_yaw: np.ndarray | None = None          # (F,)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[2] != 3:
            raise ValueError(f"frames must be F x N x 3, got {self.frames.shape}")
        if self.frames.shape[0] < 2:
            raise ValueError("a motion needs at least 2 frames")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


# ------------------------------------------------------------ mesh building

class _MeshBuilder:
    def __init__(self):
        self.verts: list[np.ndarray] = []
        self.faces: list[np.ndarray] = []
        self.weights: list[np.ndarray] = []
        self.part: list[str] = []
        self.n = 0

    def add(self, verts, faces, weights, part):
        base = self.n
        self.verts.append(np.asarray(verts, dtype=np.float64))
        self.faces.append(np.asarray(faces, dtype=np.int64) + base)
        self.weights.append(np.asarray(weights, dtype=np.float64))
        self.part += [part] * len(verts)
        self.n += len(verts)
        return base

    def bridge(self, pole: int, ring: np.ndarray):
        """Fan of triangles from one vertex to a closed ring."""
        ring = np.asarray(ring)
        tri = np.stack([np.full(len(ring), pole), ring, np.roll(ring, -1)], axis=1)
        self.faces.append(tri)


def _tube(centers, rx, rz_or_r, u, v, n_seg, profile=None):
    """Closed tube with a pole cap at each end. Returns verts, faces, ring index arrays."""
    centers = np.asarray(centers, dtype=np.float64)
    n_ring = len(centers)
    theta = 2.0 * np.pi * np.arange(n_seg) / n_seg
    rings = []
    for i in range(n_ring):
        a = rx[i] * np.cos(theta)
        b = rz_or_r[i] * np.sin(theta)
        if profile is not None:
            a, b = profile(a, b)
        rings.append(centers[i] + a[:, None] * u + b[:, None] * v)
    axis = centers[-1] - centers[0]
    axis = axis / np.linalg.norm(axis)
    cap_gap = 0.5 * (centers[1] - centers[0]).dot(axis)
    start = centers[0] - cap_gap * axis
    end = centers[-1] + cap_gap * axis
    if profile is not None:
        start = start + profile(np.zeros(1), np.zeros(1))[1][0] * v
        end = end + profile(np.zeros(1), np.zeros(1))[1][0] * v
    verts = np.concatenate([np.stack(rings).reshape(-1, 3), start[None], end[None]])
    faces = []
    for i in range(n_ring - 1):
        for j in range(n_seg):
            a, b = i * n_seg + j, i * n_seg + (j + 1) % n_seg
            c, d = a + n_seg, b + n_seg
            faces += [[a, c, b], [b, c, d]]
    s_pole, e_pole = n_ring * n_seg, n_ring * n_seg + 1
    last = (n_ring - 1) * n_seg
    for j in range(n_seg):
        faces.append([s_pole, (j + 1) % n_seg, j])
        faces.append([e_pole, last + j, last + (j + 1) % n_seg])
    ring_idx = [np.arange(i * n_seg, (i + 1) * n_seg) for i in range(n_ring)]
    return verts, np.asarray(faces), ring_idx, s_pole, e_pole


def _chain_weights(s, joint_s, drivers, parent_driver):
    """Skin weights along a chain parametrised by arclength ``s``.

    Segment i spans ``joint_s[i]`` to ``joint_s[i+1]`` and follows ``drivers[i]``;
    weights blend linearly across +-_BLEND around every joint location.
    """
    w = np.zeros((len(s), J))
    prev = [parent_driver] + list(drivers[:-1])
    for n, si in enumerate(s):
        seg = int(np.searchsorted(joint_s, si, side="right")) - 1
        seg = min(max(seg, 0), len(drivers) - 1)
        w[n, drivers[seg]] = 1.0
        # nearest joint for blending
        jn = int(np.argmin(np.abs(np.asarray(joint_s) - si)))
        d = si - joint_s[jn]
        if abs(d) < _BLEND and prev[jn] is not None:
            t = 0.5 + 0.5 * d / _BLEND
            w[n] = 0.0
            w[n, drivers[jn]] += t
            w[n, prev[jn]] += 1.0 - t
    return w


def _build_left_limbs(mb: _MeshBuilder):
    """Left arm, leg and foot. Returns index bookkeeping for bridging/regression."""
    ex, ey, ez = np.eye(3)
    out = {}
    # arm along +x
    centers = np.stack([_ARM_RINGS, np.full(9, _ARM_Y), np.zeros(9)], axis=1)
    v, f, rings, sp, ep = _tube(centers, _ARM_R, _ARM_R, ey, ez, 8)
    w = _chain_weights(v[:, 0], [0.18, 0.46, 0.72], [L_SHOULDER, L_ELBOW, L_WRIST], CHEST)
    base = mb.add(v, f, w, "arm")
    out["arm"] = dict(base=base, rings=[r + base for r in rings], start=sp + base, end=ep + base, ring_x=_ARM_RINGS)
    # leg along -y
    centers = np.stack([np.full(9, _HIP_X), _LEG_RINGS, np.zeros(9)], axis=1)
    v, f, rings, sp, ep = _tube(centers, _LEG_R, _LEG_R, ex, ez, 8)
    w = _chain_weights(0.92 - v[:, 1], [0.0, 0.42, 0.82], [L_HIP, L_KNEE, L_ANKLE], PELVIS)
    base = mb.add(v, f, w, "leg")
    out["leg"] = dict(base=base, rings=[r + base for r in rings], start=sp + base, end=ep + base)
    # foot along +z with a flat sole at y = 0
    centers = np.stack([np.full(6, _HIP_X), np.full(6, 0.045), _FOOT_Z], axis=1)
    half_w = np.array([0.040, 0.046, 0.048, 0.048, 0.045, 0.036])
    half_h = np.full(6, 0.070)

    def flat_sole(a, b):
        return a, np.maximum(b, -0.045)

    v, f, rings, sp, ep = _tube(centers, half_w, half_h, ex, ey, 8, profile=flat_sole)
    w = np.zeros((len(v), J))
    w[:, L_ANKLE] = 1.0
    base = mb.add(v, f, w, "foot")
    sole = np.flatnonzero(np.abs(v[:, 1]) < 1e-12) + base
    out["foot"] = dict(base=base, rings=[r + base for r in rings], start=sp + base, end=ep + base, sole=sole)
    return out


def _assemble():
    """Deterministic template construction (no randomness needed)."""
    mb = _MeshBuilder()
    ex, ey, ez = np.eye(3)
    # torso along +y
    centers = np.stack([np.zeros(8), _TORSO_RINGS, np.zeros(8)], axis=1)
    v, f, t_rings, t_sp, t_ep = _tube(centers, _TORSO_RX, _TORSO_RZ, ex, ez, 12)
    w = _chain_weights(v[:, 1], [0.95, 1.15, 1.35], [PELVIS, SPINE, CHEST], None)
    mb.add(v, f, w, "torso")
    # head sphere
    n_lat, n_seg = 6, 10
    lat = np.pi * (np.arange(1, n_lat + 1) / (n_lat + 1)) - np.pi / 2
    centers = np.stack([np.zeros(n_lat), _HEAD_CENTER[1] + _HEAD_R * np.sin(lat), np.zeros(n_lat)], axis=1)
    rr = _HEAD_R * np.cos(lat)
    v, f, h_rings, h_sp, h_ep = _tube(centers, rr, rr, ex, ez, n_seg)
    v[h_sp] = _HEAD_CENTER - [0, _HEAD_R, 0]
    v[h_ep] = _HEAD_CENTER + [0, _HEAD_R, 0]
    w = np.zeros((len(v), J))
    w[:, HEAD] = 1.0
    head_base = mb.add(v, f, w, "head")
    mb.bridge(t_ep, h_rings[0] + head_base)

    # left limbs, then exact mirror copies for the right side
    left_start = mb.n
    left = _build_left_limbs(mb)
    left_end = mb.n
    lv = np.concatenate(mb.verts[2:])
    lw = np.concatenate(mb.weights[2:])
    lf = np.concatenate(mb.faces[3:]) - left_start  # faces[2] is the head bridge
    lparts = mb.part[left_start:left_end]
    rv = lv * np.array([-1.0, 1.0, 1.0])
    rw = lw[:, MIRROR_JOINT]
    right_base = mb.add(rv, lf[:, [0, 2, 1]], rw, "mirror")
    mb.part[right_base:] = lparts
    shift = right_base - left_start

    def both(idx):
        return idx, idx + shift

    # bridges: shoulder poles to the upper-chest ring, hip poles to pelvis ring, ankles to feet
    for side in (0, 1):
        arm_start = both(left["arm"]["start"])[side]
        leg_start = both(left["leg"]["start"])[side]
        leg_end = both(left["leg"]["end"])[side]
        foot_ring = both(left["foot"]["rings"][1])[side]
        chest_ring = t_rings[6]
        pelvis_ring = t_rings[1]
        sel = chest_ring[[0, 1]] if side == 0 else chest_ring[[6, 5]]
        mb.faces.append(np.array([[arm_start, sel[0], sel[1]]]))
        sel = pelvis_ring[[10, 11]] if side == 0 else pelvis_ring[[8, 7]]
        mb.faces.append(np.array([[leg_start, sel[0], sel[1]]]))
        mb.bridge(leg_end, foot_ring)

    verts = np.concatenate(mb.verts)
    weights = np.concatenate(mb.weights)
    faces = np.concatenate(mb.faces)
    parts = np.array(mb.part)

    # joint regressor: each joint is the centroid of a ring centred on it
    reg = np.zeros((J, len(verts)))

    def ring_reg(j, ring):
        reg[j, ring] = 1.0 / len(ring)

    ring_reg(PELVIS, t_rings[1])
    ring_reg(SPINE, t_rings[3])
    ring_reg(CHEST, t_rings[5])
    ring_reg(HEAD, t_rings[7])
    for side, (sh, el, wr, hip, kn, an) in enumerate([
        (L_SHOULDER, L_ELBOW, L_WRIST, L_HIP, L_KNEE, L_ANKLE),
        (R_SHOULDER, R_ELBOW, R_WRIST, R_HIP, R_KNEE, R_ANKLE),
    ]):
        off = 0 if side == 0 else shift
        ring_reg(sh, left["arm"]["rings"][0] + off)
        ring_reg(el, left["arm"]["rings"][3] + off)
        ring_reg(wr, left["arm"]["rings"][6] + off)
        ring_reg(hip, left["leg"]["rings"][0] + off)
        ring_reg(kn, left["leg"]["rings"][4] + off)
        ring_reg(an, left["leg"]["rings"][8] + off)

    sole = {"left": left["foot"]["sole"], "right": left["foot"]["sole"] + shift}
    pr = t_rings[1]
    pelvis_sides = {"left": pr[verts[pr, 0] > 1e-9], "right": pr[verts[pr, 0] < -1e-9]}
    return verts, faces, weights, parts, reg, sole, pelvis_sides


def _blendshapes(verts, parts):
    """Eight displacement fields, each a fixed linear function of the rest geometry."""
    x, y, z = verts.T
    n = len(verts)
    torso = parts == "torso"
    head = parts == "head"
    arm = parts == "arm"
    leg = parts == "leg"
    foot = parts == "foot"
    side = np.sign(x)
    basis = np.zeros((NUM_BETAS, n, 3))
    # 0 overall size, scaled about the floor origin
    basis[0] = 0.035 * verts
    # 1 leg length: stretch legs, lift everything above them
    upper = torso | head | arm
    basis[1, upper, 1] = 0.04
    basis[1, leg, 1] = 0.04 * np.clip((y[leg] - 0.10) / 0.82, 0.0, 1.0)
    # 2 shoulder / torso width
    basis[2, torso, 0] = 0.12 * x[torso] * np.clip((y[torso] - 1.0) / 0.35, 0.0, 1.0)
    basis[2, arm, 0] = 0.12 * 0.18 * side[arm]
    # 3 limb girth: radial offset from the limb axis
    rad = np.zeros((n, 3))
    rad[arm, 1] = y[arm] - _ARM_Y
    rad[arm, 2] = z[arm]
    rad[leg, 0] = x[leg] - side[leg] * _HIP_X
    rad[leg, 2] = z[leg]
    basis[3] = 0.22 * rad
    # 4 belly / chest depth
    basis[4, torso, 2] = 0.30 * z[torso]
    # 5 arm length
    basis[5, arm, 0] = 0.10 * (x[arm] - side[arm] * 0.18)
    # 6 head size
    basis[6, head] = 0.18 * (verts[head] - _HEAD_CENTER)
    # 7 hip width
    wy = np.clip((1.10 - y) / 0.20, 0.0, 1.0)
    basis[7, torso, 0] = 0.25 * x[torso] * wy[torso]
    basis[7, leg | foot, 0] = 0.25 * _HIP_X * side[leg | foot] * 0.9
    return basis


def make_body_model(seed: int = 0) -> BodyModel:
    """Build the humanoid. Geometry is fixed; ``seed`` is recorded for provenance only."""
    verts, faces, weights, parts, reg, sole, pelvis_sides = _assemble()
    topology = MeshTopology(len(verts), faces)
    basis = _blendshapes(verts, parts)
    return BodyModel(
        topology=topology,
        template=verts,
        shape_basis=basis,
        parents=PARENTS.copy(),
        rest_joints=reg @ verts,
        joint_regressor=reg,
        skin_weights=weights,
        sole_vertices=sole,
        pelvis_sides=pelvis_sides,
        seed=int(seed),
    )


def apply_shape(model: BodyModel, shape: ShapeParams) -> np.ndarray:
    if not isinstance(shape, ShapeParams):
        shape = ShapeParams(shape)
    return model.template + np.tensordot(shape.betas, model.shape_basis, axes=1)


def sample_shape(rng: np.random.Generator) -> ShapeParams:
    return ShapeParams(np.clip(rng.standard_normal(NUM_BETAS), -BETA_BOUND, BETA_BOUND))


# ---------------------------------------------------------------- skinning

def _yaw_matrix(yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def skinning_transforms(model: BodyModel, t_pose, joint_rotations) -> np.ndarray:
    """Per-joint 4x4 transforms mapping rest-space points to posed body space."""
    joints = model.joint_regressor @ t_pose
    rots = Rotation.from_rotvec(np.asarray(joint_rotations).reshape(J, 3)).as_matrix()
    world = np.zeros((J, 4, 4))
    for j in range(J):
        local = np.eye(4)
        local[:3, :3] = rots[j]
        p = model.parents[j]
        local[:3, 3] = joints[j] - (joints[p] if p >= 0 else 0.0)
        world[j] = local if p < 0 else world[p] @ local
    skin = world.copy()
    skin[:, :3, 3] -= np.einsum("jab,jb->ja", world[:, :3, :3], joints)
    return skin


def pose_mesh(model: BodyModel, t_pose, pose: PoseParams) -> np.ndarray:
    """Linear blend skinning, then root yaw about the vertical axis and root translation."""
    t_pose = np.asarray(t_pose, dtype=np.float64)
    skin = skinning_transforms(model, t_pose, pose.joint_rotations)
    blend = np.einsum("nj,jab->nab", model.skin_weights, skin)
    posed = np.einsum("nab,nb->na", blend[:, :3, :3], t_pose) + blend[:, :3, 3]
    return posed @ _yaw_matrix(pose.root_yaw).T + pose.root_translation


def unpose_mesh(model: BodyModel, posed, t_pose_joints_source, pose: PoseParams) -> np.ndarray:
    """Inverse skinning with a known pose; joints come from ``t_pose_joints_source``."""
    local = (np.asarray(posed) - pose.root_translation) @ _yaw_matrix(pose.root_yaw)
    skin = skinning_transforms(model, t_pose_joints_source, pose.joint_rotations)
    blend = np.einsum("nj,jab->nab", model.skin_weights, skin)
    return np.linalg.solve(blend[:, :3, :3], (local - blend[:, :3, 3])[..., None])[..., 0]


# ------------------------------------------------------- procedural motion

def _rv(*mats):
    """Compose rotation matrices (applied right-to-left) into an axis-angle vector."""
    m = np.eye(3)
    for r in mats:
        m = m @ r
    return Rotation.from_matrix(m).as_rotvec()


def _rx(a):
    return Rotation.from_rotvec([a, 0.0, 0.0]).as_matrix()


def _ry(a):
    return Rotation.from_rotvec([0.0, a, 0.0]).as_matrix()


def _rz(a):
    return Rotation.from_rotvec([0.0, 0.0, a]).as_matrix()


@dataclass
class _Jitter:
    amp: float
    freq: float
    phase: float
    sign: float


def _leg_angles(p, amp, knee, reach=0.7, march=False):
    """Hip pitch and knee flex for one leg at gait phase ``p`` in [0, 1).

    Stance for p < 0.5 (hip sweeps forward->back, straight knee); swing after,
    with the hip reaching its forward angle at fraction ``reach`` of the swing
    so the landing foot stays above the stance foot until touchdown. ``march``
    flexes the thigh by half the knee angle so the foot rises vertically, for
    stepping in place.
    """
    p = np.mod(p, 1.0)
    if p < 0.5:
        s = p / 0.5
        s = s * s * (3.0 - 2.0 * s)  # eases into touchdown/liftoff so the body stops over each step
        return -amp * np.cos(np.pi * s), 0.0
    s = min(1.0, (p - 0.5) / 0.5 / reach)
    if march:
        kn = knee * np.sin(np.pi * s) ** 2
        return amp * np.cos(np.pi * s) - 0.5 * kn, kn
    # fast knee flex at liftoff clears the contact band within one frame
    return amp * np.cos(np.pi * s), knee * np.sin(np.pi * s)


def _arm_down(side, swing=0.0, raise_=1.25, elbow=0.15):
    """Shoulder and elbow rotations for an arm hanging at the side, swung by ``swing`` (+ = backward)."""
    sgn = 1.0 if side == "l" else -1.0
    shoulder = _rv(_rx(swing), _rz(-sgn * raise_))
    elbow_rv = _rv(_ry(-sgn * elbow))
    return shoulder, elbow_rv


def _turn_yaw(phase, total):
    """Body yaw that advances only while a foot is in early swing.

    Yaw is frozen during the last part of each swing so the landing foot does
    not sweep over the floor while it hovers within contact height.
    """
    p = np.mod(phase, 1.0)
    rate = ((p >= 0.56) & (p < 0.75)) | ((p >= 0.06) & (p < 0.25))
    cum = np.concatenate([[0.0], np.cumsum(rate[1:])])
    return total * cum / max(cum[-1], 1.0)


def _pose_curves(action: str, tau: np.ndarray, jit: _Jitter):
    """Joint rotations (F, J, 3), body yaw (F,), flight lift (F,) for one action."""
    F = len(tau)
    rots = np.zeros((F, J, 3))
    yaw = np.zeros(F)
    lift = np.zeros(F)
    a, w, ph = jit.amp, jit.freq, jit.phase
    foot_yaw = {"l": 0.0, "r": 0.0}
    liftoff_yaw = {"l": 0.0, "r": 0.0}
    for i, t in enumerate(tau):
        r = rots[i]
        hip = {"l": (0.0, 0.0), "r": (0.0, 0.0)}  # (pitch, knee)
        hip_yaw = {"l": 0.0, "r": 0.0}
        arm_swing = {"l": 0.0, "r": 0.0}
        elbow = {"l": 0.15, "r": 0.15}
        if action in ("walk", "run", "turn"):
            f_gait, amp, knee = {
                "walk": (1.0, 0.34, 1.05),
                "run": (1.45, 0.46, 1.45),
                "turn": (1.1, 0.0, 1.2),
            }[action]
            f_gait *= w
            amp *= a
            p_l = t * f_gait + ph / (2 * np.pi)
            hip["l"] = _leg_angles(p_l, amp, knee, march=action == "turn")
            hip["r"] = _leg_angles(p_l + 0.5, amp, knee, march=action == "turn")
            arm_swing["l"] = -0.8 * hip["l"][0]
            arm_swing["r"] = -0.8 * hip["r"][0]
            if action == "run":
                elbow = {"l": 1.2, "r": 1.2}
                r[SPINE] = _rv(_rx(0.12))
            if action == "turn":
                if i == 0:
                    yaw[:] = _turn_yaw(tau * f_gait + ph / (2 * np.pi), jit.sign * 0.5 * np.pi * a)
                for side, pp in (("l", p_l), ("r", p_l + 0.5)):
                    pp = np.mod(pp, 1.0)
                    if pp < 0.5:
                        liftoff_yaw[side] = foot_yaw[side]
                    else:
                        # swing: the foot re-aligns with the body before touchdown
                        s = np.clip((pp - 0.56) / 0.19, 0.0, 1.0)
                        s = s * s * (3.0 - 2.0 * s)
                        foot_yaw[side] = liftoff_yaw[side] + (yaw[i] - liftoff_yaw[side]) * s
                    hip_yaw[side] = foot_yaw[side] - yaw[i]
        elif action == "jump":
            p = np.mod(t * 0.9 * w + ph / (2 * np.pi), 1.0)
            if p < 0.4:
                d = 0.55 * a * np.sin(np.pi * p / 0.4)
            elif p < 0.7:
                d = 0.0
                lift[i] = 0.18 * a * np.sin(np.pi * (p - 0.4) / 0.3)
            else:
                d = 0.3 * a * np.sin(np.pi * (p - 0.7) / 0.3)
            hip["l"] = hip["r"] = (-d, 2 * d)
            r[SPINE] = _rv(_rx(0.5 * d))
            arm_swing["l"] = arm_swing["r"] = 0.9 * d - 0.6 * (lift[i] > 0)
        elif action == "squat":
            d = 0.75 * a * (0.5 - 0.5 * np.cos(2 * np.pi * 0.6 * w * t + ph))
            hip["l"] = hip["r"] = (-d, 2 * d)
            r[SPINE] = _rv(_rx(0.6 * d))
            arm_swing["l"] = arm_swing["r"] = -1.3 * d
        elif action == "kick":
            g = max(0.0, np.sin(2 * np.pi * 0.8 * w * t + ph))
            hip["l"] = (0.0, 0.0)
            hip["r"] = (-1.0 * a * g, 0.35 * (1.0 - g) + 0.05)
            arm_swing["l"] = -0.4 * g
            arm_swing["r"] = 0.4 * g
            r[SPINE] = _rv(_rx(-0.15 * g))
        elif action == "wave":
            s = np.sin(2 * np.pi * 1.6 * w * t + ph)
            r[R_SHOULDER] = _rv(_rz(-1.15 * a))
            r[R_ELBOW] = _rv(_rz(-0.45 - 0.45 * a * s))
            r[HEAD] = _rv(_ry(-0.15 * a))
        elif action == "idle-sway":
            s = np.sin(2 * np.pi * 0.35 * w * t + ph)
            r[SPINE] = _rv(_rz(0.07 * a * s))
            r[CHEST] = _rv(_rz(0.05 * a * s))
            r[HEAD] = _rv(_rx(0.06 * a * np.sin(2 * np.pi * 0.2 * w * t)))
            arm_swing["l"] = 0.05 * s
            arm_swing["r"] = -0.05 * s
        else:
            raise ValueError(f"unknown action {action!r}")

        for side, (hip_j, knee_j, ankle_j) in (("l", (L_HIP, L_KNEE, L_ANKLE)), ("r", (R_HIP, R_KNEE, R_ANKLE))):
            pitch, kn = hip[side]
            r[hip_j] = _rv(_ry(hip_yaw[side]), _rx(pitch))
            r[knee_j] = _rv(_rx(kn))
            r[ankle_j] = _rv(_rx(-(pitch + kn)))  # keeps the sole level
        for side, (sh, el) in (("l", (L_SHOULDER, L_ELBOW)), ("r", (R_SHOULDER, R_ELBOW))):
            if action == "wave" and side == "r":
                continue
            r[sh], r[el] = _arm_down(side, arm_swing[side], elbow=elbow[side])
    return rots, yaw, lift


def _jitter(rng: np.random.Generator) -> _Jitter:
    return _Jitter(
        amp=float(rng.uniform(0.85, 1.15)),
        freq=float(rng.uniform(0.9, 1.1)),
        phase=float(rng.uniform(0.0, 2 * np.pi)),
        sign=float(rng.choice([-1.0, 1.0])),
    )


def synth_motion(model: BodyModel, shape: ShapeParams, action_id: int, F: int = 60, fps: float = 30.0,
                 seed: int = 0, initial_yaw: float = 0.0) -> MotionSequence:
    """Procedural motion with feet planted during contact.

    Root height keeps the lowest vertex on the floor (plus a flight lift for
    jumps); horizontal root motion is integrated so the supporting foot's sole
    does not slide.
    """
    if not 0 <= int(action_id) < NUM_ACTIONS:
        raise ValueError(f"unknown action id {action_id}; expected 0..{NUM_ACTIONS - 1}")
    if F < 2:
        raise ValueError("F must be >= 2")
    action = ACTIONS[int(action_id)]
    rng = np.random.default_rng([int(seed), int(action_id)])
    jit = _jitter(rng)
    t_pose = apply_shape(model, shape)
    tau = np.arange(F) / float(fps)
    rots, yaw, lift = _pose_curves(action, tau, jit)
    yaw = yaw + initial_yaw

    in_place = np.stack([pose_mesh(model, t_pose, PoseParams(rots[i], np.zeros(3), yaw[i])) for i in range(F)])
    soles = {s: in_place[:, model.sole_vertices[s]] for s in ("left", "right")}
    sole_h = {s: soles[s][..., 1].min(axis=1) for s in soles}
    sole_c = {s: soles[s].mean(axis=1) for s in soles}

    trans = np.zeros((F, 3))
    trans[:, 1] = -in_place[..., 1].min(axis=1) + lift
    rel = {k: sole_h[k] - np.minimum(sole_h["left"], sole_h["right"]) for k in sole_h}
    for i in range(1, F):
        if lift[i] > 0.0 or lift[i - 1] > 0.0:
            trans[i, [0, 2]] = trans[i - 1, [0, 2]]
            continue
        # the supporting foot is the one closest to the floor across both frames
        support = min(("left", "right"), key=lambda k: rel[k][i - 1] + rel[k][i])
        d = sole_c[support][i] - sole_c[support][i - 1]
        trans[i, [0, 2]] = trans[i - 1, [0, 2]] - d[[0, 2]]
    frames = in_place + trans[:, None, :]
    return MotionSequence(frames=frames, action_id=int(action_id), fps=float(fps), shape=shape,
                          joint_rotations=rots, root_translation=trans, root_yaw=yaw)


# ---------------------------------------------------------------- dataset

def identity_shapes(n: int, seed: int) -> list[ShapeParams]:
    rng = np.random.default_rng([int(seed), 7919])
    return [sample_shape(rng) for _ in range(n)]


def make_dataset(n_motions: int, identities: int, F: int, seed: int, out_dir, fps: float = 30.0,
                 model: BodyModel | None = None) -> list[dict]:
    """Write SMM1 motions plus ``manifest.json`` and ``identities.json``; returns the manifest rows."""
    if identities < 1 or n_motions < identities:
        raise ValueError("need n_motions >= identities >= 1")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"dataset directory {out} is not writable: {exc}") from exc
    model = model or make_body_model(seed)
    shapes = identity_shapes(identities, seed)
    rows = []
    for i in range(n_motions):
        action = i % NUM_ACTIONS
        ident = (i // NUM_ACTIONS + i) % identities
        m = synth_motion(model, shapes[ident], action, F=F, fps=fps, seed=int(seed) * 100003 + i)
        name = f"motion_{i:05d}.smm"
        formats.write_motion(out / name, m.frames, action, fps)
        rows.append({"path": name, "action_id": action, "identity_id": ident, "frames": F, "fps": fps})
    formats.atomic_write_bytes(out / "manifest.json", json.dumps(rows, indent=1).encode())
    meta = {"seed": int(seed), "fps": fps, "frames": F,
            "betas": [s.betas.tolist() for s in shapes]}
    formats.atomic_write_bytes(out / "identities.json", json.dumps(meta, indent=1).encode())
    return rows


def manifest_hash(rows) -> str:
    return hashlib.sha256(json.dumps(rows, sort_keys=True).encode()).hexdigest()


def load_dataset(directory):
    """Read a dataset written by :func:`make_dataset`. Returns (rows, motions, shapes)."""
    directory = Path(directory)
    rows = json.loads((directory / "manifest.json").read_text())
    meta = json.loads((directory / "identities.json").read_text())
    shapes = [ShapeParams(b) for b in meta["betas"]]
    motions = []
    for row in rows:
        frames, action, fps = formats.read_motion(directory / row["path"])
        motions.append(MotionSequence(frames, action, fps, shapes[row["identity_id"]]))
    return rows, motions, shapes


def pose_pool(model: BodyModel, shapes, per_identity: int, seed: int, F: int = 30, fps: float = 15.0) -> np.ndarray:
    """Random posed meshes per identity (identities x per_identity x N x 3), world placement included.

    Each pose is one frame of a fresh procedural motion with a random class,
    seed and heading.
    """
    rng = np.random.default_rng([int(seed), 104729])
    out = np.empty((len(shapes), per_identity, model.n_vertices, 3))
    for i, shape in enumerate(shapes):
        for p in range(per_identity):
            action = int(rng.integers(NUM_ACTIONS))
            mo = synth_motion(model, shape, action, F=F, fps=fps, seed=int(rng.integers(1 << 30)),
                              initial_yaw=float(rng.uniform(-np.pi, np.pi)))
            out[i, p] = mo.frames[int(rng.integers(F))]
    return out
