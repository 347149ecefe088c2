"""World-space mesh motion <-> packed diffusion state.

Layout of a packed frame (k + 2 rows x 3 channels): row 0 root position,
row 1 root rotation (axis-angle, yaw only), rows 2.. normalized spectral
coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body import BodyModel, MotionSequence, PELVIS
from .spectral import Normalizer, SpectralBasis, fit_normalizer, gft, igft

P_ROW, R_ROW, COEFF_START = 0, 1, 2


@dataclass(frozen=True)
class RootFrame:
    """Topology-level data needed to split root motion off a mesh."""
    root_weights: np.ndarray  # (N,) skin weights of the pelvis joint, summing to 1
    left_idx: np.ndarray
    right_idx: np.ndarray

    @classmethod
    def from_model(cls, model: BodyModel) -> "RootFrame":
        w = model.skin_weights[:, PELVIS].astype(np.float64)
        return cls(w / w.sum(), model.pelvis_sides["left"], model.pelvis_sides["right"])

    def root_position(self, frames) -> np.ndarray:
        return np.einsum("n,...nc->...c", self.root_weights, np.asarray(frames, dtype=np.float64))

    def facing_yaw(self, frames, fallback: float = 0.0) -> np.ndarray:
        """Yaw of the left-hip minus right-hip axis per frame; degenerate frames reuse the previous yaw."""
        frames = np.asarray(frames, dtype=np.float64)
        single = frames.ndim == 2
        if single:
            frames = frames[None]
        axis = frames[:, self.left_idx].mean(axis=1) - frames[:, self.right_idx].mean(axis=1)
        yaw = np.empty(len(frames))
        prev = fallback
        for i, (ax, _, az) in enumerate(axis):
            if np.hypot(ax, az) < 1e-9:
                yaw[i] = prev
            else:
                yaw[i] = np.arctan2(-az, ax)
            prev = yaw[i]
        yaw = np.unwrap(yaw)
        return yaw[0] if single else yaw


def yaw_matrix(yaw) -> np.ndarray:
    """Rotation(s) about +y; accepts a scalar or an array of angles."""
    yaw = np.asarray(yaw, dtype=np.float64)
    c, s = np.cos(yaw), np.sin(yaw)
    o, z = np.ones_like(yaw), np.zeros_like(yaw)
    return np.stack([np.stack([c, z, s], -1), np.stack([z, o, z], -1), np.stack([-s, z, c], -1)], -2)


def canonicalize(frames, root: RootFrame):
    """Split root translation and yaw off each frame.

    Returns ``(centered, P, R)`` with ``centered[f] = Ry(-yaw_f) (frames[f] - P_f)``
    and ``R[f] = (0, yaw_f, 0)``.
    """
    frames = np.asarray(frames, dtype=np.float64)
    P = root.root_position(frames)
    yaw = root.facing_yaw(frames)
    rot = yaw_matrix(yaw)  # (F, 3, 3)
    # row-vector form of R^T (v - P)
    centered = np.einsum("fnc,fcd->fnd", frames - P[:, None, :], rot)
    R = np.zeros_like(P)
    R[:, 1] = yaw
    return centered, P, R


def uncanonicalize(centered, P, R) -> np.ndarray:
    rot = yaw_matrix(np.asarray(R)[:, 1])
    return np.einsum("fnd,fcd->fnc", np.asarray(centered), rot) + np.asarray(P)[:, None, :]


@dataclass
class CanonicalMotion:
    coeffs: np.ndarray    # (F, k, 3) normalized
    root_pos: np.ndarray  # (F, 3)
    root_rot: np.ndarray  # (F, 3)

    def __post_init__(self):
        f = self.coeffs.shape[0]
        if self.root_pos.shape != (f, 3) or self.root_rot.shape != (f, 3):
            raise ValueError("frame counts of coeffs, root_pos and root_rot differ")


def encode(centered, P, R, basis: SpectralBasis, normalizer: Normalizer) -> CanonicalMotion:
    if normalizer.k != basis.k:
        raise ValueError(f"normalizer has k={normalizer.k}, basis has k={basis.k}")
    coeffs = normalizer.normalize(gft(centered, basis))
    return CanonicalMotion(coeffs, np.asarray(P, dtype=np.float64), np.asarray(R, dtype=np.float64))


def pack(cm: CanonicalMotion) -> np.ndarray:
    return np.concatenate([cm.root_pos[:, None, :], cm.root_rot[:, None, :], cm.coeffs], axis=1)


def unpack(x) -> CanonicalMotion:
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[2] != 3 or x.shape[1] < 3:
        raise ValueError(f"motion tensor must be F x (k+2) x 3, got {x.shape}")
    return CanonicalMotion(x[:, COEFF_START:].copy(), x[:, P_ROW].copy(), x[:, R_ROW].copy())


def restore(cm: CanonicalMotion, basis: SpectralBasis, normalizer: Normalizer, action_id: int = -1,
            fps: float = 30.0) -> MotionSequence:
    """Denormalize, inverse-transform, re-apply yaw then translation."""
    centered = igft(normalizer.denormalize(cm.coeffs), basis)
    frames = uncanonicalize(centered, cm.root_pos, cm.root_rot)
    return MotionSequence(frames=frames, action_id=action_id, fps=fps)


def align_window(x) -> np.ndarray:
    """Re-anchor a packed window so frame 0 sits at the horizontal origin facing +z.

    Only the root rows change: coefficient rows are already expressed in each
    frame's own canonical space. Root height is kept.
    """
    x = np.array(x, dtype=np.float64, copy=True)
    yaw0 = x[0, R_ROW, 1]
    p = x[:, P_ROW].copy()
    p[:, [0, 2]] -= p[0, [0, 2]]
    # rotate root positions by -yaw0 (row-vector form of Ry(-yaw0) p)
    x[:, P_ROW] = p @ yaw_matrix(yaw0)
    x[:, R_ROW, 1] -= yaw0
    return x


@dataclass
class MotionCodec:
    """Everything needed to go between world-space motions and packed tensors."""
    root: RootFrame
    basis: SpectralBasis
    normalizer: Normalizer

    @property
    def k(self) -> int:
        return self.basis.k

    def to_tensor(self, motion) -> np.ndarray:
        frames = motion.frames if isinstance(motion, MotionSequence) else motion
        return pack(encode(*canonicalize(frames, self.root), self.basis, self.normalizer))

    def to_motion(self, x, action_id: int = -1, fps: float = 30.0) -> MotionSequence:
        return restore(unpack(x), self.basis, self.normalizer, action_id, fps)

    @classmethod
    def fit(cls, model: BodyModel, basis: SpectralBasis, motions) -> "MotionCodec":
        root = RootFrame.from_model(model)

        def stream():
            for m in motions:
                frames = m.frames if isinstance(m, MotionSequence) else m
                yield gft(canonicalize(frames, root)[0], basis)

        return cls(root, basis, fit_normalizer(stream()))
