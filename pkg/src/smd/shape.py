"""Pose-invariant identity encoder trained to predict the canonical T-pose, plus an InfoNCE term."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .motion import RootFrame
from .nn import SpectralDecoder, SpectralEncoder


@dataclass
class ShapeConfig:
    k: int = 83              # frequencies read by the encoder; matches what generated motions carry
    k_out: int = 200         # frequencies of the predicted T-pose; ~N/3 keeps the truncation floor under 5 mm
    embed_dim: int = 256
    conv_channels: tuple = (16, 32)
    kernel: int = 5
    tau: float = 0.07
    lr: float = 1e-3
    steps: int = 3000
    seed: int = 0

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        if self.k < 1 or self.k_out < 1 or self.embed_dim < 1 or self.kernel < 1:
            raise ValueError("k, k_out, embed_dim and kernel must be positive")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ShapeConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def canonical_tpose(t_pose, root: RootFrame) -> np.ndarray:
    """T-pose translated so the root joint sits at the origin (the T-pose already faces +z)."""
    t_pose = np.asarray(t_pose, dtype=np.float64)
    return t_pose - root.root_position(t_pose)


class ShapeEmbedder(nn.Module):
    """Spectral encoder/decoder without the temporal transformer.

    Holds its own basis, coefficient statistics and root-frame data as buffers
    so a checkpoint is self-contained. The encoder sees only the lowest ``k``
    frequencies, so meshes that differ above ``k`` embed identically; the
    decoder predicts ``k_out`` frequencies.
    """

    def __init__(self, cfg: ShapeConfig, eigenvectors, mean, std, root: RootFrame):
        super().__init__()
        self.cfg = cfg
        self.register_buffer("eigenvectors", torch.as_tensor(eigenvectors, dtype=torch.float32))
        self.register_buffer("coeff_mean", torch.as_tensor(mean, dtype=torch.float32))
        self.register_buffer("coeff_std", torch.as_tensor(std, dtype=torch.float32))
        self.register_buffer("root_weights", torch.as_tensor(root.root_weights, dtype=torch.float32))
        self.register_buffer("left_idx", torch.as_tensor(root.left_idx, dtype=torch.long))
        self.register_buffer("right_idx", torch.as_tensor(root.right_idx, dtype=torch.long))
        self.register_buffer("trained", torch.zeros(()))
        if self.eigenvectors.shape[1] != self.basis_size(cfg):
            raise ValueError(f"basis has {self.eigenvectors.shape[1]} vectors, config needs {self.basis_size(cfg)}")
        self.encoder = SpectralEncoder(cfg.k, cfg.embed_dim, cfg.conv_channels, cfg.kernel)
        self.decoder = SpectralDecoder(cfg.k_out, cfg.embed_dim, cfg.conv_channels, cfg.kernel)

    @staticmethod
    def basis_size(cfg: ShapeConfig) -> int:
        return max(cfg.k, cfg.k_out)

    @property
    def n_vertices(self) -> int:
        return self.eigenvectors.shape[0]

    @property
    def is_trained(self) -> bool:
        return bool(self.trained.item() > 0)

    def rigid_canonicalize(self, mesh):
        """Remove root translation and facing yaw; works on ... x N x 3."""
        mesh = torch.as_tensor(mesh, dtype=self.eigenvectors.dtype)
        if mesh.shape[-2] != self.n_vertices:
            raise ValueError(f"mesh has {mesh.shape[-2]} vertices, embedder expects {self.n_vertices}")
        p = torch.einsum("n,...nc->...c", self.root_weights, mesh)
        axis = mesh[..., self.left_idx, :].mean(-2) - mesh[..., self.right_idx, :].mean(-2)
        yaw = torch.atan2(-axis[..., 2], axis[..., 0])
        c, s = torch.cos(yaw), torch.sin(yaw)
        x, y, z = (mesh - p.unsqueeze(-2)).unbind(-1)
        # R_y(-yaw) applied to (x, y, z)
        cu, su = c.unsqueeze(-1), s.unsqueeze(-1)
        return torch.stack([cu * x - su * z, y, su * x + cu * z], dim=-1)

    def coefficients(self, mesh):
        k = self.cfg.k
        canon = self.rigid_canonicalize(mesh)
        coeffs = torch.einsum("nk,...nc->...kc", self.eigenvectors[:, :k], canon)
        return (coeffs - self.coeff_mean[:k]) / self.coeff_std[:k]

    def encode(self, mesh):
        return self.encoder(self.coefficients(mesh))

    def decode(self, z):
        k = self.cfg.k_out
        coeffs = self.decoder(z) * self.coeff_std[:k] + self.coeff_mean[:k]
        return torch.einsum("nk,...kc->...nc", self.eigenvectors[:, :k], coeffs)

    def forward(self, mesh):
        z = self.encode(mesh)
        return z, self.decode(z)


def build_shape_embedder(cfg: ShapeConfig, basis, root: RootFrame, fit_meshes) -> ShapeEmbedder:
    """Fit coefficient statistics on rigidly canonicalized ``fit_meshes`` and build a fresh embedder."""
    torch.manual_seed(cfg.seed)
    size = ShapeEmbedder.basis_size(cfg)
    b = basis.truncate(size) if basis.k != size else basis
    probe = ShapeEmbedder(cfg, b.eigenvectors, np.zeros((size, 3)), np.ones((size, 3)), root)
    with torch.no_grad():
        canon = probe.rigid_canonicalize(torch.as_tensor(np.asarray(fit_meshes), dtype=torch.float32)).double()
        coeffs = torch.einsum("nk,mnc->mkc", torch.as_tensor(b.eigenvectors), canon).numpy()
    mean, std = coeffs.mean(0), np.maximum(coeffs.std(0), 1e-8)
    torch.manual_seed(cfg.seed)
    return ShapeEmbedder(cfg, b.eigenvectors, mean, std, root)


def encode_shape(model: ShapeEmbedder, mesh) -> np.ndarray:
    model.eval()
    with torch.no_grad():
        return model.encode(mesh).double().numpy()


def shape_condition(z) -> np.ndarray:
    """Conditioning copy of a shape code: unit direction scaled by sqrt(D_s) so entries are O(1).

    The contrastive objective only constrains directions, so the raw norm carries no identity signal.
    """
    z = np.asarray(z, dtype=np.float64)
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    return z / np.maximum(norm, 1e-12) * np.sqrt(z.shape[-1])


def decode_tpose(model: ShapeEmbedder, z) -> np.ndarray:
    model.eval()
    with torch.no_grad():
        return model.decode(torch.as_tensor(z, dtype=torch.float32)).double().numpy()


def canonicalize_to_tpose(model: ShapeEmbedder, mesh) -> np.ndarray:
    """Root-centered T-pose predicted for ``mesh`` (any pose, any placement)."""
    model.eval()
    with torch.no_grad():
        return model(torch.as_tensor(np.asarray(mesh), dtype=torch.float32))[1].double().numpy()


# ---------------------------------------------------------------- losses

def contrastive_loss(z_t, z_a, tau: float = 0.07):
    """InfoNCE over cosine similarities.

    Anchor ``z_t[i]``; positive ``z_a[i]``; the denominator holds the positive
    plus every other identity's T-pose and posed embeddings (2M - 1 terms).
    """
    if z_t.shape != z_a.shape or z_t.ndim != 2:
        raise ValueError("z_t and z_a must both be M x D")
    m = z_t.shape[0]
    if m < 2:
        raise ValueError("contrastive loss needs at least 2 identities")
    if tau <= 0:
        raise ValueError("tau must be positive")
    t = F.normalize(z_t, dim=1)
    a = F.normalize(z_a, dim=1)
    s_ta = t @ a.T / tau
    s_tt = t @ t.T / tau
    eye = torch.eye(m, dtype=torch.bool)
    s_tt = s_tt.masked_fill(eye, float("-inf"))  # an anchor is not its own negative
    logits = torch.cat([s_ta, s_tt], dim=1)
    pos = s_ta.diagonal()
    return (torch.logsumexp(logits, dim=1) - pos).mean()


def mesh_loss(out_t, out_a, target):
    """Half the mean (over identities) squared vertex error of both reconstructions."""
    m = target.shape[0]
    return (((out_t - target) ** 2).sum() + ((out_a - target) ** 2).sum()) / (2 * m)


def shape_embedder_loss(model: ShapeEmbedder, t_in, a_in, tau: float):
    z_t, out_t = model(t_in)
    z_a, out_a = model(a_in)
    target = model.rigid_canonicalize(t_in)
    lm = mesh_loss(out_t, out_a, target)
    lc = contrastive_loss(z_t, z_a, tau)
    return lm + lc, float(lm.detach()), float(lc.detach())


def train_shape_encoder(model: ShapeEmbedder, tposes, poses, steps: int | None = None, batch_ids: int | None = None,
                        seed: int | None = None, log_every: int = 0, log=print):
    """Train on T-poses (M x N x 3) and a pose pool (M x P x N x 3, world space).

    Each step draws ``batch_ids`` identities (all by default) and one random
    pose per identity. The learning rate follows a cosine decay to zero. Returns per-step (total, mesh, contrast) tuples.
    """
    cfg = model.cfg
    steps = cfg.steps if steps is None else steps
    tposes = torch.as_tensor(np.asarray(tposes), dtype=torch.float32)
    poses = torch.as_tensor(np.asarray(poses), dtype=torch.float32)
    m = tposes.shape[0]
    if m < 2:
        raise ValueError("shape training needs at least 2 identities")
    batch_ids = m if batch_ids is None else batch_ids
    if batch_ids < 2:
        raise ValueError("each batch needs at least 2 identities")
    gen = torch.Generator().manual_seed(cfg.seed if seed is None else seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(steps, 1))
    history = []
    model.train()
    for i in range(steps):
        ids = torch.randperm(m, generator=gen)[:batch_ids]
        pick = torch.randint(poses.shape[1], (batch_ids,), generator=gen)
        loss, lm, lc = shape_embedder_loss(model, tposes[ids], poses[ids, pick], cfg.tau)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        sched.step()
        history.append((float(loss.detach()), lm, lc))
        if log_every and (i + 1) % log_every == 0:
            log(f"shape step {i + 1}/{steps} loss {history[-1][0]:.4f} mesh {lm:.4f} contrast {lc:.4f}")
    model.trained.fill_(1.0)
    model.eval()
    return history


def retrieval_accuracy(z, labels) -> float:
    """Leave-one-out nearest neighbour (cosine) identity accuracy."""
    z = np.asarray(z, dtype=np.float64)
    z = z / np.linalg.norm(z, axis=1, keepdims=True)
    sim = z @ z.T
    np.fill_diagonal(sim, -math.inf)
    labels = np.asarray(labels)
    return float(np.mean(labels[np.argmax(sim, axis=1)] == labels))


def separation_ratio(z, labels) -> float:
    """Mean inter-identity distance over mean intra-identity distance (Euclidean, unit-normalized codes)."""
    z = np.asarray(z, dtype=np.float64)
    z = z / np.linalg.norm(z, axis=1, keepdims=True)
    labels = np.asarray(labels)
    d = np.linalg.norm(z[:, None] - z[None], axis=-1)
    same = labels[:, None] == labels[None]
    off = ~np.eye(len(z), dtype=bool)
    return float(d[~same].mean() / d[same & off].mean())
