"""Differentiable building blocks shared by the denoiser and the shape encoder.

Gradients come from torch autograd; ``grad_check`` compares them against
central finite differences in float64.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import formats


def dense(x, weight, bias=None):
    """Affine map ``x W^T + b`` over the last axis."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"dense: input width {x.shape[-1]} != weight in-features {weight.shape[1]}")
    return F.linear(x, weight, bias)


def conv1d_same(x, kernels, bias=None):
    """Stride-1 cross-correlation along the last axis with zero 'same' padding.

    ``x`` is B x C_in x L, ``kernels`` C_out x C_in x K with K odd.
    """
    kw = kernels.shape[-1]
    if kw % 2 == 0:
        raise ValueError("conv1d_same needs an odd kernel width")
    pad = kw // 2
    if kw > x.shape[-1] + 2 * pad:
        raise ValueError(f"kernel width {kw} exceeds padded input length {x.shape[-1] + 2 * pad}")
    return F.conv1d(x, kernels, bias, padding=pad)


def timestep_embedding(t, dim: int, max_period: float = 10000.0):
    """Interleaved sinusoidal encoding ``[sin(t w_0), cos(t w_0), sin(t w_1), ...]``."""
    if dim % 2:
        raise ValueError("timestep embedding width must be even")
    t = torch.as_tensor(t, dtype=torch.float64).reshape(-1)
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t[:, None] * freqs[None]
    return torch.stack([torch.sin(args), torch.cos(args)], dim=-1).reshape(len(t), dim)


class SeededDropout(nn.Module):
    """Inverted dropout whose mask comes from an explicit generator; identity in eval mode."""

    def __init__(self, p: float, generator: torch.Generator | None = None):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        self.p = p
        self.generator = generator

    def forward(self, x):
        if not self.training or self.p == 0.0:
            return x
        keep = torch.rand(x.shape, generator=self.generator, dtype=x.dtype) >= self.p
        return x * keep / (1.0 - self.p)


class ConvBlock(nn.Module):
    """Convolution over the frequency axis, channel-wise fully connected layer, optional GELU."""

    def __init__(self, c_in: int, c_out: int, kernel: int = 5, activate: bool = True):
        super().__init__()
        self.conv = nn.Conv1d(c_in, c_out, kernel, padding=kernel // 2)
        self.fc = nn.Linear(c_out, c_out)
        self.activate = activate

    def forward(self, x):  # B x C x L
        h = conv1d_same(x, self.conv.weight, self.conv.bias)
        h = self.fc(h.transpose(1, 2)).transpose(1, 2)
        return F.gelu(h) if self.activate else h


class SpectralEncoder(nn.Module):
    """Per-frame (rows x 3) block -> feature vector of width ``out_dim``."""

    def __init__(self, rows: int, out_dim: int, channels=(16, 32), kernel: int = 5):
        super().__init__()
        chans = (3,) + tuple(channels)
        self.blocks = nn.ModuleList(ConvBlock(a, b, kernel) for a, b in zip(chans[:-1], chans[1:]))
        self.rows = rows
        self.proj = nn.Linear(chans[-1] * rows, out_dim)

    def forward(self, x):  # ... x rows x 3
        lead = x.shape[:-2]
        h = x.reshape(-1, self.rows, 3).transpose(1, 2)
        for blk in self.blocks:
            h = blk(h)
        return self.proj(h.flatten(1)).reshape(*lead, -1)


class SpectralDecoder(nn.Module):
    """Mirror of :class:`SpectralEncoder`; the last block has no activation."""

    def __init__(self, rows: int, in_dim: int, channels=(16, 32), kernel: int = 5):
        super().__init__()
        chans = tuple(reversed(channels)) + (3,)
        self.rows = rows
        self.c0 = chans[0]
        self.proj = nn.Linear(in_dim, chans[0] * rows)
        n = len(chans) - 1
        self.blocks = nn.ModuleList(
            ConvBlock(a, b, kernel, activate=i < n - 1) for i, (a, b) in enumerate(zip(chans[:-1], chans[1:]))
        )

    def forward(self, z):
        lead = z.shape[:-1]
        h = F.gelu(self.proj(z.reshape(-1, z.shape[-1]))).reshape(-1, self.c0, self.rows)
        for blk in self.blocks:
            h = blk(h)
        return h.transpose(1, 2).reshape(*lead, self.rows, 3)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int = 8, dropout: float = 0.0, generator=None):
        super().__init__()
        if dim % heads:
            raise ValueError(f"latent width {dim} is not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)
        self.drop = SeededDropout(dropout, generator)
        self.last_weights = None

    def forward(self, x, keep_weights: bool = False):
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        b, n, d = x.shape
        hd = d // self.heads

        def split(t):
            return t.reshape(b, n, self.heads, hd).transpose(1, 2)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        w = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(hd), dim=-1)
        if keep_weights:
            self.last_weights = w.detach()
        y = (self.drop(w) @ v).transpose(1, 2).reshape(b, n, d)
        y = self.out(y)
        return y[0] if squeeze else y


class TransformerLayer(nn.Module):
    """Pre-norm residual block: attention then a 2x-wide GELU feed-forward."""

    def __init__(self, dim: int, heads: int, dropout: float, generator=None):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, dropout, generator)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, 2 * dim), nn.GELU(), nn.Linear(2 * dim, dim))
        self.drop1 = SeededDropout(dropout, generator)
        self.drop2 = SeededDropout(dropout, generator)

    def forward(self, x):
        x = x + self.drop1(self.attn(self.norm1(x)))
        return x + self.drop2(self.ff(self.norm2(x)))


class Stylization(nn.Module):
    """Scale-and-shift of per-frame features by a global condition vector.

    Starts as the identity map: the scale head outputs 1 and the shift head 0.
    """

    def __init__(self, dim: int, cond_dim: int):
        super().__init__()
        self.phi = nn.Linear(cond_dim, dim)
        self.psi_w = nn.Linear(dim, dim)
        self.psi_b = nn.Linear(dim, dim)
        nn.init.zeros_(self.psi_w.weight)
        nn.init.ones_(self.psi_w.bias)
        nn.init.zeros_(self.psi_b.weight)
        nn.init.zeros_(self.psi_b.bias)

    def forward(self, z, z_s):
        """``z`` is ... x F x D, ``z_s`` is ... x D_s; the same scale/shift hits every frame."""
        if z_s.shape[-1] != self.phi.in_features:
            raise ValueError(f"condition width {z_s.shape[-1]} != {self.phi.in_features}")
        h = F.gelu(self.phi(z_s))
        return z * self.psi_w(h).unsqueeze(-2) + self.psi_b(h).unsqueeze(-2)


# ---------------------------------------------------------------- checking

def grad_check(fn, inputs, eps: float = 1e-4, params=(), seed: int = 0) -> float:
    """Largest relative gap between autograd and central-difference gradients.

    ``fn`` maps the input tensors to an output tensor; it is reduced to a
    scalar by a fixed random projection so every output entry matters.
    ``params`` are extra leaf tensors (module weights) to check as well.
    Relative error per tensor is ``max|g_a - g_n| / max(max|g_a|, max|g_n|, floor)``
    where ``floor`` is 1e-6 of the largest gradient entry over all tensors, so a
    tensor whose exact gradient is zero (e.g. the key bias under softmax shift
    invariance) is judged against rounding noise rather than against itself.
    Run it on float64 modules and inputs.
    """
    inputs = [x.detach().clone().requires_grad_(True) for x in inputs]
    leaves = list(inputs) + list(params)
    with torch.no_grad():
        out = fn(*inputs)
    proj = torch.randn(out.shape, generator=torch.Generator().manual_seed(seed), dtype=out.dtype)

    def scalar():
        return (fn(*inputs) * proj).sum()

    for leaf in leaves:
        leaf.grad = None
    scalar().backward()
    pairs = []
    for leaf in leaves:
        analytic = leaf.grad.detach().clone() if leaf.grad is not None else torch.zeros_like(leaf)
        numeric = torch.zeros_like(leaf)
        flat, nflat = leaf.data.view(-1), numeric.view(-1)
        with torch.no_grad():
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                hi = scalar().item()
                flat[i] = orig - eps
                lo = scalar().item()
                flat[i] = orig
                nflat[i] = (hi - lo) / (2 * eps)
        pairs.append((analytic, numeric))
    scales = [max(a.abs().max().item(), n.abs().max().item()) if a.numel() else 0.0 for a, n in pairs]
    floor = 1e-6 * max(scales, default=0.0)
    worst = 0.0
    for (a, n), scale in zip(pairs, scales):
        scale = max(scale, floor)
        if scale > 0.0:
            worst = max(worst, (a - n).abs().max().item() / scale)
    return worst


# ---------------------------------------------------------------- checkpoints

def state_arrays(module: nn.Module) -> dict:
    return {name: t.detach().cpu().numpy() for name, t in module.state_dict().items()}


def save_weights(module: nn.Module, path) -> None:
    formats.atomic_write_bytes(path, formats.encode_weights(state_arrays(module)))


def load_weights(module: nn.Module, path) -> nn.Module:
    arrays = formats.decode_weights(Path(path).read_bytes())
    state = module.state_dict()
    missing = set(state) - set(arrays)
    extra = set(arrays) - set(state)
    if missing or extra:
        raise formats.FormatError(f"checkpoint mismatch: missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]}")
    for name, ref in state.items():
        arr = arrays[name]
        if tuple(arr.shape) != tuple(ref.shape):
            raise formats.FormatError(f"{name}: checkpoint shape {arr.shape} != model shape {tuple(ref.shape)}")
        state[name] = torch.as_tensor(np.asarray(arr), dtype=ref.dtype)
    module.load_state_dict(state)
    return module
