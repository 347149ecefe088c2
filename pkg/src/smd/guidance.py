"""Dual classifier-free guidance and the conditional ancestral sampling loop."""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np
import torch

from . import diffusion
from .stae import Stae


class UntrainedModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class GuidanceConfig:
    s_d: float = 0.85
    s_s: float = 0.7

    def __post_init__(self):
        if not (np.isfinite(self.s_d) and np.isfinite(self.s_s)):
            raise ValueError("guidance scales must be finite")


@dataclass
class Conditions:
    """Dynamic condition (action id or text, at most one) plus an optional shape code."""
    action: int | None = None
    text: str | None = None
    z_s: np.ndarray | None = None

    def __post_init__(self):
        if self.action is not None and self.text is not None:
            raise ValueError("give an action id or a text prompt, not both")


# ---------------------------------------------------------------- dynamic condition

def tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z0-9']+", text.lower())


def token_vector(token: str, dim: int) -> np.ndarray:
    """Deterministic unit-variance Gaussian vector seeded by a hash of the token."""
    seed = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")
    return np.random.default_rng(seed).standard_normal(dim)


def hash_bag_embedding(tokens, dim: int) -> np.ndarray:
    """Mean of per-token hash vectors; word order is irrelevant."""
    tokens = list(tokens)
    if not tokens:
        return np.zeros(dim)
    return np.mean([token_vector(t, dim) for t in tokens], axis=0)


def embed_dynamic(model: Stae, action: int | None = None, text=None):
    """z_d for an action id (trainable table row) or a text prompt (hash bag, then a dense layer).

    Returns None when neither is given, which the model maps to its null embedding.
    """
    if action is not None and text is not None:
        raise ValueError("give an action id or a text prompt, not both")
    if action is not None:
        if not 0 <= int(action) < model.cfg.num_actions:
            raise ValueError(f"unknown action id {action}; valid ids are 0..{model.cfg.num_actions - 1}")
        return model.action_table.weight[int(action)]
    if text is not None:
        tokens = tokenize(text) if isinstance(text, str) else list(text)
        bag = torch.as_tensor(hash_bag_embedding(tokens, model.cfg.text_dim), dtype=model.text_proj.weight.dtype)
        return model.text_proj(bag)
    return None


# ---------------------------------------------------------------- guidance

def cfg_combine(u, d, s_pred, cfg: GuidanceConfig):
    if not (u.shape == d.shape == s_pred.shape):
        raise ValueError("guidance branches must share one shape")
    return u + cfg.s_d * (d - u) + cfg.s_s * (s_pred - u)


def respace(sched: diffusion.Schedule, steps: int):
    """Ancestral schedule over ``steps`` evenly spaced original timesteps.

    Returns ``(sub_schedule, timesteps)`` where ``timesteps[i]`` is the original
    step the model sees at sub-step ``i`` (index 0 unused).
    """
    if not 1 <= steps <= sched.T:
        raise ValueError(f"steps must lie in [1, {sched.T}]")
    if steps == sched.T:
        return sched, np.arange(sched.T + 1)
    ts = np.unique(np.round(np.linspace(1, sched.T, steps)).astype(int))
    ts = np.concatenate([[0], ts])
    ab = sched.alpha_bar[ts]
    beta = np.zeros(len(ts))
    beta[1:] = 1.0 - ab[1:] / ab[:-1]
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    bt = np.zeros(len(ts))
    bt[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:]
    sub = diffusion.Schedule(len(ts) - 1, sched.s_offset, beta, alpha, alpha_bar, bt, np.sqrt(bt),
                             sched.alpha_bar_unclipped[ts])
    return sub, ts


@dataclass
class SampleResult:
    x0: np.ndarray
    calls: dict = field(default_factory=dict)
    noise_draws: int = 0
    steps: int = 0


def sample(model: Stae, cond: Conditions, frames: int, sched: diffusion.Schedule, cfg: GuidanceConfig,
           seed: int, steps: int | None = None, forward=None) -> SampleResult:
    """Draw x_T ~ N(0, I) and run the guided reverse chain down to x_0.

    ``forward`` substitutes the denoiser call (used for instrumentation);
    it defaults to ``model`` itself.
    """
    if not isinstance(model, Stae) or not model.is_trained:
        raise UntrainedModelError("the denoiser has not been trained; run train-diffusion first")
    if frames < 2 or frames > model.cfg.frames:
        raise ValueError(f"frames must lie in [2, {model.cfg.frames}]")
    forward = forward or model
    model.eval()
    sub, ts = respace(sched, steps or sched.T)
    gen = torch.Generator().manual_seed(int(seed))
    calls = {"uncond": 0, "dynamic": 0, "shape": 0}
    draws = 0
    with torch.no_grad():
        z_d = embed_dynamic(model, cond.action, cond.text)
        z_s = None if cond.z_s is None else torch.as_tensor(np.asarray(cond.z_s), dtype=torch.float32)
        x = torch.randn((frames, model.cfg.rows, 3), generator=gen)
        for i in range(sub.T, 0, -1):
            t = int(ts[i])
            u = forward(x, t, None, None)
            calls["uncond"] += 1
            d = s_pred = u
            if cfg.s_d != 0.0:
                d = forward(x, t, z_d, None)
                calls["dynamic"] += 1
            if cfg.s_s != 0.0:
                s_pred = forward(x, t, None, z_s)
                calls["shape"] += 1
            x0_hat = cfg_combine(u, d, s_pred, cfg)
            if i > 1:
                z = torch.randn(x.shape, generator=gen)
                draws += 1
            else:
                z = None
            x = diffusion.reverse_step(x, x0_hat, i, z, sub)
    return SampleResult(x.double().numpy(), calls, draws, sub.T)

