"""Model-free diffusion mathematics: cosine schedule, forward noising, posterior mean, reverse step.

Schedule arrays have length T + 1 and are indexed by the step t directly;
index 0 holds the clean-data convention (alpha_bar = 1, beta = 0).
Functions accept numpy arrays or torch tensors; ``t`` may be an int or a
per-sample integer array whose length matches the leading batch axis.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

BETA_MAX = 0.999


@dataclass(frozen=True)
class Schedule:
    T: int
    s_offset: float
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    beta_tilde: np.ndarray
    delta: np.ndarray
    alpha_bar_unclipped: np.ndarray

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "beta", "alpha_bar", "beta_tilde"])
            for t in range(self.T + 1):
                w.writerow([t, repr(float(self.beta[t])), repr(float(self.alpha_bar[t])),
                            repr(float(self.beta_tilde[t]))])


def cosine_alpha_bar(t, T: int, s_offset: float) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)

    def f(u):
        return np.cos((u / T + s_offset) / (1.0 + s_offset) * np.pi / 2.0) ** 2

    return f(t) / f(0.0)


def cosine_schedule(T: int = 1000, s_offset: float = 0.008) -> Schedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if s_offset <= 0:
        raise ValueError("s_offset must be positive")
    raw = cosine_alpha_bar(np.arange(T + 1), T, s_offset)
    beta = np.zeros(T + 1)
    beta[1:] = np.minimum(1.0 - raw[1:] / raw[:-1], BETA_MAX)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    beta_tilde = np.zeros(T + 1)
    beta_tilde[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:]
    return Schedule(T, float(s_offset), beta, alpha, alpha_bar, beta_tilde, np.sqrt(beta_tilde), raw)


def _coef(values: np.ndarray, t, like):
    """Gather ``values[t]`` and shape it to broadcast against ``like`` along the batch axis."""
    if isinstance(t, torch.Tensor):
        t = t.detach().cpu().numpy()
    c = values[np.asarray(t)]
    if isinstance(like, torch.Tensor):
        c = torch.as_tensor(c, dtype=like.dtype, device=like.device)
    if np.ndim(t) == 1:
        c = c.reshape((-1,) + (1,) * (like.ndim - 1))
    return c


def _check_t(t, sched: Schedule):
    tt = np.asarray(t.detach().cpu() if isinstance(t, torch.Tensor) else t)
    if np.any(tt < 1) or np.any(tt > sched.T):
        raise ValueError(f"diffusion step must lie in [1, {sched.T}]")


def q_sample(x0, t, noise, sched: Schedule):
    """Draw x_t ~ q(x_t | x_0) with the supplied standard-normal ``noise``."""
    if tuple(noise.shape) != tuple(x0.shape):
        raise ValueError(f"noise shape {tuple(noise.shape)} != x0 shape {tuple(x0.shape)}")
    _check_t(t, sched)
    return _coef(np.sqrt(sched.alpha_bar), t, x0) * x0 + _coef(np.sqrt(1.0 - sched.alpha_bar), t, x0) * noise


def posterior_coefficients(sched: Schedule):
    """Per-step (x0 coefficient, x_t coefficient) arrays of the posterior mean; index 0 unused."""
    c0 = np.zeros(sched.T + 1)
    ct = np.zeros(sched.T + 1)
    ab, ab_prev = sched.alpha_bar[1:], sched.alpha_bar[:-1]
    c0[1:] = np.sqrt(ab_prev) * sched.beta[1:] / (1.0 - ab)
    ct[1:] = np.sqrt(sched.alpha[1:]) * (1.0 - ab_prev) / (1.0 - ab)
    return c0, ct


def posterior_mean(x_t, x0_hat, t, sched: Schedule):
    _check_t(t, sched)
    c0, ct = posterior_coefficients(sched)
    return _coef(c0, t, x0_hat) * x0_hat + _coef(ct, t, x_t) * x_t


def reverse_step(x_t, x0_hat, t: int, z, sched: Schedule):
    """One ancestral step x_t -> x_{t-1}; ``z`` must be zero at t = 1."""
    t = int(t)
    if t == 1 and z is not None and bool((abs(z) > 0).any()):
        raise ValueError("the final reverse step (t=1) takes z = 0")
    mu = posterior_mean(x_t, x0_hat, t, sched)
    if z is None:
        return mu
    return mu + float(sched.delta[t]) * z

