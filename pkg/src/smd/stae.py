"""Spectral-temporal autoencoder denoiser, its training losses and training loop."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import diffusion
from .motion import COEFF_START, P_ROW, R_ROW, align_window
from .nn import SpectralDecoder, SpectralEncoder, Stylization, TransformerLayer, timestep_embedding


@dataclass
class StaeConfig:
    k: int = 83              # ~1024/6890 of the synthetic body's 556 vertices
    frames: int = 60
    latent_dim: int = 256
    heads: int = 8
    layers: int = 4
    conv_channels: tuple = (16, 32)
    kernel: int = 5
    dropout: float = 0.2
    shape_dim: int = 256
    num_actions: int = 8
    text_dim: int = 64
    T: int = 1000
    s_offset: float = 0.008
    lambda_d: float = 1.0
    lambda_c: float = 1.0
    lambda_m: float = 1.0
    lambda_p: float = 50.0
    lambda_r: float = 1e4
    mask_prob_d: float = 0.1
    mask_prob_s: float = 0.1
    lr: float = 1e-4
    lr_decay: str = "none"   # "none" or "cosine" (decay to zero over the run)
    batch_size: int = 32
    steps: int = 2000
    seed: int = 0

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        for name in ("k", "frames", "latent_dim", "heads", "layers", "kernel", "shape_dim", "num_actions",
                     "text_dim", "T", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        for name in ("mask_prob_d", "mask_prob_s"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.lr_decay not in ("none", "cosine"):
            raise ValueError("lr_decay must be 'none' or 'cosine'")
        if self.latent_dim % self.heads:
            raise ValueError("latent_dim must be divisible by heads")
        if min(self.lambda_d, self.lambda_c, self.lambda_m, self.lambda_p, self.lambda_r) < 0:
            raise ValueError("loss weights must be nonnegative")

    @property
    def rows(self) -> int:
        return self.k + 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StaeConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "StaeConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


class Stae(nn.Module):
    def __init__(self, cfg: StaeConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.cfg = cfg
        d = cfg.latent_dim
        self.encoder = SpectralEncoder(cfg.rows, d, cfg.conv_channels, cfg.kernel)
        self.decoder = SpectralDecoder(cfg.rows, d, cfg.conv_channels, cfg.kernel)
        self.stylize = Stylization(d, cfg.shape_dim)
        self.time_proj = nn.Linear(d, d)
        self.action_table = nn.Embedding(cfg.num_actions, d)
        self.text_proj = nn.Linear(cfg.text_dim, d)
        self.null_dynamic = nn.Parameter(torch.zeros(d))
        self.null_shape = nn.Parameter(torch.zeros(cfg.shape_dim))
        self.pos = nn.Parameter(torch.randn(cfg.frames + 1, d) * 0.02)
        self.layers = nn.ModuleList(TransformerLayer(d, cfg.heads, cfg.dropout, generator) for _ in range(cfg.layers))
        self.norm = nn.LayerNorm(d)
        self.register_buffer("trained", torch.zeros(()))

    def forward(self, x_t, t, z_d=None, z_s=None, mask_d=None, mask_s=None):
        """Predict x0 from x_t.

        ``x_t`` is B x F x (k+2) x 3 (or unbatched F x (k+2) x 3). ``z_d`` and ``z_s``
        may be None, meaning the condition is absent for every sample; boolean
        ``mask_d``/``mask_s`` of length B swap individual samples to the null embeddings.
        """
        single = x_t.ndim == 3
        if single:
            x_t = x_t[None]
        b, f, rows, c = x_t.shape
        if rows != self.cfg.rows or c != 3:
            raise ValueError(f"expected F x {self.cfg.rows} x 3 frames, got {tuple(x_t.shape[1:])}")
        if f > self.cfg.frames:
            raise ValueError(f"{f} frames exceed the configured maximum {self.cfg.frames}")
        zd = self._condition(z_d, mask_d, self.null_dynamic, b)
        zs = self._condition(z_s, mask_s, self.null_shape, b)
        t = torch.as_tensor(t).reshape(-1).expand(b)

        h = self.encoder(x_t)
        h = self.stylize(h, zs)
        temb = timestep_embedding(t, self.cfg.latent_dim).to(h.dtype)
        token = self.time_proj(temb) + zd
        seq = torch.cat([token[:, None], h], dim=1) + self.pos[: f + 1]
        for layer in self.layers:
            seq = layer(seq)
        out = self.decoder(self.norm(seq[:, 1:]))
        return out[0] if single else out

    @staticmethod
    def _condition(z, mask, null, b):
        if z is None:
            return null.expand(b, -1)
        z = z.reshape(b, -1) if z.ndim == 1 and b == 1 else z
        if z.ndim == 1:
            z = z.expand(b, -1)
        if mask is None:
            return z
        mask = torch.as_tensor(mask, dtype=torch.bool).reshape(b, 1)
        return torch.where(mask, null.expand(b, -1), z)

    def mark_trained(self):
        self.trained.fill_(1.0)

    @property
    def is_trained(self) -> bool:
        return bool(self.trained.item() > 0)


# ---------------------------------------------------------------- losses

@dataclass
class LossReport:
    l_diff: float
    l_coef: float
    l_mesh: float
    l_pos: float
    l_res_p: float
    total: float

    def weighted_sum(self, cfg: StaeConfig) -> float:
        return (cfg.lambda_d * self.l_diff + cfg.lambda_c * self.l_coef + cfg.lambda_m * self.l_mesh
                + cfg.lambda_p * self.l_pos + cfg.lambda_r * self.l_res_p)


@dataclass
class LossContext:
    """Tensors the auxiliary losses need: truncated basis, coefficient std and variance weights."""
    eigenvectors: torch.Tensor  # N x k
    std: torch.Tensor           # k x 3
    variance: torch.Tensor      # k x 3

    @classmethod
    def build(cls, basis, normalizer, dtype=torch.float32) -> "LossContext":
        return cls(torch.as_tensor(basis.eigenvectors, dtype=dtype),
                   torch.as_tensor(normalizer.std, dtype=dtype),
                   torch.as_tensor(normalizer.per_coeff_variance, dtype=dtype))

    def to(self, dtype) -> "LossContext":
        return LossContext(self.eigenvectors.to(dtype), self.std.to(dtype), self.variance.to(dtype))


def loss_terms(x0, x0_hat, ctx: LossContext, var_weights=None) -> dict:
    """Five loss terms as tensors, averaged over the batch axis.

    ``x0`` and ``x0_hat`` are B x F x (k+2) x 3. Coefficient rows are in
    normalized units; the mesh term denormalizes by the std (the mean cancels).
    """
    if x0.shape != x0_hat.shape:
        raise ValueError(f"shape mismatch {tuple(x0.shape)} vs {tuple(x0_hat.shape)}")
    if x0.ndim == 3:
        x0, x0_hat = x0[None], x0_hat[None]
    f = x0.shape[1]
    var = ctx.variance if var_weights is None else torch.as_tensor(var_weights, dtype=x0.dtype)
    diff = x0_hat - x0
    dc = diff[:, :, COEFF_START:]
    l_diff = (diff ** 2).mean()
    l_coef = (var * dc ** 2).sum(dim=(1, 2, 3)).mean() / f
    dm = torch.einsum("nk,bfkc->bfnc", ctx.eigenvectors, dc * ctx.std)
    l_mesh = (dm ** 2).sum(dim=(1, 2, 3)).mean() / f
    dp, dr = diff[:, :, P_ROW], diff[:, :, R_ROW]
    l_pos = ((dr ** 2).sum(dim=(1, 2)) + (dp ** 2).sum(dim=(1, 2))).mean() / f
    if f > 1:
        vel = dp[:, 1:] - dp[:, :-1]
        l_res = (vel ** 2).sum(dim=(1, 2)).mean() / (f - 1)
    else:
        l_res = torch.zeros((), dtype=x0.dtype)
    return {"l_diff": l_diff, "l_coef": l_coef, "l_mesh": l_mesh, "l_pos": l_pos, "l_res_p": l_res}


def weighted_total(terms: dict, cfg: StaeConfig):
    w = {"l_diff": cfg.lambda_d, "l_coef": cfg.lambda_c, "l_mesh": cfg.lambda_m, "l_pos": cfg.lambda_p,
         "l_res_p": cfg.lambda_r}
    return sum(w[name] * terms[name].double() for name in w)


def compute_losses(x0, x0_hat, ctx: LossContext, cfg: StaeConfig | None = None, var_weights=None) -> LossReport:
    cfg = cfg or StaeConfig()
    with torch.no_grad():
        x0, x0_hat = torch.as_tensor(x0), torch.as_tensor(x0_hat)
        terms = loss_terms(x0, x0_hat, ctx.to(x0.dtype), var_weights)
        total = weighted_total(terms, cfg)
    return LossReport(**{k: float(v) for k, v in terms.items()}, total=float(total))


# ---------------------------------------------------------------- training

def sample_masks(batch: int, p_d: float, p_s: float, gen: torch.Generator):
    """Independent per-sample condition masks."""
    return torch.rand(batch, generator=gen) < p_d, torch.rand(batch, generator=gen) < p_s


@dataclass
class TrainBatch:
    x0: torch.Tensor       # B x F x (k+2) x 3
    actions: torch.Tensor  # B long
    z_s: torch.Tensor      # B x D_s


@dataclass
class Trainer:
    model: Stae
    ctx: LossContext
    schedule: diffusion.Schedule
    gen: torch.Generator
    total_steps: int = 0
    optimizer: torch.optim.Optimizer = field(init=False)
    scheduler: object = field(init=False, default=None)
    mask_log: list = field(default_factory=list)

    def __post_init__(self):
        cfg = self.model.cfg
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8)
        if cfg.lr_decay == "cosine" and self.total_steps > 0:
            self.scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(self.optimizer, T_max=self.total_steps)

    def step(self, batch: TrainBatch) -> LossReport:
        cfg, model = self.model.cfg, self.model
        b = batch.x0.shape[0]
        if b == 0:
            raise ValueError("empty batch")
        model.train()
        t = torch.randint(1, self.schedule.T + 1, (b,), generator=self.gen)
        noise = torch.randn(batch.x0.shape, generator=self.gen, dtype=batch.x0.dtype)
        x_t = diffusion.q_sample(batch.x0, t, noise, self.schedule)
        mask_d, mask_s = sample_masks(b, cfg.mask_prob_d, cfg.mask_prob_s, self.gen)
        self.mask_log.append((int(mask_d.sum()), int(mask_s.sum()), b))
        z_d = model.action_table(batch.actions)
        x0_hat = model(x_t, t, z_d, batch.z_s, mask_d, mask_s)
        terms = loss_terms(batch.x0, x0_hat, self.ctx)
        total = weighted_total(terms, cfg)
        self.optimizer.zero_grad(set_to_none=True)
        total.backward()
        self.optimizer.step()
        if self.scheduler is not None:
            self.scheduler.step()
        return LossReport(**{k: float(v.detach()) for k, v in terms.items()}, total=float(total.detach()))


def seeded_generator(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(int(seed))


def build_model(cfg: StaeConfig, seed: int | None = None):
    """Model plus the generator that drives its dropout masks; both seeded from ``seed``."""
    seed = cfg.seed if seed is None else seed
    torch.manual_seed(seed)
    gen = seeded_generator(seed + 1)
    return Stae(cfg, gen), gen


class BatchSampler:
    """Random fixed-length windows from a pool of packed motions.

    Each window is re-anchored to start at the origin facing +z unless ``align`` is off.
    """

    def __init__(self, tensors, actions, shape_codes, frames: int, batch_size: int, gen: torch.Generator,
                 align: bool = True):
        self.tensors = [torch.as_tensor(x, dtype=torch.float64) for x in tensors]
        self.align = align
        self.actions = torch.as_tensor(actions, dtype=torch.long)
        # shape_codes[i] is either one code or a per-frame stack to draw targets from
        self.codes = [torch.as_tensor(c, dtype=torch.float32) for c in shape_codes]
        if not self.tensors:
            raise ValueError("no training motions")
        if any(x.shape[0] < frames for x in self.tensors):
            raise ValueError(f"every motion needs at least {frames} frames")
        self.frames, self.batch_size, self.gen = frames, batch_size, gen

    def __call__(self) -> TrainBatch:
        idx = torch.randint(len(self.tensors), (self.batch_size,), generator=self.gen)
        xs, zs = [], []
        for i in idx.tolist():
            x = self.tensors[i]
            start = int(torch.randint(x.shape[0] - self.frames + 1, (1,), generator=self.gen))
            window = x[start:start + self.frames]
            if self.align:
                window = torch.as_tensor(align_window(window.numpy()))
            xs.append(window.float())
            code = self.codes[i]
            if code.ndim == 2:
                code = code[int(torch.randint(code.shape[0], (1,), generator=self.gen))]
            zs.append(code)
        return TrainBatch(torch.stack(xs), self.actions[idx], torch.stack(zs))


def train(model: Stae, ctx: LossContext, sampler: BatchSampler, steps: int, gen: torch.Generator,
          csv_path=None, log_every: int = 0, log=print):
    """Run ``steps`` optimizer steps; returns the list of LossReports."""
    sched = diffusion.cosine_schedule(model.cfg.T, model.cfg.s_offset)
    trainer = Trainer(model, ctx, sched, gen, total_steps=steps)
    reports = []
    writer, fh = None, None
    if csv_path is not None:
        Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
        fh = open(csv_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["step", "l_diff", "l_coef", "l_mesh", "l_pos", "l_res_p", "total"])
    start = time.time()
    try:
        for i in range(steps):
            rep = trainer.step(sampler())
            reports.append(rep)
            if writer:
                writer.writerow([i + 1, rep.l_diff, rep.l_coef, rep.l_mesh, rep.l_pos, rep.l_res_p, rep.total])
            if log_every and (i + 1) % log_every == 0:
                log(f"step {i + 1}/{steps} total {rep.total:.4f} ({time.time() - start:.0f}s)")
    finally:
        if fh:
            fh.close()
    model.mark_trained()
    model.eval()
    return reports


def smoothed(values, window: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return np.array([v.mean()])
    return np.convolve(v, np.ones(window) / window, mode="valid")
