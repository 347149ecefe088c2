"""Desk-scale experiments shared by ``scripts/`` and the acceptance suite.

Each function builds its own data from fixed seeds and returns a plain dict of
measurements; pass/fail thresholds live with the callers.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch

from . import body, diffusion, guidance, metrics, shape, spectral, stae
from .motion import MotionCodec, RootFrame


def _body():
    model = body.make_body_model(0)
    return model, RootFrame.from_model(model), spectral.cached_basis(model.topology, model.n_vertices)


# ---------------------------------------------------------------- spectral

def spectral_roundtrip(n_bodies: int = 50, seed: int = 0) -> dict:
    """k = N reconstruction of random shaped and posed bodies, including the eigensolve."""
    start = time.perf_counter()
    model = body.make_body_model(0)
    basis = spectral.eigendecompose(spectral.build_laplacian(model.topology), model.n_vertices)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_bodies):
        mo = body.synth_motion(model, body.sample_shape(rng), int(rng.integers(body.NUM_ACTIONS)), F=2,
                               seed=i, initial_yaw=float(rng.uniform(-np.pi, np.pi)))
        mesh = mo.frames[1]
        rec = spectral.igft(spectral.gft(mesh, basis), basis)
        worst = max(worst, np.linalg.norm(rec - mesh) / np.linalg.norm(mesh))
    return {"max_relative_error": float(worst), "seconds": time.perf_counter() - start}


def spectrum_meshes(n_identities: int = 20, seed: int = 0):
    model, _, basis = _body()
    meshes = [body.apply_shape(model, s) for s in body.identity_shapes(n_identities, seed)]
    return meshes, basis


def scaled_ks(n: int) -> list[int]:
    """128, 512, 1024 and 2048 of the 6890-vertex reference body, plus all N."""
    return sorted({max(1, round(f * n)) for f in (128 / 6890, 512 / 6890, 1024 / 6890, 2048 / 6890, 1.0)})


# ---------------------------------------------------------------- overfit

OVERFIT_CFG = stae.StaeConfig(k=32, frames=30, latent_dim=64, layers=2, T=100, batch_size=4, shape_dim=16,
                              dropout=0.0)


def overfit(steps: int = 2000, seed: int = 0, cfg: stae.StaeConfig = OVERFIT_CFG, log_every: int = 0) -> dict:
    """Train a small STAE on four fixed motions and report the loss drop."""
    model_b, _, full = _body()
    basis = full.truncate(cfg.k)
    actions = [0, 3, 5, 7]
    motions = [body.synth_motion(model_b, body.sample_shape(np.random.default_rng(i)), a, F=cfg.frames, fps=15,
                                 seed=i) for i, a in enumerate(actions)]
    codec = MotionCodec.fit(model_b, basis, motions)
    xs = [codec.to_tensor(m) for m in motions]
    codes = [np.random.default_rng(100 + i).standard_normal(cfg.shape_dim) for i in range(len(motions))]
    model, gen = stae.build_model(cfg, seed)
    ctx = stae.LossContext.build(basis, codec.normalizer)
    sampler = stae.BatchSampler(xs, actions, codes, cfg.frames, cfg.batch_size, gen)
    start = time.perf_counter()
    reports = stae.train(model, ctx, sampler, steps, gen, log_every=log_every)
    seconds = time.perf_counter() - start
    totals = np.array([r.total for r in reports])
    window = max(1, min(20, steps // 10))
    identity_gap = max(abs(r.total - r.weighted_sum(cfg)) / max(abs(r.total), 1e-30) for r in reports)
    return {"first": float(totals[:window].mean()), "last": float(totals[-window:].mean()),
            "reduction": float(totals[:window].mean() / totals[-window:].mean()),
            "identity_rel_gap": float(identity_gap), "seconds": seconds, "totals": totals}


# ---------------------------------------------------------------- shape embedder

def shape_embedder_eval(identities: int = 20, train_poses: int = 20, test_poses: int = 5, steps: int | None = None,
                        seed: int = 0, log_every: int = 0) -> dict:
    """Train on T-poses plus a pose pool, evaluate on held-out poses of the same identities."""
    model_b, root, full = _body()
    shapes = body.identity_shapes(identities, seed)
    tposes = np.stack([body.apply_shape(model_b, s) for s in shapes])
    train = body.pose_pool(model_b, shapes, train_poses, seed=seed + 1)
    test = body.pose_pool(model_b, shapes, test_poses, seed=seed + 2)
    cfg = shape.ShapeConfig(seed=seed)
    emb = shape.build_shape_embedder(cfg, full, root, np.concatenate([tposes, train.reshape(-1, *tposes.shape[1:])]))
    start = time.perf_counter()
    shape.train_shape_encoder(emb, tposes, train, steps=steps, seed=seed, log_every=log_every)
    seconds = time.perf_counter() - start
    flat = test.reshape(-1, *tposes.shape[1:])
    labels = np.repeat(np.arange(identities), test_poses)
    z = shape.encode_shape(emb, flat)
    canon = np.stack([shape.canonical_tpose(t, root) for t in tposes])
    rec_t = shape.canonicalize_to_tpose(emb, tposes)
    rec_p = shape.canonicalize_to_tpose(emb, test)
    return {
        "retrieval": shape.retrieval_accuracy(z, labels),
        "separation": shape.separation_ratio(z, labels),
        "tpose_error_mm": float(np.linalg.norm(rec_t - canon, axis=-1).mean() * 1000),
        "posed_error_mm": float(np.linalg.norm(rec_p - canon[:, None], axis=-1).mean() * 1000),
        "seconds": seconds,
    }


# ---------------------------------------------------------------- end-to-end conditioning

@dataclass
class ConditioningSetup:
    identities: int = 6
    actions: tuple = (0, 7)          # walk, idle-sway
    motions_per_pair: int = 3
    frames: int = 30
    fps: float = 15.0
    shape_poses: int = 20
    shape_steps: int = 1500
    stae_steps: int = 12000
    latent_dim: int = 128
    layers: int = 2
    batch_size: int = 16
    dropout: float = 0.1
    lr: float = 1e-3
    lr_decay: str = "cosine"
    s_d: float = 1.0
    s_s: float = 1.0
    sample_steps: int = 100
    seed: int = 0

    def stae_config(self) -> stae.StaeConfig:
        return stae.StaeConfig(k=83, frames=self.frames, latent_dim=self.latent_dim, layers=self.layers,
                               batch_size=self.batch_size, dropout=self.dropout, lr=self.lr, lr_decay=self.lr_decay,
                               steps=self.stae_steps, seed=self.seed)


def conditioning_data(setup: ConditioningSetup):
    """Shape embedder, codec and training tensors for the conditioning experiment."""
    model_b, root, full = _body()
    ids = body.identity_shapes(setup.identities, setup.seed)
    tposes = np.stack([body.apply_shape(model_b, s) for s in ids])
    pool = body.pose_pool(model_b, ids, setup.shape_poses, seed=setup.seed + 1)
    emb = shape.build_shape_embedder(shape.ShapeConfig(seed=setup.seed), full, root,
                                     np.concatenate([tposes, pool.reshape(-1, *tposes.shape[1:])]))
    shape.train_shape_encoder(emb, tposes, pool, steps=setup.shape_steps, seed=setup.seed)
    rng = np.random.default_rng([setup.seed, 31337])
    motions, actions = [], []
    for i in range(setup.identities):
        for a in setup.actions:
            for s in range(setup.motions_per_pair):
                motions.append(body.synth_motion(model_b, ids[i], a, F=setup.frames, fps=setup.fps,
                                                 seed=100 * i + s, initial_yaw=float(rng.uniform(-3, 3))))
                actions.append(a)
    codec = MotionCodec.fit(model_b, full.truncate(83), motions)
    xs = [codec.to_tensor(m) for m in motions]
    codes = [shape.shape_condition(shape.encode_shape(emb, m.frames)) for m in motions]
    targets = body.pose_pool(model_b, ids, 1, seed=setup.seed + 99)[:, 0]
    return {"model": model_b, "root": root, "emb": emb, "codec": codec, "xs": xs, "codes": codes,
            "actions": actions, "targets": targets}


def train_conditioned(setup: ConditioningSetup, data: dict, log_every: int = 0):
    cfg = setup.stae_config()
    model, gen = stae.build_model(cfg)
    ctx = stae.LossContext.build(data["codec"].basis, data["codec"].normalizer)
    sampler = stae.BatchSampler(data["xs"], data["actions"], data["codes"], cfg.frames, cfg.batch_size, gen)
    reports = stae.train(model, ctx, sampler, cfg.steps, gen, log_every=log_every)
    return model, reports


def evaluate_conditioning(model: stae.Stae, setup: ConditioningSetup, data: dict) -> dict:
    """Sample every (identity, action) pair against a held-out-pose target and score it."""
    sched = diffusion.cosine_schedule(model.cfg.T, model.cfg.s_offset)
    gcfg = guidance.GuidanceConfig(setup.s_d, setup.s_s)
    targets, emb, root = data["targets"], data["emb"], data["root"]
    rows = []
    for i, target in enumerate(targets):
        z = shape.shape_condition(shape.encode_shape(emb, target))
        for a in setup.actions:
            res = guidance.sample(model, guidance.Conditions(action=a, z_s=z), setup.frames, sched, gcfg,
                                  seed=1000 * i + a, steps=setup.sample_steps)
            mo = data["codec"].to_motion(res.x0, a, setup.fps)
            _, vs = metrics.shape_consistency(mo, target, emb)
            others = [metrics.shape_consistency(mo, targets[j], emb)[1] for j in range(len(targets)) if j != i]
            p = root.root_position(mo.frames)
            rows.append({"identity": i, "action": a, "vs_target_mm": vs, "baseline_mm": float(np.mean(others)),
                         "net_displacement_m": float(np.linalg.norm((p[-1] - p[0])[[0, 2]]))})
    vs = np.array([r["vs_target_mm"] for r in rows])
    base = np.array([r["baseline_mm"] for r in rows])
    return {"rows": rows, "vs_target_mm": float(vs.mean()), "baseline_mm": float(base.mean()),
            "ratio": float(base.mean() / vs.mean()), "worst_pair_ratio": float((base / vs).min())}


def ground_truth_ratio(setup: ConditioningSetup, data: dict) -> float:
    """The same ratio measured on the training motions themselves: the ceiling the embedder allows."""
    emb, targets = data["emb"], data["targets"]
    per_identity = len(setup.actions) * setup.motions_per_pair
    vs, base = [], []
    for idx, x in enumerate(data["xs"]):
        i = idx // per_identity
        mo = data["codec"].to_motion(x)
        vs.append(metrics.shape_consistency(mo, targets[i], emb)[1])
        base.append(np.mean([metrics.shape_consistency(mo, targets[j], emb)[1]
                             for j in range(len(targets)) if j != i]))
    return float(np.mean(base) / np.mean(vs))


def conditioning(setup: ConditioningSetup | None = None, log_every: int = 0) -> dict:
    setup = setup or ConditioningSetup()
    torch.manual_seed(setup.seed)
    start = time.perf_counter()
    data = conditioning_data(setup)
    model, reports = train_conditioned(setup, data, log_every)
    out = evaluate_conditioning(model, setup, data)
    out["ground_truth_ratio"] = ground_truth_ratio(setup, data)
    out["final_loss"] = float(np.mean([r.total for r in reports[-50:]]))
    out["seconds"] = time.perf_counter() - start
    return out


# ---------------------------------------------------------------- physics

def ground_truth_physics(per_action: int = 3, F: int = 60, seed: int = 0) -> list[dict]:
    model_b = body.make_body_model(0)
    shapes = body.identity_shapes(per_action, seed)
    rows = []
    for a in range(body.NUM_ACTIONS):
        for i, s in enumerate(shapes):
            mo = body.synth_motion(model_b, s, a, F=F, seed=seed * 1000 + 10 * a + i)
            rows.append({"action": body.ACTIONS[a], **metrics.physics_row(mo), "frames": mo.frames})
    return rows
