"""Physical plausibility, diversity and shape-consistency metrics (lengths reported in mm)."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .body import MotionSequence
from .shape import canonicalize_to_tpose, encode_shape

CONTACT_EPS = 0.005
MM = 1000.0


def _frames(motion) -> np.ndarray:
    frames = motion.frames if isinstance(motion, MotionSequence) else motion
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[-1] != 3:
        raise ValueError(f"expected F x N x 3 frames, got {frames.shape}")
    return frames


def penetrate(motion, floor_y: float = 0.0) -> float:
    """Per frame, mean depth of the vertices below the floor (0 if none); averaged over frames."""
    h = _frames(motion)[..., 1] - floor_y
    below = h < 0
    depth = np.where(below, -h, 0.0).sum(axis=1)
    count = below.sum(axis=1)
    per_frame = np.divide(depth, count, out=np.zeros_like(depth), where=count > 0)
    return float(per_frame.mean() * MM)


def float_metric(motion, floor_y: float = 0.0) -> float:
    """Mean over frames of the lowest vertex's clearance above the floor."""
    low = _frames(motion)[..., 1].min(axis=1) - floor_y
    return float(np.maximum(low, 0.0).mean() * MM)


def skate(motion, floor_y: float = 0.0, contact_eps: float = CONTACT_EPS) -> float:
    """Mean horizontal displacement of vertices in contact in both frames of a consecutive pair."""
    fr = _frames(motion)
    h = fr[..., 1] - floor_y
    contact = h < contact_eps
    both = contact[1:] & contact[:-1]
    if not both.any():
        return 0.0
    disp = np.linalg.norm((fr[1:] - fr[:-1])[..., [0, 2]], axis=-1)
    return float(disp[both].mean() * MM)


def mean_vertex_distance(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b), axis=-1).mean())


def shape_consistency(motion, target_mesh, embedder) -> tuple[float, float]:
    """(intra, vs_target) in mm after mapping every frame and the target to a T-pose."""
    if not getattr(embedder, "is_trained", False):
        raise ValueError("shape consistency needs a trained shape embedder; run train-shape first")
    fr = _frames(motion)
    tp = canonicalize_to_tpose(embedder, fr)
    target = canonicalize_to_tpose(embedder, np.asarray(target_mesh))
    f = len(tp)
    if f > 1:
        iu = np.triu_indices(f, 1)
        intra = np.linalg.norm(tp[iu[0]] - tp[iu[1]], axis=-1).mean()
    else:
        intra = 0.0
    vs = np.linalg.norm(tp - target[None], axis=-1).mean()
    return float(intra * MM), float(vs * MM)


def motion_features(motion, embedder, root) -> np.ndarray:
    """Temporal mean of per-frame shape-encoder features plus root-trajectory statistics.

    Trajectory part: net horizontal displacement, per-axis root std, and mean
    root speed (m/s) so that still and travelling motions separate.
    """
    mo = motion if isinstance(motion, MotionSequence) else MotionSequence(frames=_frames(motion), action_id=-1, fps=30.0)
    fr = _frames(mo)
    z = encode_shape(embedder, fr).mean(axis=0)
    z = z / max(np.linalg.norm(z), 1e-12)
    p = root.root_position(fr)
    net = np.linalg.norm((p[-1] - p[0])[[0, 2]])
    speed = np.linalg.norm(np.diff(p, axis=0), axis=1).mean() * mo.fps
    return np.concatenate([z, [net], p.std(axis=0), [speed]])


def diversity(features) -> float:
    """Mean pairwise Euclidean distance between motion feature vectors."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or len(feats) < 2:
        raise ValueError("diversity needs at least 2 motions")
    iu = np.triu_indices(len(feats), 1)
    return float(np.linalg.norm(feats[iu[0]] - feats[iu[1]], axis=-1).mean())


@dataclass
class MetricReport:
    penetrate_mm: float
    float_mm: float
    skate_mm: float
    diversity: float | None = None
    shape_intra_mm: float | None = None
    shape_vs_target_mm: float | None = None
    penetrate_std: float | None = None
    float_std: float | None = None
    skate_std: float | None = None

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2))


def physics_row(motion) -> dict:
    return {"penetrate_mm": penetrate(motion), "float_mm": float_metric(motion), "skate_mm": skate(motion)}


def aggregate(rows: list[dict], **extra) -> MetricReport:
    """Mean and std of the physics metrics over per-motion rows."""
    if not rows:
        raise ValueError("no motions to aggregate")
    arr = {k: np.array([r[k] for r in rows]) for k in ("penetrate_mm", "float_mm", "skate_mm")}
    return MetricReport(
        penetrate_mm=float(arr["penetrate_mm"].mean()), float_mm=float(arr["float_mm"].mean()),
        skate_mm=float(arr["skate_mm"].mean()), penetrate_std=float(arr["penetrate_mm"].std()),
        float_std=float(arr["float_mm"].std()), skate_std=float(arr["skate_mm"].std()), **extra)


def write_rows_csv(path, rows: list[dict]) -> None:
    cols = ["name", "penetrate_mm", "float_mm", "skate_mm"]
    extra = sorted({k for r in rows for k in r} - set(cols))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols + extra)
        w.writeheader()
        for r in rows:
            w.writerow(r)
