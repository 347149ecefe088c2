"""Persistence and glue shared by the command line and the experiment scripts."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from . import formats
from .motion import MotionCodec, RootFrame
from .nn import load_weights, save_weights
from .shape import ShapeConfig, ShapeEmbedder, encode_shape, shape_condition
from .spectral import Normalizer, SpectralBasis
from .stae import Stae, StaeConfig

CODEC_FILE = "codec.npz"
SHAPE_WEIGHTS, SHAPE_CONFIG = "shape.smdw", "shape.json"
STAE_WEIGHTS, STAE_CONFIG = "stae.smdw", "stae.json"


def stage_seed(seed: int, stage: str) -> int:
    """Independent 31-bit seed for a named pipeline stage."""
    digest = hashlib.blake2b(f"{int(seed)}:{stage}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") & 0x7FFFFFFF


def save_codec(path, codec: MotionCodec) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, eigenvalues=codec.basis.eigenvalues, eigenvectors=codec.basis.eigenvectors,
             mean=codec.normalizer.mean, std=codec.normalizer.std, var=codec.normalizer.per_coeff_variance,
             root_weights=codec.root.root_weights, left_idx=codec.root.left_idx, right_idx=codec.root.right_idx)
    tmp.replace(path)


def load_codec(path) -> MotionCodec:
    with np.load(path) as z:
        basis = SpectralBasis(z["eigenvalues"], z["eigenvectors"])
        norm = Normalizer(z["mean"], z["std"], z["var"])
        root = RootFrame(z["root_weights"], z["left_idx"], z["right_idx"])
    return MotionCodec(root, basis, norm)


def save_shape_embedder(model: ShapeEmbedder, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_weights(model, directory / SHAPE_WEIGHTS)
    (directory / SHAPE_CONFIG).write_text(json.dumps(model.cfg.to_dict(), indent=2, sort_keys=True))


def load_shape_embedder(directory) -> ShapeEmbedder:
    directory = Path(directory)
    cfg = ShapeConfig.from_dict(json.loads((directory / SHAPE_CONFIG).read_text()))
    arrays = formats.decode_weights((directory / SHAPE_WEIGHTS).read_bytes())
    n, size = arrays["eigenvectors"].shape
    root = RootFrame(np.zeros(n), arrays["left_idx"].astype(np.int64), arrays["right_idx"].astype(np.int64))
    model = ShapeEmbedder(cfg, np.zeros((n, size)), np.zeros((size, 3)), np.ones((size, 3)), root)
    load_weights(model, directory / SHAPE_WEIGHTS)
    model.eval()
    return model


def save_stae(model: Stae, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_weights(model, directory / STAE_WEIGHTS)
    model.cfg.save(directory / STAE_CONFIG)


def load_stae(directory) -> Stae:
    directory = Path(directory)
    cfg = StaeConfig.load(directory / STAE_CONFIG)
    model = Stae(cfg)
    load_weights(model, directory / STAE_WEIGHTS)
    model.eval()
    return model


def motion_shape_codes(embedder: ShapeEmbedder, motions) -> list[np.ndarray]:
    """Per-frame conditioning codes for every motion (each F x D_s)."""
    return [shape_condition(encode_shape(embedder, m.frames)) for m in motions]


def target_code(embedder: ShapeEmbedder, mesh) -> np.ndarray:
    return shape_condition(encode_shape(embedder, np.asarray(mesh)))


def set_threads(n: int | None = None) -> None:
    if n:
        torch.set_num_threads(int(n))
