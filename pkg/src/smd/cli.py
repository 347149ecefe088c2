"""Command line entry point: ``smd <command> [flags]``.

Every command reads and writes under ``--work`` (default ``smd-work``):

    data/            gen-data        SMM1 motions, manifest.json, identities.json
    codec.npz        fit-basis       truncated basis, coefficient normalizer, root frame
    spectrum.csv     spectrum-curve  reconstruction error by k
    shape/           train-shape     shape embedder weights and config
    stae/            train-diffusion denoiser weights, config and loss.csv

``sample`` and ``eval`` take explicit output paths. Errors are printed as one
line ``error: <kind>: <message>``; a missing prerequisite exits with code 2.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import body, formats, pipeline
from .diffusion import cosine_schedule
from .guidance import Conditions, GuidanceConfig, UntrainedModelError, sample
from .metrics import aggregate, diversity, motion_features, physics_row, shape_consistency, write_rows_csv
from .motion import MotionCodec, RootFrame
from .shape import ShapeConfig, build_shape_embedder, canonical_tpose, train_shape_encoder
from .spectral import cached_basis, reconstruction_curve
from .stae import BatchSampler, LossContext, StaeConfig, build_model, train

log = logging.getLogger("smd")

# fractions of the reference body's 6890 vertices used for the spectrum sweep
SPECTRUM_FRACTIONS = (128 / 6890, 512 / 6890, 1024 / 6890, 2048 / 6890, 1.0)


class PrerequisiteError(RuntimeError):
    def __init__(self, path, command: str):
        super().__init__(f"{path} not found; run `smd {command}` first")
        self.command = command


def require(path: Path, command: str) -> Path:
    if not Path(path).exists():
        raise PrerequisiteError(path, command)
    return Path(path)


def writable_dir(path: Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    probe = path / ".write-probe"
    probe.write_bytes(b"")
    probe.unlink()
    return path


# ---------------------------------------------------------------- config plumbing

def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def add_config_flags(parser, cls, skip=("seed",)):
    """One optional flag per dataclass field; unset flags stay None so JSON values survive."""
    group = parser.add_argument_group(f"{cls.__name__} overrides")
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        default = f.default
        if isinstance(default, tuple):
            group.add_argument(_flag(f.name), type=int, nargs="+", default=None,
                               help=f"(default: {' '.join(map(str, default))})")
        else:
            group.add_argument(_flag(f.name), type=type(default), default=None, help=f"(default: {default})")


def resolve_config(cls, args, stage: str):
    """defaults < JSON file < flags; the stage seed derives from the resolved --seed."""
    values = {}
    if args.config is not None:
        values.update(json.loads(Path(args.config).read_text()))
    seed = values.pop("seed", 0) if args.seed is None else args.seed
    values.pop("seed", None)
    for f in dataclasses.fields(cls):
        v = getattr(args, f.name, None)
        if f.name != "seed" and v is not None:
            values[f.name] = v
    cfg = cls.from_dict({**values, "seed": pipeline.stage_seed(seed, stage)})
    return cfg, seed


def _seed(args, default: int = 0) -> int:
    return default if args.seed is None else args.seed


# ---------------------------------------------------------------- shared loading

def _paths(args):
    w = Path(args.work)
    return {"data": w / "data", "codec": w / pipeline.CODEC_FILE, "spectrum": w / "spectrum.csv",
            "shape": w / "shape", "stae": w / "stae"}


def _load_data(paths):
    require(paths["data"] / "manifest.json", "gen-data")
    meta = json.loads((paths["data"] / "identities.json").read_text())
    model = body.make_body_model(meta["seed"])
    rows, motions, shapes = body.load_dataset(paths["data"])
    return model, rows, motions, shapes, meta


def _shape_embedder(paths):
    require(paths["shape"] / pipeline.SHAPE_WEIGHTS, "train-shape")
    return pipeline.load_shape_embedder(paths["shape"])


# ---------------------------------------------------------------- commands

def cmd_gen_data(args):
    out = writable_dir(_paths(args)["data"])
    seed = pipeline.stage_seed(_seed(args), "gen-data")
    rows = body.make_dataset(args.n_motions, args.identities, args.frames, seed, out, fps=args.fps)
    print(json.dumps({"motions": len(rows), "manifest_sha256": body.manifest_hash(rows), "dir": str(out)}))


def cmd_fit_basis(args):
    paths = _paths(args)
    model, _, motions, _, _ = _load_data(paths)
    n = model.n_vertices
    if not 1 <= args.k <= n:
        raise ValueError(f"--k must lie in [1, {n}]")
    full = cached_basis(model.topology, n)
    codec = MotionCodec.fit(model, full.truncate(args.k), motions)
    pipeline.save_codec(paths["codec"], codec)
    print(json.dumps({"k": args.k, "n": n, "codec": str(paths["codec"])}))


def default_spectrum_ks(n: int) -> list[int]:
    return sorted({max(1, round(f * n)) for f in SPECTRUM_FRACTIONS})


def cmd_spectrum_curve(args):
    paths = _paths(args)
    require(paths["codec"], "fit-basis")
    model, _, motions, shapes, _ = _load_data(paths)
    n = model.n_vertices
    ks = sorted(set(args.ks)) if args.ks else default_spectrum_ks(n)
    meshes = [body.apply_shape(model, s) for s in shapes] + [m.frames[0] for m in motions]
    rows = reconstruction_curve(meshes, ks, cached_basis(model.topology, n))
    out = Path(args.out) if args.out else paths["spectrum"]
    lines = ["k,mean_error_mm,max_error_mm"] + [f"{k},{mean:.9g},{mx:.9g}" for k, mean, mx in rows]
    formats.atomic_write_bytes(out, ("\n".join(lines) + "\n").encode())
    print(json.dumps({"csv": str(out), "rows": len(rows)}))


def cmd_train_shape(args):
    paths = _paths(args)
    model, _, _, shapes, _ = _load_data(paths)
    cfg, seed = resolve_config(ShapeConfig, args, "train-shape")
    writable_dir(paths["shape"])
    root = RootFrame.from_model(model)
    tposes = np.stack([canonical_tpose(body.apply_shape(model, s), root) for s in shapes])
    poses = body.pose_pool(model, shapes, args.poses, pipeline.stage_seed(seed, "train-shape/poses"))
    basis = cached_basis(model.topology, model.n_vertices).truncate(max(cfg.k, cfg.k_out))
    fit = np.concatenate([tposes, poses.reshape(-1, *tposes.shape[1:])])
    emb = build_shape_embedder(cfg, basis, root, fit)
    hist = train_shape_encoder(emb, tposes, poses, log_every=args.log_every, log=log.info)
    pipeline.save_shape_embedder(emb, paths["shape"])
    print(json.dumps({"steps": cfg.steps, "final_loss": hist[-1][0] if hist else None, "dir": str(paths["shape"])}))


def cmd_train_diffusion(args):
    paths = _paths(args)
    codec = pipeline.load_codec(require(paths["codec"], "fit-basis"))
    emb = _shape_embedder(paths)
    _, _, motions, _, _ = _load_data(paths)
    cfg, _ = resolve_config(StaeConfig, args, "train-diffusion")
    if cfg.k != codec.k:
        raise ValueError(f"config k={cfg.k} but the fitted basis has k={codec.k}; rerun fit-basis with --k {cfg.k}")
    writable_dir(paths["stae"])
    tensors = [codec.to_tensor(m) for m in motions]
    codes = pipeline.motion_shape_codes(emb, motions)
    model, gen = build_model(cfg)
    sampler = BatchSampler(tensors, [m.action_id for m in motions], codes, cfg.frames, cfg.batch_size, gen)
    ctx = LossContext.build(codec.basis, codec.normalizer)
    reports = train(model, ctx, sampler, cfg.steps, gen, csv_path=paths["stae"] / "loss.csv",
                    log_every=args.log_every, log=log.info)
    pipeline.save_stae(model, paths["stae"])
    print(json.dumps({"steps": cfg.steps, "final_total": reports[-1].total if reports else None,
                      "dir": str(paths["stae"])}))


def cmd_sample(args):
    paths = _paths(args)
    require(paths["stae"] / pipeline.STAE_WEIGHTS, "train-diffusion")
    codec = pipeline.load_codec(require(paths["codec"], "fit-basis"))
    if args.action is not None and args.text is not None:
        raise ValueError("give --action or --text, not both")
    target = None
    if args.target_mesh is not None:
        target, _ = formats.read_obj(require(Path(args.target_mesh), "gen-data"))
    out = Path(args.out)
    writable_dir(out.parent)
    model = pipeline.load_stae(paths["stae"])
    z_s = None
    if target is not None:
        z_s = pipeline.target_code(_shape_embedder(paths), target)
    frames = args.frames or model.cfg.frames
    sched = cosine_schedule(model.cfg.T, model.cfg.s_offset)
    res = sample(model, Conditions(action=args.action, text=args.text, z_s=z_s), frames, sched,
                 GuidanceConfig(args.sd, args.ss), seed=pipeline.stage_seed(_seed(args), "sample"), steps=args.steps)
    action = -1 if args.action is None else args.action
    motion = codec.to_motion(res.x0, action, args.fps)
    formats.write_motion(out, motion.frames, action, args.fps)
    if args.obj_dir:
        obj_dir = writable_dir(args.obj_dir)
        faces = body.make_body_model().topology.faces
        for i, frame in enumerate(motion.frames):
            formats.write_obj(obj_dir / f"frame_{i:04d}.obj", frame, faces)
    print(json.dumps({"out": str(out), "frames": frames, "steps": res.steps, "calls": res.calls}))


def _motion_files(specs) -> list[Path]:
    files = []
    for s in specs:
        p = Path(s)
        if p.is_dir():
            files.extend(sorted(p.glob("*.smm")))
        elif p.exists():
            files.append(p)
        else:
            raise FileNotFoundError(f"{p} does not exist")
    if not files:
        raise ValueError("no .smm motions found")
    return files


def cmd_eval(args):
    paths = _paths(args)
    files = _motion_files(args.motions)
    emb = None
    if (paths["shape"] / pipeline.SHAPE_WEIGHTS).exists():
        emb = pipeline.load_shape_embedder(paths["shape"])
    elif args.target_mesh is not None:
        raise PrerequisiteError(paths["shape"] / pipeline.SHAPE_WEIGHTS, "train-shape")
    target = formats.read_obj(args.target_mesh)[0] if args.target_mesh else None
    root = RootFrame.from_model(body.make_body_model())
    rows, feats, shape_rows = [], [], []
    for f in files:
        frames, action, fps = formats.read_motion(f)
        motion = body.MotionSequence(frames, action, fps)
        row = {"name": f.name, **physics_row(motion)}
        if emb is not None:
            feats.append(motion_features(motion, emb, root))
        if target is not None:
            intra, vs = shape_consistency(motion, target, emb)
            row.update(shape_intra_mm=intra, shape_vs_target_mm=vs)
            shape_rows.append((intra, vs))
        rows.append(row)
    extra = {}
    if len(feats) >= 2:
        extra["diversity"] = diversity(feats)
    if shape_rows:
        extra["shape_intra_mm"] = float(np.mean([r[0] for r in shape_rows]))
        extra["shape_vs_target_mm"] = float(np.mean([r[1] for r in shape_rows]))
    report = aggregate(rows, **extra)
    out = Path(args.out)
    writable_dir(out.parent)
    report.to_json(out)
    if args.csv:
        write_rows_csv(args.csv, rows)
    print(json.dumps(dataclasses.asdict(report)))


# ---------------------------------------------------------------- parser

class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults except where they are None or already spelled out in the help text."""

    def _get_help_string(self, action):
        text = action.help or ""
        if action.default is None or "(default:" in text or action.default is argparse.SUPPRESS:
            return text
        return super()._get_help_string(action)


def build_parser() -> argparse.ArgumentParser:
    fmt = _HelpFormatter
    p = argparse.ArgumentParser(prog="smd", description="Shape-conditioned spectral motion diffusion.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_, formatter_class=fmt)
        sp.add_argument("--work", default="smd-work", help="working directory holding all stage outputs")
        sp.add_argument("--seed", type=int, default=None, help="run seed; per-stage seeds derive from it (default: 0)")
        sp.set_defaults(fn=fn)
        return sp

    sp = command("gen-data", cmd_gen_data, "generate the synthetic motion dataset")
    sp.add_argument("--n-motions", type=int, default=64)
    sp.add_argument("--identities", type=int, default=8)
    sp.add_argument("--frames", type=int, default=60)
    sp.add_argument("--fps", type=float, default=30.0)

    sp = command("fit-basis", cmd_fit_basis, "compute the Laplacian basis and fit the coefficient normalizer")
    sp.add_argument("--k", type=int, default=StaeConfig.k, help="retained frequencies")

    sp = command("spectrum-curve", cmd_spectrum_curve, "reconstruction error as a function of k")
    sp.add_argument("--ks", type=int, nargs="+", default=None,
                    help="k values (default: 128, 512, 1024, 2048 and all of 6890 scaled to the body's vertex count)")
    sp.add_argument("--out", default=None, help="CSV path (default: <work>/spectrum.csv)")

    sp = command("train-shape", cmd_train_shape, "train the shape embedder")
    sp.add_argument("--config", default=None, help="JSON file with ShapeConfig fields")
    sp.add_argument("--poses", type=int, default=20, help="training poses per identity")
    sp.add_argument("--log-every", type=int, default=0)
    add_config_flags(sp, ShapeConfig)

    sp = command("train-diffusion", cmd_train_diffusion, "train the STAE denoiser")
    sp.add_argument("--config", default=None, help="JSON file with StaeConfig fields")
    sp.add_argument("--log-every", type=int, default=0)
    add_config_flags(sp, StaeConfig)

    sp = command("sample", cmd_sample, "generate a motion with dual classifier-free guidance")
    sp.add_argument("--action", type=int, default=None, help=f"action id, one of {dict(enumerate(body.ACTIONS))}")
    sp.add_argument("--text", default=None, help="text prompt (alternative to --action)")
    sp.add_argument("--target-mesh", default=None, help="OBJ of the target identity, any pose")
    sp.add_argument("--frames", type=int, default=None, help="frames to generate (default: the model's F)")
    sp.add_argument("--sd", type=float, default=GuidanceConfig.s_d, help="dynamic guidance scale")
    sp.add_argument("--ss", type=float, default=GuidanceConfig.s_s, help="shape guidance scale")
    sp.add_argument("--steps", type=int, default=None, help="reverse steps (default: T)")
    sp.add_argument("--fps", type=float, default=30.0)
    sp.add_argument("--out", required=True, help="SMM1 output path")
    sp.add_argument("--obj-dir", default=None, help="also write one OBJ per frame here")

    sp = command("eval", cmd_eval, "physics, diversity and shape-consistency metrics")
    sp.add_argument("motions", nargs="+", help="SMM1 files or directories of them")
    sp.add_argument("--target-mesh", default=None, help="OBJ of the conditioning identity")
    sp.add_argument("--out", required=True, help="metric JSON path")
    sp.add_argument("--csv", default=None, help="optional per-motion CSV")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s",
                        stream=sys.stderr)
    try:
        args.fn(args)
    except PrerequisiteError as exc:
        print(f"error: missing-prerequisite: {exc}", file=sys.stderr)
        return 2
    except UntrainedModelError as exc:
        print(f"error: untrained-model: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, formats.FormatError, KeyError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
