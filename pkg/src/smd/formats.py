"""On-disk formats: OBJ meshes, the SMDB basis cache, SMM1 motions, SMDW checkpoints.

All binary formats are little-endian. Writers go through a temp file and
``os.replace`` so readers never observe a partial file.
"""
from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

BASIS_MAGIC = b"SMDB"
BASIS_VERSION = 1
MOTION_MAGIC = b"SMM1"
WEIGHTS_MAGIC = b"SMDW"
WEIGHTS_VERSION = 1


class FormatError(ValueError):
    pass


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------- OBJ

def write_obj(path, vertices, faces) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in np.asarray(vertices, dtype=np.float64)]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(faces, dtype=np.int64)]
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("ascii"))


def read_obj(path):
    """Read ``v``/``f`` records. Polygon faces are fan-triangulated; ``i/j/k`` refs keep the vertex index."""
    verts, faces = [], []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise FormatError(f"{path}:{lineno}: vertex needs 3 coordinates")
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                if len(idx) < 3:
                    raise FormatError(f"{path}:{lineno}: face needs >= 3 vertices")
                for i in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[i], idx[i + 1]])
    return np.asarray(verts, dtype=np.float64).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3)


# -------------------------------------------------------------------- SMDB

def encode_basis(eigenvalues, eigenvectors) -> bytes:
    eigenvalues = np.asarray(eigenvalues, dtype="<f8")
    eigenvectors = np.asarray(eigenvectors, dtype="<f8")
    n, k = eigenvectors.shape
    if eigenvalues.shape != (k,):
        raise FormatError("eigenvalue count does not match eigenvector columns")
    header = BASIS_MAGIC + struct.pack("<HII", BASIS_VERSION, n, k)
    # column-major: each eigenvector contiguous
    return header + eigenvalues.tobytes() + np.asfortranarray(eigenvectors).tobytes(order="F")


def decode_basis(payload: bytes):
    if payload[:4] != BASIS_MAGIC:
        raise FormatError("not an SMDB basis file")
    version, n, k = struct.unpack_from("<HII", payload, 4)
    if version != BASIS_VERSION:
        raise FormatError(f"unsupported SMDB version {version}")
    off = 4 + struct.calcsize("<HII")
    expected = off + 8 * k + 8 * n * k
    if len(payload) != expected:
        raise FormatError(f"SMDB size {len(payload)} != expected {expected}")
    vals = np.frombuffer(payload, dtype="<f8", count=k, offset=off).astype(np.float64)
    vecs = np.frombuffer(payload, dtype="<f8", count=n * k, offset=off + 8 * k)
    vecs = vecs.reshape((n, k), order="F").astype(np.float64)
    return vals, vecs


# -------------------------------------------------------------------- SMM1

def encode_motion(frames, action_id: int, fps: float) -> bytes:
    frames = np.asarray(frames, dtype="<f4")
    if frames.ndim != 3 or frames.shape[2] != 3:
        raise FormatError(f"motion frames must be F x N x 3, got {frames.shape}")
    f, n, _ = frames.shape
    # -1 (no action class, e.g. a text-conditioned sample) is stored as 0xFFFFFFFF
    return MOTION_MAGIC + struct.pack("<IIIf", f, n, int(action_id) & 0xFFFFFFFF, float(fps)) + frames.tobytes(order="C")


def decode_motion(payload: bytes):
    if payload[:4] != MOTION_MAGIC:
        raise FormatError("not an SMM1 motion file")
    f, n, action_id, fps = struct.unpack_from("<IIIf", payload, 4)
    off = 4 + struct.calcsize("<IIIf")
    if len(payload) != off + 12 * f * n:
        raise FormatError("SMM1 payload size mismatch")
    frames = np.frombuffer(payload, dtype="<f4", count=f * n * 3, offset=off).reshape(f, n, 3)
    if action_id == 0xFFFFFFFF:
        action_id = -1
    return frames.astype(np.float64), action_id, float(fps)


def write_motion(path, frames, action_id: int, fps: float) -> None:
    atomic_write_bytes(path, encode_motion(frames, action_id, fps))


def read_motion(path):
    return decode_motion(Path(path).read_bytes())


# -------------------------------------------------------------------- SMDW

def encode_weights(tensors: dict) -> bytes:
    """Records are ``u16 name_len, name, u8 ndim, u32 dims..., f32 data``, sorted by name."""
    out = [WEIGHTS_MAGIC, struct.pack("<HI", WEIGHTS_VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.array(tensors[name], dtype="<f4", order="C")  # ascontiguousarray would promote 0-d to 1-d
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def decode_weights(payload: bytes) -> dict:
    if payload[:4] != WEIGHTS_MAGIC:
        raise FormatError("not an SMDW checkpoint")
    version, count = struct.unpack_from("<HI", payload, 4)
    if version != WEIGHTS_VERSION:
        raise FormatError(f"unsupported SMDW version {version}")
    off = 4 + struct.calcsize("<HI")
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", payload, off)
        off += 2
        name = payload[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", payload, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", payload, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(payload, dtype="<f4", count=size, offset=off).reshape(shape).copy()
        off += 4 * size
    if off != len(payload):
        raise FormatError("trailing bytes in SMDW checkpoint")
    return tensors
