"""Graph Laplacian of a fixed mesh topology and truncated graph Fourier transforms."""
from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from . import formats

log = logging.getLogger(__name__)

DENSE_LIMIT = 2000
STD_FLOOR = 1e-8


class TopologyError(ValueError):
    pass


class EigenSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class MeshTopology:
    vertex_count: int
    faces: np.ndarray  # (M, 3) int

    def __post_init__(self):
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "faces", faces)
        if self.vertex_count < 1:
            raise TopologyError("vertex_count must be positive")
        if faces.size and (faces.min() < 0 or faces.max() >= self.vertex_count):
            raise TopologyError("face index out of range")
        if faces.size and np.any(
            (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])
        ):
            raise TopologyError("degenerate face with a repeated vertex index")

    def edges(self) -> np.ndarray:
        """Undirected unique edges (i < j) induced by the faces."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64(self.vertex_count).tobytes())
        h.update(np.ascontiguousarray(self.faces, dtype="<i8").tobytes())
        return h.hexdigest()


def laplacian_from_edges(n: int, edges) -> sp.csr_matrix:
    """L = D - A for an undirected edge list; duplicate edges count once."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise TopologyError("edge index out of range")
    if np.any(edges[:, 0] == edges[:, 1]):
        raise TopologyError("self-loop edge")
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    ncomp, _ = connected_components(adj, directed=False)
    if ncomp != 1:
        raise TopologyError(f"mesh graph is disconnected ({ncomp} components)")
    deg = np.asarray(adj.sum(axis=1)).ravel()
    return (sp.diags(deg) - adj).tocsr()


def build_laplacian(topology: MeshTopology) -> sp.csr_matrix:
    return laplacian_from_edges(topology.vertex_count, topology.edges())


@dataclass(frozen=True)
class SpectralBasis:
    eigenvalues: np.ndarray   # (k,) ascending
    eigenvectors: np.ndarray  # (N, k) orthonormal columns

    @property
    def k(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def n(self) -> int:
        return self.eigenvectors.shape[0]

    def truncate(self, k: int) -> "SpectralBasis":
        if not 1 <= k <= self.k:
            raise ValueError(f"cannot truncate a {self.k}-vector basis to {k}")
        return SpectralBasis(self.eigenvalues[:k].copy(), self.eigenvectors[:, :k].copy())


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    # largest-magnitude component positive; ties resolved by the first index
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def eigendecompose(L, k: int, tol: float = 1e-10, max_iter: int | None = None) -> SpectralBasis:
    """The k smallest eigenpairs of a symmetric Laplacian, ascending."""
    n = L.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if n <= DENSE_LIMIT or k >= n - 1:
        dense = L.toarray() if sp.issparse(L) else np.asarray(L, dtype=np.float64)
        vals, vecs = np.linalg.eigh(dense)
        vals, vecs = vals[:k], vecs[:, :k]
    else:
        max_iter = max_iter or 10 * n
        try:
            # shift-invert just below zero: L itself is singular
            vals, vecs = eigsh(sp.csc_matrix(L, dtype=np.float64), k=k, sigma=-1e-3, which="LM",
                               tol=tol, maxiter=max_iter)
        except ArpackNoConvergence as exc:
            got = exc.eigenvectors
            res = np.linalg.norm(L @ got - got * exc.eigenvalues, axis=0) if got.size else np.array([np.inf])
            raise EigenSolverError(
                f"eigensolver did not converge after {max_iter} iterations; "
                f"{len(exc.eigenvalues)}/{k} pairs, max residual {res.max():.3e}"
            ) from exc
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
    vals = np.where(np.abs(vals) < 1e-12, 0.0, vals)
    vecs = _fix_signs(vecs)
    res = np.linalg.norm(L @ vecs - vecs * vals, axis=0) / np.maximum(np.abs(vals), 1.0)
    if res.max() > 1e-6:
        raise EigenSolverError(f"eigenpair residual {res.max():.3e} exceeds 1e-6")
    return SpectralBasis(vals, vecs)


def gft(vertices, basis: SpectralBasis) -> np.ndarray:
    """Per-channel spectral coefficients ``U^T v``; works on a single N x 3 mesh or a stack ... x N x 3."""
    v = np.asarray(vertices, dtype=np.float64)
    if v.shape[-2] != basis.n:
        raise ValueError(f"mesh has {v.shape[-2]} vertices, basis expects {basis.n}")
    return np.einsum("nk,...nc->...kc", basis.eigenvectors, v)


def igft(coeffs, basis: SpectralBasis) -> np.ndarray:
    c = np.asarray(coeffs, dtype=np.float64)
    k = c.shape[-2]
    if k > basis.k:
        raise ValueError(f"{k} coefficient rows but basis has only {basis.k} vectors")
    return np.einsum("nk,...kc->...nc", basis.eigenvectors[:, :k], c)


def project(vertices, basis: SpectralBasis, k: int) -> np.ndarray:
    b = basis.truncate(k)
    return igft(gft(vertices, b), b)


def reconstruction_curve(meshes, ks, basis_full: SpectralBasis):
    """Rows of (k, mean vertex error mm, max vertex error mm) over all meshes."""
    meshes = [np.asarray(m, dtype=np.float64) for m in meshes]
    if not meshes:
        raise ValueError("reconstruction_curve needs at least one mesh")
    ks = [int(k) for k in ks]
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError("ks must be strictly ascending")
    if ks[-1] > basis_full.k:
        raise ValueError(f"k={ks[-1]} exceeds basis size {basis_full.k}")
    stack = np.stack(meshes)
    coeffs = gft(stack, basis_full)
    rows = []
    for k in ks:
        rec = np.einsum("nk,mkc->mnc", basis_full.eigenvectors[:, :k], coeffs[:, :k])
        err = np.linalg.norm(rec - stack, axis=-1) * 1000.0
        rows.append((k, float(err.mean()), float(err.max())))
    return rows


@dataclass
class Normalizer:
    mean: np.ndarray  # (k, 3)
    std: np.ndarray
    per_coeff_variance: np.ndarray

    def normalize(self, coeffs):
        return (np.asarray(coeffs) - self.mean) / self.std

    def denormalize(self, coeffs):
        return np.asarray(coeffs) * self.std + self.mean

    @property
    def k(self) -> int:
        return self.mean.shape[0]


def fit_normalizer(coeff_frames) -> Normalizer:
    """Elementwise statistics over every frame yielded by ``coeff_frames``.

    Accepts any iterable of k x 3 frames or F x k x 3 blocks; accumulated in one
    pass (Chan's parallel update) so a dataset never needs to fit in memory.
    """
    count, mean, m2 = 0, None, None
    for block in coeff_frames:
        block = np.asarray(block, dtype=np.float64)
        if block.ndim == 2:
            block = block[None]
        n_b = block.shape[0]
        if n_b == 0:
            continue
        mean_b = block.mean(axis=0)
        m2_b = ((block - mean_b) ** 2).sum(axis=0)
        if mean is None:
            count, mean, m2 = n_b, mean_b, m2_b
            continue
        delta = mean_b - mean
        total = count + n_b
        mean = mean + delta * n_b / total
        m2 = m2 + m2_b + delta ** 2 * count * n_b / total
        count = total
    if mean is None:
        raise ValueError("fit_normalizer got an empty stream")
    if count < 2:
        raise ValueError("fit_normalizer needs at least 2 frames")
    var = m2 / count
    return Normalizer(mean=mean, std=np.maximum(np.sqrt(var), STD_FLOOR), per_coeff_variance=var)


# ---------------------------------------------------------------- caching

def cache_dir() -> Path:
    return Path(os.environ.get("SMD_CACHE_DIR", Path.home() / ".cache" / "smd"))


def cached_basis(topology: MeshTopology, k: int, directory=None) -> SpectralBasis:
    """Load the basis for ``topology`` from the cache, recomputing on a miss or a stale entry."""
    directory = Path(directory) if directory is not None else cache_dir()
    path = directory / f"basis-{topology.content_hash()[:16]}-k{k}.smdb"
    if path.exists():
        try:
            vals, vecs = formats.decode_basis(path.read_bytes())
            if vecs.shape == (topology.vertex_count, k):
                return SpectralBasis(vals, vecs)
            log.info("basis cache %s has wrong shape, recomputing", path)
        except formats.FormatError as exc:
            log.info("basis cache %s unreadable (%s), recomputing", path, exc)
    basis = eigendecompose(build_laplacian(topology), k)
    formats.atomic_write_bytes(path, formats.encode_basis(basis.eigenvalues, basis.eigenvectors))
    return basis
