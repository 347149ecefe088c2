import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from smd import formats, spectral
from smd.spectral import MeshTopology, TopologyError


def path_graph(n):
    return spectral.laplacian_from_edges(n, [(i, i + 1) for i in range(n - 1)])


def test_path3_eigenvalues_hand_derived():
    # L = [[1,-1,0],[-1,2,-1],[0,-1,1]]: characteristic polynomial -x(x-1)(x-3)
    basis = spectral.eigendecompose(path_graph(3), 3)
    np.testing.assert_allclose(basis.eigenvalues, [0.0, 1.0, 3.0], atol=1e-10)


@given(st.integers(2, 40))
def test_path_graph_spectrum_matches_closed_form(n):
    vals = spectral.eigendecompose(path_graph(n), n).eigenvalues
    expected = 2.0 - 2.0 * np.cos(np.pi * np.arange(n) / n)
    np.testing.assert_allclose(vals, np.sort(expected), atol=1e-9)


def test_cycle_graph_spectrum():
    n = 12
    L = spectral.laplacian_from_edges(n, [(i, (i + 1) % n) for i in range(n)])
    vals = spectral.eigendecompose(L, n).eigenvalues
    expected = np.sort(2.0 - 2.0 * np.cos(2 * np.pi * np.arange(n) / n))
    np.testing.assert_allclose(vals, expected, atol=1e-9)


def test_laplacian_properties(body_model):
    L = spectral.build_laplacian(body_model.topology)
    assert abs(L - L.T).max() == 0
    np.testing.assert_allclose(np.asarray(L.sum(axis=1)).ravel(), 0.0, atol=1e-12)
    assert (L.diagonal() > 0).all()


def test_duplicate_edges_count_once():
    a = spectral.laplacian_from_edges(3, [(0, 1), (1, 0), (1, 2), (1, 2)])
    np.testing.assert_array_equal(a.toarray(), path_graph(3).toarray())


@pytest.mark.parametrize("edges", [[(0, 0), (0, 1)], [(0, 5)], [(0, 1)]])
def test_bad_graphs_raise(edges):
    with pytest.raises(TopologyError):
        spectral.laplacian_from_edges(3, edges)


def test_topology_validation():
    with pytest.raises(TopologyError):
        MeshTopology(3, [[0, 1, 1]])
    with pytest.raises(TopologyError):
        MeshTopology(3, [[0, 1, 3]])


def test_basis_is_orthonormal_and_sorted(full_basis):
    u = full_basis.eigenvectors
    np.testing.assert_allclose(u.T @ u, np.eye(u.shape[1]), atol=1e-9)
    assert np.all(np.diff(full_basis.eigenvalues) >= -1e-12)
    assert full_basis.eigenvalues[0] == 0.0


def test_sign_convention(full_basis):
    u = full_basis.eigenvectors[:, :30]
    idx = np.argmax(np.abs(u), axis=0)
    assert np.all(u[idx, np.arange(u.shape[1])] > 0)


def test_sparse_path_agrees_with_dense():
    # a 2-D grid large enough to take the shift-invert branch
    side = 46
    idx = np.arange(side * side).reshape(side, side)
    edges = np.concatenate([np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], 1),
                            np.stack([idx[:-1].ravel(), idx[1:].ravel()], 1)])
    L = spectral.laplacian_from_edges(side * side, edges)
    assert L.shape[0] > spectral.DENSE_LIMIT
    sparse = spectral.eigendecompose(L, 8)
    ref = np.linalg.eigvalsh(L.toarray())[:8]
    np.testing.assert_allclose(sparse.eigenvalues, ref, atol=1e-8)
    res = np.linalg.norm(L @ sparse.eigenvectors - sparse.eigenvectors * sparse.eigenvalues, axis=0)
    assert res.max() < 1e-6


@given(st.integers(1, 556))
def test_truncated_projection_is_idempotent(full_basis, k):
    rng = np.random.default_rng(k)
    v = rng.standard_normal((full_basis.n, 3))
    once = spectral.project(v, full_basis, k)
    np.testing.assert_allclose(spectral.project(once, full_basis, k), once, atol=1e-10)


def test_gft_batched_matches_single(full_basis, rng):
    v = rng.standard_normal((2, 4, full_basis.n, 3))
    batched = spectral.gft(v, full_basis)
    np.testing.assert_allclose(batched[1, 2], spectral.gft(v[1, 2], full_basis), atol=1e-12)


def test_gft_rejects_wrong_vertex_count(full_basis):
    with pytest.raises(ValueError):
        spectral.gft(np.zeros((5, 3)), full_basis)


def test_reconstruction_curve_requires_ascending(full_basis, body_model):
    with pytest.raises(ValueError):
        spectral.reconstruction_curve([body_model.template], [10, 5], full_basis)


def test_normalizer_streaming_matches_batch(rng):
    data = rng.standard_normal((37, 6, 3)) * 3 + 1
    chunks = [data[:5], data[5:6], data[6:30], data[30:]]
    norm = spectral.fit_normalizer(chunks)
    np.testing.assert_allclose(norm.mean, data.mean(0), atol=1e-12)
    np.testing.assert_allclose(norm.per_coeff_variance, data.var(0), atol=1e-12)
    np.testing.assert_allclose(norm.denormalize(norm.normalize(data)), data, atol=1e-12)


def test_normalizer_floors_constant_coefficients():
    data = np.ones((4, 2, 3))
    norm = spectral.fit_normalizer([data])
    assert np.all(norm.std == spectral.STD_FLOOR)
    assert np.all(np.isfinite(norm.normalize(data)))


def test_normalizer_rejects_empty_stream():
    with pytest.raises(ValueError):
        spectral.fit_normalizer([])


def test_basis_cache_roundtrip_and_recovery(body_model, tmp_path):
    b1 = spectral.cached_basis(body_model.topology, 12, tmp_path)
    files = list(tmp_path.glob("*.smdb"))
    assert len(files) == 1
    b2 = spectral.cached_basis(body_model.topology, 12, tmp_path)
    np.testing.assert_array_equal(b1.eigenvectors, b2.eigenvectors)
    files[0].write_bytes(b"garbage")
    b3 = spectral.cached_basis(body_model.topology, 12, tmp_path)
    np.testing.assert_allclose(b3.eigenvectors, b1.eigenvectors)
    vals, _ = formats.decode_basis(files[0].read_bytes())
    assert len(vals) == 12


def test_sparse_input_accepted_by_dense_branch():
    L = sp.csr_matrix(path_graph(4))
    assert spectral.eigendecompose(L, 2).k == 2
