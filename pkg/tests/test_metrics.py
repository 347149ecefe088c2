import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smd import metrics


def flat(heights, f=3):
    """F x N x 3 frames whose vertices sit at the given heights, static in x/z."""
    h = np.asarray(heights, dtype=float)
    fr = np.zeros((f, len(h), 3))
    fr[..., 0] = np.arange(len(h))
    fr[..., 1] = h
    return fr


def test_penetrate_hand_values():
    fr = flat([-0.002, -0.004, 0.1])
    assert metrics.penetrate(fr) == pytest.approx(3.0)
    assert metrics.penetrate(flat([0.0, 0.1])) == 0.0


def test_float_hand_values():
    assert metrics.float_metric(flat([0.01, 0.3])) == pytest.approx(10.0)
    assert metrics.float_metric(flat([-0.01, 0.3])) == 0.0


def test_skate_hand_values():
    fr = flat([0.0, 0.5], f=2)
    fr[1, 0, 0] += 0.003
    fr[1, 1, 2] += 1.0  # airborne vertex does not count
    assert metrics.skate(fr) == pytest.approx(3.0)
    assert metrics.skate(flat([0.2, 0.3])) == 0.0


@given(st.floats(0.0, 0.05))
def test_sinking_raises_penetration_monotonically(depth):
    base = flat([0.0, 0.0, 0.2])
    assert metrics.penetrate(base - [0, depth, 0]) >= metrics.penetrate(base) - 1e-12
    assert metrics.penetrate(base - [0, depth, 0]) == pytest.approx(depth * 1000 if depth > 0 else 0.0)


def test_rejects_bad_shape():
    with pytest.raises(ValueError):
        metrics.penetrate(np.zeros((3, 4)))


def test_diversity_hand_value():
    assert metrics.diversity([[0, 0], [3, 4]]) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        metrics.diversity([[1, 2]])


def test_aggregate_and_csv(tmp_path):
    rows = [{"name": "a", **metrics.physics_row(flat([0.0, 0.1]))},
            {"name": "b", **metrics.physics_row(flat([-0.01, 0.1]))}]
    rep = metrics.aggregate(rows, diversity=1.5)
    assert rep.penetrate_mm == pytest.approx(5.0)
    assert rep.penetrate_std == pytest.approx(5.0)
    rep.to_json(tmp_path / "m.json")
    metrics.write_rows_csv(tmp_path / "m.csv", rows)
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "name,penetrate_mm,float_mm,skate_mm"
    with pytest.raises(ValueError):
        metrics.aggregate([])


def test_shape_consistency_requires_trained_embedder():
    class Untrained:
        is_trained = False

    with pytest.raises(ValueError):
        metrics.shape_consistency(flat([0.0, 1.0]), flat([0.0, 1.0])[0], Untrained())
