import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smd import body, metrics
from smd.body import PoseParams, ShapeParams


def test_model_shapes(body_model):
    n = body_model.n_vertices
    assert body_model.template.shape == (n, 3)
    assert body_model.shape_basis.shape == (body.NUM_BETAS, n, 3)
    np.testing.assert_allclose(body_model.skin_weights.sum(axis=1), 1.0, atol=1e-12)
    assert (body_model.skin_weights >= 0).all()
    assert body_model.template[:, 1].min() == pytest.approx(0.0, abs=1e-9)


def test_model_is_deterministic():
    a, b = body.make_body_model(0), body.make_body_model(0)
    np.testing.assert_array_equal(a.template, b.template)
    assert a.topology.content_hash() == b.topology.content_hash()


def test_shape_params_bounds():
    with pytest.raises(ValueError):
        ShapeParams(np.full(body.NUM_BETAS, body.BETA_BOUND + 0.1))
    with pytest.raises(ValueError):
        ShapeParams(np.zeros(3))


def test_zero_pose_is_identity(body_model, rng):
    t_pose = body.apply_shape(body_model, body.sample_shape(rng))
    np.testing.assert_allclose(body.pose_mesh(body_model, t_pose, PoseParams.zero()), t_pose, atol=1e-12)


@given(st.integers(0, 10_000))
def test_unpose_inverts_pose(body_model, seed):
    rng = np.random.default_rng(seed)
    t_pose = body.apply_shape(body_model, body.sample_shape(rng))
    pose = PoseParams(rng.uniform(-0.6, 0.6, (body.J, 3)), rng.standard_normal(3), float(rng.uniform(-3, 3)))
    posed = body.pose_mesh(body_model, t_pose, pose)
    back = body.unpose_mesh(body_model, posed, t_pose, pose)
    np.testing.assert_allclose(back, t_pose, atol=1e-9)


def test_single_joint_rotation_is_rigid_far_from_joint(body_model):
    # a pure rotation of the head leaves distances within the head rigid
    t_pose = body_model.template
    rots = np.zeros((body.J, 3))
    rots[body.HEAD] = [0.0, 0.8, 0.0]
    posed = body.pose_mesh(body_model, t_pose, PoseParams(rots, np.zeros(3), 0.0))
    w = body_model.skin_weights[:, body.HEAD]
    rigid = np.flatnonzero(w > 1 - 1e-12)
    d0 = np.linalg.norm(t_pose[rigid[:, None]] - t_pose[rigid[None]], axis=-1)
    d1 = np.linalg.norm(posed[rigid[:, None]] - posed[rigid[None]], axis=-1)
    np.testing.assert_allclose(d1, d0, atol=1e-12)
    moved = np.linalg.norm(posed[rigid] - t_pose[rigid], axis=1)
    assert moved.max() > 0.01


@pytest.mark.parametrize("action", range(body.NUM_ACTIONS))
def test_synth_motion_contract(body_model, action):
    shape = body.identity_shapes(1, 3)[0]
    m = body.synth_motion(body_model, shape, action, F=40, fps=30.0, seed=5)
    assert m.frames.shape == (40, body_model.n_vertices, 3)
    assert metrics.penetrate(m) < 1.0
    if body.ACTIONS[action] != "jump":
        assert metrics.float_metric(m) < 6.0
        assert metrics.skate(m) < 1.0


def test_synth_motion_is_seed_deterministic(body_model):
    s = body.identity_shapes(1, 0)[0]
    a = body.synth_motion(body_model, s, 0, F=20, seed=3)
    b = body.synth_motion(body_model, s, 0, F=20, seed=3)
    c = body.synth_motion(body_model, s, 0, F=20, seed=4)
    np.testing.assert_array_equal(a.frames, b.frames)
    assert not np.allclose(a.frames, c.frames)


def test_walk_travels_and_idle_stays(body_model):
    s = body.identity_shapes(1, 0)[0]
    from smd.motion import RootFrame
    root = RootFrame.from_model(body_model)
    walk = root.root_position(body.synth_motion(body_model, s, body.ACTIONS.index("walk"), F=60).frames)
    idle = root.root_position(body.synth_motion(body_model, s, body.ACTIONS.index("idle-sway"), F=60).frames)
    assert np.linalg.norm((walk[-1] - walk[0])[[0, 2]]) > 0.5
    assert np.linalg.norm((idle[-1] - idle[0])[[0, 2]]) < 0.05


def test_synth_motion_rejects_bad_action(body_model):
    with pytest.raises(ValueError):
        body.synth_motion(body_model, ShapeParams.zeros(), body.NUM_ACTIONS)


def test_dataset_roundtrip(tmp_path, body_model):
    rows = body.make_dataset(6, 3, 8, seed=2, out_dir=tmp_path, model=body_model)
    rows2, motions, shapes = body.load_dataset(tmp_path)
    assert rows == rows2
    assert len(motions) == 6 and len(shapes) == 3
    assert {r["identity_id"] for r in rows} == {0, 1, 2}
    meta = json.loads((tmp_path / "identities.json").read_text())
    assert meta["seed"] == 2
    again = body.make_dataset(6, 3, 8, seed=2, out_dir=tmp_path / "b", model=body_model)
    assert body.manifest_hash(again) == body.manifest_hash(rows)
    assert (tmp_path / rows[0]["path"]).read_bytes() == (tmp_path / "b" / rows[0]["path"]).read_bytes()


def test_dataset_rejects_too_few_motions(tmp_path):
    with pytest.raises(ValueError):
        body.make_dataset(2, 3, 8, seed=0, out_dir=tmp_path)


def test_pose_pool_shape(body_model):
    shapes = body.identity_shapes(2, 0)
    pool = body.pose_pool(body_model, shapes, 3, seed=1, F=6)
    assert pool.shape == (2, 3, body_model.n_vertices, 3)
