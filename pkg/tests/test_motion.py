import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smd import body, motion
from smd.motion import COEFF_START, P_ROW, R_ROW, MotionCodec, RootFrame


@pytest.fixture(scope="module")
def walk(body_model):
    return body.synth_motion(body_model, body.identity_shapes(1, 1)[0], 0, F=24, seed=2, initial_yaw=0.7)


@pytest.fixture(scope="module")
def root(body_model):
    return RootFrame.from_model(body_model)


def test_root_weights_normalized(root):
    assert root.root_weights.sum() == pytest.approx(1.0)
    assert len(root.left_idx) and len(root.right_idx)


def test_facing_yaw_recovers_generator_yaw(root, walk):
    yaw = root.facing_yaw(walk.frames)
    d = np.angle(np.exp(1j * (yaw - walk.root_yaw)))
    # the pelvis ring also follows pelvis joint rotation, so allow a few degrees
    assert np.abs(d).max() < 0.15


@given(st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi))
def test_yaw_matrix_composes(a, b):
    np.testing.assert_allclose(motion.yaw_matrix(a) @ motion.yaw_matrix(b), motion.yaw_matrix(a + b), atol=1e-12)


def test_yaw_matrix_turns_z_toward_x():
    np.testing.assert_allclose(motion.yaw_matrix(np.pi / 2) @ [0, 0, 1], [1, 0, 0], atol=1e-12)


def test_canonicalize_roundtrip(root, walk):
    centered, P, R = motion.canonicalize(walk.frames, root)
    np.testing.assert_allclose(motion.uncanonicalize(centered, P, R), walk.frames, atol=1e-12)
    np.testing.assert_allclose(root.root_position(centered), 0.0, atol=1e-12)
    np.testing.assert_allclose(root.facing_yaw(centered), 0.0, atol=1e-9)


def test_codec_exact_at_full_rank(body_model, full_basis, walk):
    codec = MotionCodec.fit(body_model, full_basis, [walk])
    x = codec.to_tensor(walk)
    assert x.shape == (24, full_basis.k + 2, 3)
    np.testing.assert_allclose(codec.to_motion(x).frames, walk.frames, atol=1e-10)


def test_codec_truncation_error_bounded(body_model, full_basis, walk):
    codec = MotionCodec.fit(body_model, full_basis.truncate(83), [walk])
    err = np.linalg.norm(codec.to_motion(codec.to_tensor(walk)).frames - walk.frames, axis=-1)
    assert err.mean() < 0.02


def test_normalized_coefficients_are_standardized(body_model, full_basis, walk):
    codec = MotionCodec.fit(body_model, full_basis.truncate(20), [walk])
    c = codec.to_tensor(walk)[:, COEFF_START:]
    np.testing.assert_allclose(c.mean(0), 0.0, atol=1e-6)  # near-constant rows have tiny std
    live = codec.normalizer.per_coeff_variance > 1e-8
    assert live.sum() > 30
    np.testing.assert_allclose(c.std(0)[live], 1.0, atol=1e-6)


def test_pack_unpack_roundtrip(rng):
    cm = motion.CanonicalMotion(rng.standard_normal((5, 7, 3)), rng.standard_normal((5, 3)), rng.standard_normal((5, 3)))
    back = motion.unpack(motion.pack(cm))
    np.testing.assert_array_equal(back.coeffs, cm.coeffs)
    np.testing.assert_array_equal(back.root_pos, cm.root_pos)


def test_unpack_rejects_bad_shape():
    with pytest.raises(ValueError):
        motion.unpack(np.zeros((4, 2, 3)))


def test_encode_rejects_mismatched_normalizer(full_basis, body_model, walk):
    codec = MotionCodec.fit(body_model, full_basis.truncate(10), [walk])
    with pytest.raises(ValueError):
        motion.encode(*motion.canonicalize(walk.frames, codec.root), full_basis.truncate(11), codec.normalizer)


def test_align_window_anchors_first_frame(body_model, full_basis, walk):
    codec = MotionCodec.fit(body_model, full_basis.truncate(10), [walk])
    x = codec.to_tensor(walk)
    a = motion.align_window(x)
    np.testing.assert_allclose(a[0, P_ROW, [0, 2]], 0.0, atol=1e-12)
    assert a[0, R_ROW, 1] == pytest.approx(0.0)
    np.testing.assert_array_equal(a[:, COEFF_START:], x[:, COEFF_START:])
    np.testing.assert_allclose(a[:, P_ROW, 1], x[:, P_ROW, 1])
    # the aligned motion is the original one moved rigidly about the vertical axis
    w0 = codec.to_motion(x).frames
    w1 = codec.to_motion(a).frames
    d0 = np.linalg.norm(w0[:, None, :5] - w0[:, :5, None], axis=-1)
    d1 = np.linalg.norm(w1[:, None, :5] - w1[:, :5, None], axis=-1)
    np.testing.assert_allclose(d1, d0, atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(np.diff(w1, axis=0), axis=-1),
                               np.linalg.norm(np.diff(w0, axis=0), axis=-1), atol=1e-9)
