import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatgait.augment import AugmentConfig, augment_pipeline, jitter, mirror, reverse_time
from heatgait.data import PoseSequence
from heatgait.graph import COCO_LEFT_RIGHT


def seq(n=5, seed=0, center=None):
    rng = np.random.default_rng(seed)
    f = np.empty((n, 17, 3))
    f[..., :2] = rng.normal(0, 1, size=(n, 17, 2))
    if center is not None:
        f[..., 0] -= f[..., 0].mean() - center
    f[..., 2] = rng.uniform(0, 1, size=(n, 17))
    return PoseSequence(f, "s1", "CL", 2, 144)


def test_reverse_examples():
    one = seq(n=1)
    assert reverse_time(one) == one
    s = seq(n=3)
    r = reverse_time(s)
    assert np.array_equal(r.frames, s.frames[[2, 1, 0]])
    assert r.metadata() == s.metadata()


@given(st.integers(0, 10_000), st.integers(1, 30))
@settings(max_examples=50, deadline=None)
def test_reverse_involution(seed, n):
    s = seq(n=n, seed=seed)
    assert reverse_time(reverse_time(s)) == s


def test_mirror_reflection_arithmetic():
    f = np.zeros((1, 17, 3))
    f[0, :, 0] = 10.0
    f[0, 0, 0] = 10.0 + 3 * 17 / 16  # x̄ = 10 + 3/16 ... set so joint 0 sits at x̄ + 3
    s = PoseSequence(f, "s1")
    x_bar = f[..., 0].mean()
    out = mirror(s, swap_lr=False)
    assert out.frames[0, 0, 0] == pytest.approx(x_bar - (f[0, 0, 0] - x_bar), abs=1e-12)
    assert np.array_equal(out.frames[..., 1:], s.frames[..., 1:])


def test_mirror_symmetric_pose_fixpoint():
    f = np.zeros((2, 17, 3))
    f[..., 1] = np.arange(17)
    f[..., 2] = 0.8
    for left, right in COCO_LEFT_RIGHT:
        f[:, left, 0] = 1.5 + left
        f[:, right, 0] = -(1.5 + left)
    s = PoseSequence(f, "s1")
    f[:, :, 1] = 0.0  # y equal within each L/R pair so the swap leaves it intact
    s = PoseSequence(f, "s1")
    assert mirror(s, swap_lr=True) == s


def test_mirror_involution_exact_on_centred_data():
    s = seq(n=6, seed=3, center=0.0)
    assert s.frames[..., 0].mean() == 0.0 or abs(s.frames[..., 0].mean()) < 1e-15
    s0 = s.with_frames(s.frames.copy())
    s0.frames[..., 0] -= s0.frames[..., 0].mean()
    for swap in (False, True):
        twice = mirror(mirror(s0, swap), swap)
        np.testing.assert_array_equal(twice.frames[..., 1:], s0.frames[..., 1:])
        np.testing.assert_allclose(twice.frames, s0.frames, rtol=0, atol=1e-15)


@given(st.integers(0, 10_000), st.floats(-500, 500), st.booleans())
@settings(max_examples=50, deadline=None)
def test_mirror_involution_general(seed, offset, swap):
    s = seq(seed=seed)
    s = s.with_frames(s.frames + np.array([offset, 0.0, 0.0]))
    twice = mirror(mirror(s, swap), swap)
    np.testing.assert_array_equal(twice.frames[..., 1:], s.frames[..., 1:])
    np.testing.assert_allclose(twice.frames[..., 0], s.frames[..., 0], rtol=0, atol=1e-12)


def test_jitter_identity_and_determinism():
    s = seq()
    assert jitter(s, 0.0, np.random.default_rng(0)) == s
    a = jitter(s, 0.05, np.random.default_rng(42))
    b = jitter(s, 0.05, np.random.default_rng(42))
    assert a == b
    assert np.array_equal(a.confidence, s.confidence)
    with pytest.raises(ValueError):
        jitter(s, -1.0, np.random.default_rng(0))


def test_jitter_sample_std():
    f = np.zeros((100_000 // 34 + 1, 17, 3))
    s = PoseSequence(f, "s1")
    out = jitter(s, 0.01, np.random.default_rng(5))
    d = out.xy.ravel()
    assert d.size >= 100_000
    assert abs(d.std() / 0.01 - 1) < 0.05


def test_pipeline_identity_when_disabled():
    s = seq()
    cfg = AugmentConfig(enable_reverse=False, enable_mirror=False, noise_sigma=0.0)
    assert augment_pipeline(s, cfg, np.random.default_rng(0)) == s


def test_pipeline_reproducible_and_shape_preserving():
    s = seq(n=9)
    cfg = AugmentConfig()
    a = augment_pipeline(s, cfg, np.random.default_rng(3))
    b = augment_pipeline(s, cfg, np.random.default_rng(3))
    assert a == b
    assert a.frames.shape == s.frames.shape and a.metadata() == s.metadata()


def test_pipeline_reverse_rate():
    s = seq(n=4)
    cfg = AugmentConfig(enable_mirror=False, noise_sigma=0.0)
    rng = np.random.default_rng(11)
    hits = sum(augment_pipeline(s, cfg, rng) != s for _ in range(10_000))
    assert abs(hits / 10_000 - 0.5) < 0.02
