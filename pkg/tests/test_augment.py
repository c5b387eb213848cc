import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xit.augment import AugmentConfig, strong_augment, weak_augment

series = st.lists(st.floats(-100, 100), min_size=1, max_size=40).map(np.array)


def test_weak_zero_sigma_identity():
    x = np.array([1.0, -2.0, 3.5])
    out = weak_augment(x, AugmentConfig(weak_scale_sigma=0.0), np.random.default_rng(0))
    np.testing.assert_array_equal(out, x)


def test_weak_zero_series():
    out = weak_augment(np.zeros(7), AugmentConfig(), np.random.default_rng(0))
    assert np.all(out == 0.0)


def test_weak_scale_mean():
    x = np.ones((100_000, 1))
    s = weak_augment(x, AugmentConfig(weak_scale_sigma=0.1), np.random.default_rng(1))[:, 0]
    assert abs(s.mean() - 1.0) <= 0.002
    assert s.std() == pytest.approx(0.1, rel=0.02)


def test_weak_one_scale_per_series():
    x = np.arange(1, 11, dtype=float)
    out = weak_augment(x, AugmentConfig(), np.random.default_rng(2))
    ratio = out / x
    np.testing.assert_allclose(ratio, ratio[0])


@given(series, st.floats(0.01, 100), st.integers(0, 2**32 - 1))
def test_weak_commutes_with_scaling(x, a, seed):
    cfg = AugmentConfig()
    lhs = weak_augment(a * x, cfg, np.random.default_rng(seed))
    rhs = a * weak_augment(x, cfg, np.random.default_rng(seed))
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_strong_identity():
    x = np.random.default_rng(0).normal(size=20)
    cfg = AugmentConfig(strong_max_segments=1, strong_jitter_sigma=0.0)
    np.testing.assert_array_equal(strong_augment(x, cfg, np.random.default_rng(0)), x)


@settings(max_examples=50)
@given(series, st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_strong_preserves_multiset(x, m, seed):
    cfg = AugmentConfig(strong_max_segments=m, strong_jitter_sigma=0.0)
    out = strong_augment(x, cfg, np.random.default_rng(seed))
    assert out.shape == x.shape
    np.testing.assert_array_equal(np.sort(out), np.sort(x))


def test_strong_permutes_contiguous_segments():
    x = np.arange(50.0)
    cfg = AugmentConfig(strong_max_segments=5, strong_jitter_sigma=0.0)
    rng = np.random.default_rng(3)
    for _ in range(20):
        out = strong_augment(x, cfg, rng)
        # a rearrangement of at most 5 runs has at most 4 breaks
        assert np.count_nonzero(np.diff(out) != 1.0) <= 4


def test_strong_jitter_magnitude():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(1000, 100))
    cfg = AugmentConfig(strong_jitter_sigma=0.05)
    out = strong_augment(x, cfg, np.random.default_rng(5))
    clean = strong_augment(x, AugmentConfig(strong_jitter_sigma=0.0), np.random.default_rng(5))
    # same draws except the jitter normals, so the permutations coincide
    expected = 0.05 * math.sqrt(2 / math.pi)
    assert np.abs(out - clean).mean() == pytest.approx(expected, rel=0.02)


def test_batch_shape_and_determinism():
    x = np.random.default_rng(6).normal(size=(4, 16))
    a = strong_augment(x, AugmentConfig(), np.random.default_rng(7))
    b = strong_augment(x, AugmentConfig(), np.random.default_rng(7))
    assert a.shape == x.shape
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize(
    "kwargs", [{"weak_scale_sigma": -1}, {"strong_max_segments": 0}, {"strong_jitter_sigma": -0.1}]
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        AugmentConfig(**kwargs)
