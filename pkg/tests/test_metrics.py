import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cotflow.metrics import MetricReport, MmdConfig, median_bandwidth, mmd_squared, w2_empirical, wasserstein_p


def test_w2_identical_zero():
    X = np.random.default_rng(0).standard_normal((50, 2))
    assert w2_empirical(X, X) == 0.0


def test_w2_translation():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((40, 3))
    c = np.array([0.3, -1.0, 2.0])
    assert w2_empirical(X, X + c) == pytest.approx(np.linalg.norm(c), abs=1e-12)


def test_w2_two_atoms():
    assert w2_empirical(np.array([[0.0], [1.0]]), np.array([[0.0], [3.0]])) == pytest.approx(np.sqrt(2), abs=1e-15)


def test_w2_matches_permutation_enumeration():
    rng = np.random.default_rng(2)
    for _ in range(10):
        X, Z = rng.standard_normal((5, 2)), rng.standard_normal((5, 2))
        best = min(np.mean(np.sum((X - Z[list(p)]) ** 2, axis=1)) for p in itertools.permutations(range(5)))
        assert w2_empirical(X, Z) == pytest.approx(np.sqrt(best), abs=1e-14)


def test_w2_subsamples_to_equal_size():
    rng = np.random.default_rng(3)
    X, Z = rng.standard_normal((30, 1)), rng.standard_normal((20, 1))
    assert w2_empirical(X, Z, seed=4) == w2_empirical(X, Z, seed=4)
    assert np.isfinite(w2_empirical(X, Z, max_points=10))


def test_wasserstein_p_weighted():
    # all mass moves distance 2
    assert wasserstein_p([[0.0]], np.array([1.0]), [[2.0], [-2.0]], np.array([0.5, 0.5]), p=1) == pytest.approx(2.0)
    assert wasserstein_p([[0.0]], np.array([1.0]), [[2.0], [-2.0]], np.array([0.5, 0.5]), p=2) == pytest.approx(2.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=2, max_value=12), st.integers(min_value=0, max_value=2**31))
def test_w2_is_a_metric(n, seed):
    rng = np.random.default_rng(seed)
    A, B, C = (rng.standard_normal((n, 2)) for _ in range(3))
    assert w2_empirical(A, B) == w2_empirical(B, A)
    assert w2_empirical(A, C) <= w2_empirical(A, B) + w2_empirical(B, C) + 1e-9


def test_mmd_single_atoms_hand_value():
    x, z = np.array([[0.0, 0.0]]), np.array([[1.0, 2.0]])
    h = 0.7
    expected = 2 - 2 * np.exp(-5.0 / (2 * h * h))
    assert mmd_squared(x, z, MmdConfig(bandwidth=h)) == pytest.approx(expected, abs=1e-15)


def test_mmd_identical_biased_zero():
    X = np.random.default_rng(0).standard_normal((100, 2))
    assert mmd_squared(X, X) == pytest.approx(0.0, abs=1e-12)


def test_mmd_unbiased_centered_under_null():
    rng = np.random.default_rng(1)
    cfg = MmdConfig(bandwidth=1.0, estimator="unbiased")
    vals = np.array([mmd_squared(rng.standard_normal((50, 2)), rng.standard_normal((50, 2)), cfg) for _ in range(100)])
    assert abs(vals.mean()) <= 3 * vals.std(ddof=1) / np.sqrt(len(vals))


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=1, max_value=30), st.integers(min_value=1, max_value=30),
       st.integers(min_value=0, max_value=2**31))
def test_mmd_nonnegative_and_permutation_invariant(m, n, seed):
    rng = np.random.default_rng(seed)
    X, Z = rng.standard_normal((m, 2)), rng.standard_normal((n, 2)) + 0.5
    v = mmd_squared(X, Z)
    assert v >= 0
    assert mmd_squared(X[rng.permutation(m)], Z[rng.permutation(n)]) == pytest.approx(v, abs=1e-12)


def test_mmd_detects_shift():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((300, 2))
    assert mmd_squared(X, rng.standard_normal((300, 2)) + 1.0) > 10 * mmd_squared(X, rng.standard_normal((300, 2)))


def test_median_bandwidth_and_config_validation():
    X = np.array([[0.0], [1.0]])
    Z = np.array([[3.0]])
    assert median_bandwidth(X, Z) == 2.0
    with pytest.raises(ValueError):
        MmdConfig(bandwidth=-1.0)
    with pytest.raises(ValueError):
        MmdConfig(estimator="linear")


def test_report_json():
    rep = MetricReport("w2", 0.5, 10, 0, {"max_points": 5000})
    assert '"metric": "w2"' in rep.to_json()
