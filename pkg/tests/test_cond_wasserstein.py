import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from cotflow.cond_wasserstein import (
    GaussianJoint,
    InterpolantPath,
    counterexample_measures,
    cw_estimate,
    empirical_cw,
    gaussian_cw2_squared,
    interpolant_velocity,
    mccann_interpolate,
    merge_atoms,
    sqrtm_psd,
)
from cotflow.metrics import wasserstein_p
from cotflow.ot_core import DiscreteMeasure, solve_exact


def rho_pair(rho):
    eta = GaussianJoint([0.0], [0.0], [[1.0]], [[0.0]], [[1.0]])
    nu = GaussianJoint([0.0], [0.0], [[1.0]], [[rho]], [[1.0]])
    return eta, nu


@pytest.mark.parametrize("rho", [0.0, 0.3, 0.6, 0.9])
def test_rho_example(rho):
    eta, nu = rho_pair(rho)
    assert gaussian_cw2_squared(eta, nu) == pytest.approx(2 * (1 - np.sqrt(1 - rho**2)), abs=1e-12)


def test_rho_06_is_04():
    assert gaussian_cw2_squared(*rho_pair(0.6)) == pytest.approx(0.4, abs=1e-12)


def random_spd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T + d * np.eye(d)


def random_joint(rng, m_y, S_yy, d_u):
    # u = m_u + B (y - m_y) + noise with covariance Q keeps the joint PD for any B
    B = rng.standard_normal((d_u, len(m_y))) * 0.5
    Q = random_spd(rng, d_u) * 0.3
    S_uy = B @ S_yy
    S_uu = Q + B @ S_yy @ B.T
    return GaussianJoint(m_y, rng.standard_normal(d_u), S_yy, S_uy.T, S_uu)


def test_identity_case():
    rng = np.random.default_rng(0)
    S = random_spd(rng, 2)
    g = random_joint(rng, np.zeros(2), S, 3)
    assert gaussian_cw2_squared(g, g) == pytest.approx(0.0, abs=1e-12)


def test_uncorrelated_blocks_reduce_to_u_marginal_w2():
    rng = np.random.default_rng(1)
    S_yy = random_spd(rng, 2)
    A, B = random_spd(rng, 3), random_spd(rng, 3)
    ma, mb = rng.standard_normal(3), rng.standard_normal(3)
    eta = GaussianJoint(np.zeros(2), ma, S_yy, np.zeros((2, 3)), A)
    nu = GaussianJoint(np.zeros(2), mb, S_yy, np.zeros((2, 3)), B)
    rA = linalg.sqrtm(A).real
    bures = np.trace(A + B - 2 * linalg.sqrtm(rA @ B @ rA).real)
    assert gaussian_cw2_squared(eta, nu) == pytest.approx(np.sum((ma - mb) ** 2) + bures, abs=1e-12)


def test_matches_averaged_conditional_w2_in_1d():
    # u | y ~ N(m + b (y - m_y), q); averaged squared W2 between conditionals over y ~ N(m_y, s)
    rng = np.random.default_rng(2)
    for _ in range(20):
        s = rng.uniform(0.2, 3.0)
        b1, b2 = rng.standard_normal(2)
        q1, q2 = rng.uniform(0.1, 2.0, 2)
        m1, m2 = rng.standard_normal(2)
        eta = GaussianJoint([0.3], [m1], [[s]], [[b1 * s]], [[q1 + b1**2 * s]])
        nu = GaussianJoint([0.3], [m2], [[s]], [[b2 * s]], [[q2 + b2**2 * s]])
        expected = (m1 - m2) ** 2 + (b1 - b2) ** 2 * s + (np.sqrt(q1) - np.sqrt(q2)) ** 2
        assert gaussian_cw2_squared(eta, nu) == pytest.approx(expected, abs=1e-12)


def test_matches_monte_carlo_over_y_in_higher_dims():
    rng = np.random.default_rng(3)
    S_yy = random_spd(rng, 2)
    eta = random_joint(rng, np.array([0.5, -1.0]), S_yy, 2)
    nu = random_joint(rng, np.array([0.5, -1.0]), S_yy, 2)
    ys = rng.multivariate_normal(eta.m_y, S_yy, size=20_000)
    vals = []
    for y in ys[:2000]:
        ma, Ca = eta.conditional(y)
        mb, Cb = nu.conditional(y)
        rA = linalg.sqrtm(Ca).real
        vals.append(np.sum((ma - mb) ** 2) + np.trace(Ca + Cb - 2 * linalg.sqrtm(rA @ Cb @ rA).real))
    vals = np.array(vals)
    se = vals.std() / np.sqrt(len(vals))
    assert abs(gaussian_cw2_squared(eta, nu) - vals.mean()) < 4 * se


def test_different_y_marginals_rejected():
    eta = GaussianJoint([0.0], [0.0], [[1.0]], [[0.0]], [[1.0]])
    nu = GaussianJoint([1.0], [0.0], [[1.0]], [[0.0]], [[1.0]])
    with pytest.raises(ValueError):
        gaussian_cw2_squared(eta, nu)


def test_gaussian_joint_validation_and_round_trip():
    with pytest.raises(ValueError):
        GaussianJoint([0.0], [0.0], [[1.0]], [[2.0]], [[1.0]])  # not PD
    with pytest.raises(ValueError):
        GaussianJoint([0.0], [0.0], [[1.0]], [[0.5]], [[1.0]], Sigma_uy=[[0.4]])
    g = GaussianJoint([0.0, 1.0], [2.0], [[2.0, 0.3], [0.3, 1.0]], [[0.2], [0.1]], [[1.5]])
    back = GaussianJoint.from_json(g.to_json())
    np.testing.assert_array_equal(back.covariance, g.covariance)
    np.testing.assert_array_equal(back.mean, g.mean)


def test_sqrtm_psd_floor():
    m = np.diag([4.0, 0.0])
    np.testing.assert_allclose(sqrtm_psd(m), np.diag([2.0, 1e-6]), atol=1e-15)
    rng = np.random.default_rng(0)
    a = random_spd(rng, 4)
    r = sqrtm_psd(a)
    np.testing.assert_allclose(r @ r, a, atol=1e-10)


def test_cw_identical_is_zero():
    rng = np.random.default_rng(0)
    m = DiscreteMeasure.from_yu(np.repeat([0.0, 1.0], 4), rng.standard_normal(8))
    assert empirical_cw(m, m) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("k", [1, 3, 10])
def test_counterexample(k):
    eta, nu = counterexample_measures(k)
    assert empirical_cw(eta, nu) ** 2 == pytest.approx(k**2, abs=1e-9)
    assert wasserstein_p(eta.points, eta.weights, nu.points, nu.weights) ** 2 == pytest.approx(min(k**2, 1), abs=1e-9)


def test_no_reverse_bound():
    eta, nu = counterexample_measures(10)
    ratio = empirical_cw(eta, nu) / wasserstein_p(eta.points, eta.weights, nu.points, nu.weights)
    assert ratio >= 10


def test_two_groups_mixture_of_per_group_w2():
    rng = np.random.default_rng(4)
    for _ in range(20):
        w = rng.dirichlet([1, 1])
        ys = np.array([0.0, 0.0, 1.0, 1.0])
        weights = np.array([w[0] / 2, w[0] / 2, w[1] / 2, w[1] / 2])
        ua, ub = rng.standard_normal(4), rng.standard_normal(4)
        src = DiscreteMeasure.from_yu(ys, ua, weights)
        tgt = DiscreteMeasure.from_yu(ys, ub, weights)
        oracle = 0.0
        for g, sl in ((0, slice(0, 2)), (1, slice(2, 4))):
            best = min(np.mean((ua[sl] - ub[sl][list(p)]) ** 2) for p in itertools.permutations(range(2)))
            oracle += w[g] * best
        assert empirical_cw(src, tgt, epsilon=1e-8) ** 2 == pytest.approx(oracle, abs=1e-12)


def shared_y_measure(rng, n_groups=3, per_group=2, d_u=1):
    ys = np.repeat(np.arange(n_groups, dtype=float), per_group)
    return DiscreteMeasure.from_yu(ys, rng.standard_normal((len(ys), d_u)))


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=0, max_value=2**31), st.integers(min_value=1, max_value=3),
       st.integers(min_value=1, max_value=3))
def test_metric_and_sandwich_properties(seed, per_group, d_u):
    rng = np.random.default_rng(seed)
    a, b, c = (shared_y_measure(rng, 3, per_group, d_u) for _ in range(3))
    ab = empirical_cw(a, b, epsilon=1e-8)
    ba = empirical_cw(b, a, epsilon=1e-8)
    bc = empirical_cw(b, c, epsilon=1e-8)
    ac = empirical_cw(a, c, epsilon=1e-8)
    assert abs(ab - ba) <= 1e-9
    assert ac <= ab + bc + 1e-9
    assert wasserstein_p(a.points, a.weights, b.points, b.weights) <= ab + 1e-9
    assert wasserstein_p(a.u, a.weights, b.u, b.weights) <= ab + 1e-9


def test_identity_of_indiscernibles():
    rng = np.random.default_rng(5)
    a = shared_y_measure(rng)
    shuffled = np.random.default_rng(6).permutation(a.n)
    same = DiscreteMeasure(a.points[shuffled], a.weights[shuffled], 1, 1)
    assert empirical_cw(a, same, epsilon=1e-8) == pytest.approx(0.0, abs=1e-12)
    moved = DiscreteMeasure(a.points + np.array([0.0, 1e-3]), a.weights, 1, 1)
    assert empirical_cw(a, moved, epsilon=1e-8) > 0


def test_cw_estimate_reports_slack():
    rng = np.random.default_rng(7)
    a, b = shared_y_measure(rng), shared_y_measure(rng)
    est = cw_estimate(a, b, epsilon=1e-8)
    assert est.y_slack == 0.0
    assert est.value == pytest.approx(np.sqrt(est.u_cost))


# interpolants


def test_interpolant_endpoints():
    rng = np.random.default_rng(8)
    src, tgt = shared_y_measure(rng, 2, 3), shared_y_measure(rng, 2, 3)
    path = InterpolantPath.from_measures(src, tgt)
    for t, m in ((0.0, src), (1.0, tgt)):
        got = mccann_interpolate(path, t)
        pts, w = merge_atoms(m.points, m.weights)
        np.testing.assert_array_equal(got.points, pts)
        np.testing.assert_allclose(got.weights, w, atol=1e-15)


def test_single_pair_midpoint_and_velocity():
    src = DiscreteMeasure.from_yu([0.0], [0.0])
    tgt = DiscreteMeasure.from_yu([0.0], [2.0])
    path = InterpolantPath.from_measures(src, tgt)
    mid = mccann_interpolate(path, 0.5)
    np.testing.assert_array_equal(mid.points, [[0.0, 1.0]])
    for t in (0.0, 0.3, 1.0):
        np.testing.assert_array_equal(interpolant_velocity(path, t), [[0.0, 2.0]])
    fixed = InterpolantPath.from_measures(src, src)
    np.testing.assert_array_equal(interpolant_velocity(fixed, 0.5), [[0.0, 0.0]])


def test_velocity_y_block_zero_for_random_coupling():
    rng = np.random.default_rng(9)
    src = DiscreteMeasure.uniform(rng.standard_normal((5, 3)), d_y=2)
    tgt = DiscreteMeasure.uniform(rng.standard_normal((5, 3)), d_y=2)
    path = InterpolantPath(src, tgt, solve_exact(rng.random((5, 5)), src.weights, tgt.weights))
    assert np.all(interpolant_velocity(path, 0.4)[:, :2] == 0.0)


def test_time_out_of_range():
    src = DiscreteMeasure.from_yu([0.0], [0.0])
    path = InterpolantPath.from_measures(src, src)
    with pytest.raises(ValueError):
        mccann_interpolate(path, 1.5)
    with pytest.raises(ValueError):
        interpolant_velocity(path, -0.1)


def test_constant_speed_geodesic():
    rng = np.random.default_rng(10)
    grid = (0.0, 0.25, 0.5, 0.75, 1.0)
    for _ in range(5):
        src, tgt = shared_y_measure(rng, 3, 3), shared_y_measure(rng, 3, 3)
        path = InterpolantPath.from_measures(src, tgt)
        total = empirical_cw(src, tgt, epsilon=1e-8)
        gammas = {t: mccann_interpolate(path, t) for t in grid}
        for s in grid:
            for t in grid:
                d = empirical_cw(gammas[s], gammas[t], epsilon=1e-8)
                assert d == pytest.approx(abs(t - s) * total, rel=1e-8, abs=1e-12)
