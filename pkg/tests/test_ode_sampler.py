import numpy as np
import pytest

from cotflow.flow_model import init_params
from cotflow.metrics import mmd_squared
from cotflow.ode_sampler import (
    IntegratorConfig,
    integrate,
    read_samples_csv,
    sample_posterior,
    standard_normal_sampler,
    write_samples_csv,
)
from oracles import linear_field


def constant_params(c, d_y=1):
    p = init_params(d_y, len(c), 8, 3, rng=0)
    p.biases[-1][:] = c
    return p


@pytest.mark.parametrize("method", ["euler", "rk4"])
def test_constant_field_exact(method):
    c = np.array([0.75, -2.0])
    u0 = np.random.default_rng(0).standard_normal((5, 2))
    u1 = integrate(constant_params(c), np.zeros((5, 1)), u0, IntegratorConfig(method, steps=7))
    np.testing.assert_allclose(u1, u0 + c, rtol=0, atol=1e-14)


def test_linear_field_rk4_100_steps():
    u0 = np.array([[1.0, -0.5]])
    u1 = integrate(linear_field, np.zeros((1, 1)), u0, IntegratorConfig("rk4", 100))
    assert np.linalg.norm(u1 - np.e * u0) / np.linalg.norm(u0) < 1e-8


def rk4_error(steps):
    u0 = np.array([[1.0]])
    return abs(integrate(linear_field, np.zeros((1, 1)), u0, IntegratorConfig("rk4", steps))[0, 0] - np.e)


def test_rk4_fourth_order():
    ratio = rk4_error(10) / rk4_error(20)
    assert 12 <= ratio <= 20


@pytest.mark.parametrize("method", ["euler", "rk4"])
def test_error_nonincreasing_with_steps(method):
    u0 = np.array([[1.0]])
    errs = [abs(integrate(linear_field, np.zeros((1, 1)), u0, IntegratorConfig(method, s))[0, 0] - np.e)
            for s in (5, 10, 20, 40, 80)]
    assert all(a >= b for a, b in zip(errs, errs[1:]))


def test_dopri_linear_field():
    u1 = integrate(linear_field, np.zeros((1, 1)), np.array([[2.0]]), IntegratorConfig("dopri", rtol=1e-10, atol=1e-12))
    assert u1[0, 0] == pytest.approx(2 * np.e, rel=1e-8)


def test_single_vector_and_trajectory():
    u1, traj = integrate(linear_field, np.zeros(1), np.array([1.0]), IntegratorConfig("euler", 4), return_trajectory=True)
    assert u1.shape == (1,)
    assert traj.shape == (5, 1)
    assert traj[0, 0] == 1.0
    assert u1[0] == pytest.approx(1.25**4)


@pytest.mark.parametrize("method", ["euler", "rk4", "dopri"])
def test_y_never_moves(method):
    # the sampler only ever integrates u; y is passed through untouched
    p = init_params(2, 1, 16, 3, rng=1, zero_last=False)
    rng = np.random.default_rng(2)
    y = rng.standard_normal((6, 2))
    y_in = y.copy()
    integrate(p, y, rng.standard_normal((6, 1)), IntegratorConfig(method, steps=10))
    assert np.max(np.abs(y - y_in)) == 0.0


def test_nonfinite_state_raises():
    def blowup(t, y, u):
        return np.full_like(u, np.inf)

    with pytest.raises(FloatingPointError):
        integrate(blowup, np.zeros((1, 1)), np.zeros((1, 1)), IntegratorConfig("euler", 2))


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig("midpoint")
    with pytest.raises(ValueError):
        IntegratorConfig(steps=0)
    with pytest.raises(ValueError):
        integrate(linear_field, np.zeros((3, 1)), np.zeros((2, 1)))


def test_sample_posterior_empty():
    p = init_params(1, 2, 8, 2, rng=0)
    out = sample_posterior(p, [0.0], 0)
    assert out.shape == (0, 2)


def test_zero_field_returns_source():
    p = init_params(1, 2, 8, 2, rng=0)
    out = sample_posterior(p, [0.3], 2000, rng=1)
    ref = standard_normal_sampler(2)(2000, np.random.default_rng(99))
    null = mmd_squared(ref, standard_normal_sampler(2)(2000, np.random.default_rng(98)))
    assert mmd_squared(out, ref) < 5 * max(null, 1e-4)
    # with the same rng the flow is the identity exactly
    np.testing.assert_array_equal(out, standard_normal_sampler(2)(2000, np.random.default_rng(1)))


def test_sample_posterior_deterministic():
    p = init_params(1, 1, 8, 3, rng=0, zero_last=False)
    a = sample_posterior(p, [0.1], 50, rng=3)
    b = sample_posterior(p, [0.1], 50, rng=3)
    assert a.tobytes() == b.tobytes()


def test_samples_csv_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    y = rng.standard_normal(2)
    u = rng.standard_normal((5, 3))
    path = tmp_path / "s.csv"
    write_samples_csv(path, y, u)
    header = path.read_text().splitlines()[0]
    assert header == "sample_id,y0,y1,u0,u1,u2"
    y2, u2 = read_samples_csv(path)
    np.testing.assert_array_equal(u2, u)
    np.testing.assert_array_equal(y2, np.tile(y, (5, 1)))
