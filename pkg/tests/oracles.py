"""Independent reference computations shared by the test modules."""
import numpy as np

from cotflow.flow_model import fm_loss, init_params, sample_path_batch, value_and_grad


def finite_difference_grad(params, batch, h=1e-4):
    base = params.flat()
    out = np.empty_like(base)
    for i in range(base.size):
        e = np.zeros_like(base)
        e[i] = h
        out[i] = (fm_loss(params.with_flat(base + e), batch) - fm_loss(params.with_flat(base - e), batch)) / (2 * h)
    return out


def gradient_relative_error(params, batch, h=1e-4):
    """Max entrywise relative error of the analytic gradient against central differences.

    Entries are compared relative to max(|fd|, |analytic|), floored at 1e-6 of the
    largest gradient entry so exactly-zero components do not divide by zero.
    """
    _, g = value_and_grad(params, batch)
    g = g.flat()
    fd = finite_difference_grad(params, batch, h)
    floor = 1e-6 * max(np.max(np.abs(g)), 1e-300)
    denom = np.maximum(np.maximum(np.abs(fd), np.abs(g)), floor)
    return float(np.max(np.abs(fd - g) / denom))


def random_gradcheck_case(seed, activation="selu"):
    rng = np.random.default_rng(seed)
    d_y, d_u = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    depth = int(rng.integers(2, 4))
    width = int(rng.integers(3, 9))
    params = init_params(d_y, d_u, width, depth, activation, rng, zero_last=False)
    params = params.map(lambda a: a + 0.1 * rng.standard_normal(a.shape))
    n = int(rng.integers(2, 9))
    z0 = rng.standard_normal((n, d_y + d_u))
    z1 = rng.standard_normal((n, d_y + d_u))
    batch = sample_path_batch(z0, z1, rng.random(n), 0.1, rng)
    return params, batch


def linear_field(t, y, u):
    return u
