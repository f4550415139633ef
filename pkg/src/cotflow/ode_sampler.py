"""Integrating the learned flow with y held fixed to draw conditional samples."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np
from scipy.integrate import solve_ivp

from .flow_model import Standardizer, VectorFieldParams, u_velocity

Field = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class IntegratorConfig:
    method: Literal["euler", "rk4", "dopri"] = "rk4"
    steps: int = 100
    rtol: float = 1e-6
    atol: float = 1e-8

    def __post_init__(self):
        if self.method not in ("euler", "rk4", "dopri"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")


def _as_field(field: VectorFieldParams | Field) -> Field:
    if isinstance(field, VectorFieldParams):
        return lambda t, y, u: u_velocity(field, t, y, u)
    return field


def _check(u: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(u)):
        raise FloatingPointError(f"non-finite state at t={t:.6g}")


def integrate(field: VectorFieldParams | Field, y, u0, cfg: IntegratorConfig = IntegratorConfig(),
              return_trajectory: bool = False):
    """Solve du/dt = v(t, y, u) on [0, 1] from ``u0`` with ``y`` constant.

    ``field`` is trained parameters or any callable ``(t, y, u) -> du`` acting
    on batches. ``y`` and ``u0`` may be single vectors or row batches. Returns
    ``u1`` (same shape as ``u0``), or ``(u1, trajectory)`` where trajectory has
    the state at every step (fixed-step methods) or at the solver's accepted
    times (dopri).
    """
    fn = _as_field(field)
    u0 = np.asarray(u0, dtype=float)
    single = u0.ndim == 1
    u = np.atleast_2d(u0).copy()
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if len(y) == 1 and len(u) > 1:
        y = np.broadcast_to(y, (len(u), y.shape[1]))
    if len(y) != len(u):
        raise ValueError(f"y has {len(y)} rows but u0 has {len(u)}")

    traj = [u.copy()] if return_trajectory else None
    if cfg.method == "dopri":
        shape = u.shape

        def rhs(t, flat):
            return np.asarray(fn(t, y, flat.reshape(shape)), dtype=float).ravel()

        sol = solve_ivp(rhs, (0.0, 1.0), u.ravel(), method="RK45", rtol=cfg.rtol, atol=cfg.atol)
        if not sol.success:
            raise FloatingPointError(f"adaptive solver failed at t={sol.t[-1]:.6g}: {sol.message}")
        u = sol.y[:, -1].reshape(shape)
        _check(u, 1.0)
        if return_trajectory:
            traj = [col.reshape(shape) for col in sol.y.T]
    else:
        h = 1.0 / cfg.steps
        for k in range(cfg.steps):
            t = k * h
            if cfg.method == "euler":
                u = u + h * fn(t, y, u)
            else:
                k1 = fn(t, y, u)
                k2 = fn(t + 0.5 * h, y, u + 0.5 * h * k1)
                k3 = fn(t + 0.5 * h, y, u + 0.5 * h * k2)
                k4 = fn(t + h, y, u + h * k3)
                u = u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            _check(u, t + h)
            if return_trajectory:
                traj.append(u.copy())

    out = u[0] if single else u
    if return_trajectory:
        stacked = np.stack(traj)
        return out, (stacked[:, 0] if single else stacked)
    return out


def standard_normal_sampler(d_u: int):
    def draw(n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, d_u))

    return draw


def sample_posterior(params: VectorFieldParams, y, n: int, source_u_sampler=None,
                     cfg: IntegratorConfig = IntegratorConfig(), rng: np.random.Generator | int | None = 0,
                     standardizer: Standardizer | None = None) -> np.ndarray:
    """Draw ``n`` samples of u | y by pushing source draws through the flow.

    ``y`` is in data coordinates; the standardizer (if any) maps it into model
    coordinates and maps the integrated u back out.
    """
    rng = np.random.default_rng(rng)
    if n == 0:
        return np.empty((0, params.d_u))
    if source_u_sampler is None:
        source_u_sampler = standard_normal_sampler(params.d_u)
    y = np.asarray(y, dtype=float).reshape(-1)
    y_model = standardizer.transform_y(y) if standardizer is not None else y
    u0 = source_u_sampler(n, rng)
    u1 = integrate(params, y_model[None, :], u0, cfg)
    return standardizer.inverse_u(u1) if standardizer is not None else u1


def write_samples_csv(path, y, u, d_y: int | None = None) -> None:
    """Samples as rows (sample_id, y..., u...); a single y is repeated per row."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if len(y) == 1:
        y = np.repeat(y, len(u), axis=0)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id"] + [f"y{i}" for i in range(y.shape[1])] + [f"u{i}" for i in range(u.shape[1])])
        for k in range(len(u)):
            writer.writerow([k] + [repr(float(v)) for v in y[k]] + [repr(float(v)) for v in u[k]])


def read_samples_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    arr = np.asarray(rows, dtype=float).reshape(len(rows), len(header))
    y_cols = [i for i, h in enumerate(header) if h.startswith("y")]
    u_cols = [i for i, h in enumerate(header) if h.startswith("u")]
    return arr[:, y_cols], arr[:, u_cols]
