"""Benchmark data: 2D synthetic joints and the Lotka-Volterra inverse problem.

Joint points are stored y-first. For the 2D sets, y is the vertical plot
coordinate (the conditioning variable) and u the horizontal one.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from numba import njit
from sklearn import datasets as skdata

from .ot_core import DiscreteMeasure

logger = logging.getLogger(__name__)

SYNTHETIC_NAMES = ("checkerboard", "moons", "circles", "swissroll")

MOONS_SHIFT = np.array([0.5, 0.25])
MOONS_SCALE = np.array([0.75, 0.25])
SWISSROLL_RESCALE = 12.0

LV_P0 = (30.0, 1.0)
LV_T_GRID = np.arange(0.0, 21.0, 2.0)
LV_STEP = 5e-3
LV_PRIOR_MEAN = np.array([-0.125, -3.0, -0.125, -3.0])
LV_PRIOR_VAR = 0.5
LV_NOISE_VAR = 0.1
LV_BENCHMARK_PARAMS = np.array([0.83, 0.041, 1.08, 0.04])
POSITIVITY_FLOOR = 1e-10


@dataclass(frozen=True)
class Synthetic2DSpec:
    name: str
    n: int
    seed: int = 0

    def __post_init__(self):
        if self.name not in SYNTHETIC_NAMES:
            raise ValueError(f"unknown dataset {self.name!r}; choose from {SYNTHETIC_NAMES}")
        if self.n < 1:
            raise ValueError("n must be >= 1")


def _checkerboard(n: int, rng: np.random.Generator) -> np.ndarray:
    # The 8 cells (i, j) of a 4x4 board on [-2, 2]^2 with i + j even.
    cells = np.array([(i, j) for i in range(4) for j in range(4) if (i + j) % 2 == 0], dtype=float)
    pick = cells[rng.integers(0, len(cells), size=n)]
    return pick - 2.0 + rng.random((n, 2))


def sample_2d_xy(spec: Synthetic2DSpec) -> np.ndarray:
    """Raw (horizontal, vertical) coordinates, shape (n, 2)."""
    if spec.name == "moons":
        xy, _ = skdata.make_moons(spec.n, noise=0.05, random_state=spec.seed)
        return (xy - MOONS_SHIFT) / MOONS_SCALE
    if spec.name == "circles":
        xy, _ = skdata.make_circles(spec.n, factor=0.5, noise=0.05, random_state=spec.seed)
        return xy
    if spec.name == "swissroll":
        xyz, _ = skdata.make_swiss_roll(spec.n, noise=0.75, random_state=spec.seed)
        return xyz[:, [0, 2]] / SWISSROLL_RESCALE
    return _checkerboard(spec.n, np.random.default_rng(spec.seed))


def sample_2d(spec: Synthetic2DSpec) -> DiscreteMeasure:
    """Uniform empirical measure of ``spec.n`` joint points, y = vertical, u = horizontal."""
    xy = sample_2d_xy(spec)
    return DiscreteMeasure.from_yu(xy[:, 1], xy[:, 0])


def synthetic_sampler(name: str) -> Callable[[int, np.random.Generator], np.ndarray]:
    """Sampler ``(n, rng) -> (n, 2)`` y-first joint points; seeds derived from ``rng``."""
    def draw(n: int, rng: np.random.Generator) -> np.ndarray:
        seed = int(rng.integers(0, 2**31 - 1))
        return sample_2d(Synthetic2DSpec(name, n, seed)).points

    return draw


def build_source(target, n: int, seed: int = 0, d_u: int = 1) -> DiscreteMeasure:
    """Product source: y from the target's Y-marginal, u i.i.d. standard normal.

    ``target`` is either a y-sampler ``(n, rng) -> (n, d_y)`` giving fresh
    draws, or a :class:`DiscreteMeasure` whose y-atoms are resampled by weight
    (``d_u`` is then taken from the measure).
    """
    rng = np.random.default_rng(seed)
    if isinstance(target, DiscreteMeasure):
        idx = rng.choice(target.n, size=n, p=target.weights)
        y = target.y[idx]
        d_u = target.d_u
    else:
        y = np.asarray(target(n, rng), dtype=float).reshape(n, -1)
    u = rng.standard_normal((n, d_u))
    return DiscreteMeasure.from_yu(y, u)


@dataclass
class LvParams:
    alpha: float
    beta: float
    gamma: float
    delta: float

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma, self.delta) <= 0:
            raise ValueError("Lotka-Volterra parameters must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma, self.delta])

    @classmethod
    def from_array(cls, arr) -> "LvParams":
        return cls(*map(float, arr))


@dataclass
class LvObservation:
    trajectory: np.ndarray
    y: np.ndarray
    t_grid: np.ndarray


@njit(cache=True)
def _lv_rk4(params, p0_prey, p0_pred, n_sub, h, floor, out, flagged):
    for i in range(params.shape[0]):
        a, b, c, d = params[i, 0], params[i, 1], params[i, 2], params[i, 3]
        p1, p2 = p0_prey, p0_pred
        out[i, 0, 0], out[i, 0, 1] = p1, p2
        for k in range(n_sub.shape[0]):
            for _ in range(n_sub[k]):
                k1a = a * p1 - b * p1 * p2
                k1b = -c * p2 + d * p1 * p2
                q1, q2 = p1 + 0.5 * h * k1a, p2 + 0.5 * h * k1b
                k2a = a * q1 - b * q1 * q2
                k2b = -c * q2 + d * q1 * q2
                q1, q2 = p1 + 0.5 * h * k2a, p2 + 0.5 * h * k2b
                k3a = a * q1 - b * q1 * q2
                k3b = -c * q2 + d * q1 * q2
                q1, q2 = p1 + h * k3a, p2 + h * k3b
                k4a = a * q1 - b * q1 * q2
                k4b = -c * q2 + d * q1 * q2
                p1 = p1 + (h / 6.0) * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
                p2 = p2 + (h / 6.0) * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
                if p1 < floor or p2 < floor:
                    flagged[i] = True
                    p1 = max(p1, floor)
                    p2 = max(p2, floor)
            out[i, k + 1, 0], out[i, k + 1, 1] = p1, p2


def lv_simulate(params, p0=LV_P0, t_grid=LV_T_GRID, h: float = LV_STEP):
    """Integrate the predator-prey system with classical RK4 and read it off on ``t_grid``.

    ``params`` is an :class:`LvParams`, a length-4 array or an (n, 4) batch.
    Returns ``(z, flagged)``: ``z`` holds (prey, predator) pairs time-major,
    shape (2 * len(t_grid),) or (n, 2 * len(t_grid)); ``flagged`` marks runs
    where a state was floored at 1e-10 or became non-finite.
    """
    if isinstance(params, LvParams):
        params = params.as_array()
    params = np.asarray(params, dtype=float)
    single = params.ndim == 1
    params = np.ascontiguousarray(np.atleast_2d(params))
    t_grid = np.asarray(t_grid, dtype=float)
    if h <= 0:
        raise ValueError("step must be positive")
    if t_grid[0] != 0.0:
        raise ValueError("t_grid must start at 0")
    n_sub = np.rint(np.diff(t_grid) / h).astype(np.int64)
    if np.any(np.abs(n_sub * h - np.diff(t_grid)) > 1e-9) or np.any(n_sub < 1):
        raise ValueError(f"step {h} does not divide the grid spacing")

    n = len(params)
    out = np.empty((n, len(t_grid), 2))
    flagged = np.zeros(n, dtype=np.bool_)
    _lv_rk4(params, float(p0[0]), float(p0[1]), n_sub, float(h), POSITIVITY_FLOOR, out, flagged)
    flagged |= ~np.all(np.isfinite(out), axis=(1, 2))
    if np.any(flagged):
        logger.debug("%d of %d Lotka-Volterra runs hit the positivity floor or diverged", flagged.sum(), n)
    z = out.reshape(n, -1)
    return (z[0], bool(flagged[0])) if single else (z, flagged)


def lv_first_integral(p1, p2, params) -> np.ndarray:
    """Conserved quantity delta p1 - gamma log p1 + beta p2 - alpha log p2."""
    a, b, c, d = np.asarray(params if not isinstance(params, LvParams) else params.as_array(), dtype=float).T
    return d * p1 - c * np.log(p1) + b * p2 - a * np.log(p2)


def lv_observe(trajectory, rng: np.random.Generator, noise_sd: float = np.sqrt(LV_NOISE_VAR)) -> np.ndarray:
    """Log-normal observation: log y = log z + noise_sd * N(0, I)."""
    z = np.asarray(trajectory, dtype=float)
    return z * np.exp(noise_sd * rng.standard_normal(z.shape))


def lv_prior_sample(n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw (n, 4) parameter vectors with log u ~ N(m, 0.5 I)."""
    return np.exp(LV_PRIOR_MEAN + np.sqrt(LV_PRIOR_VAR) * rng.standard_normal((n, 4)))


def lv_dataset(n: int, seed: int = 0, h: float = LV_STEP) -> tuple[np.ndarray, np.ndarray]:
    """Simulate ``n`` (y, u) pairs, y in R^22 and u in R^4.

    Parameter draws whose simulation hits the positivity floor or diverges are
    discarded and redrawn, so every returned trajectory is a clean RK4 run.
    """
    rng = np.random.default_rng(seed)
    ys, us = [], []
    remaining = n
    while remaining > 0:
        batch = max(remaining + remaining // 4, 16)
        u = lv_prior_sample(batch, rng)
        z, flagged = lv_simulate(u, h=h)
        keep = np.flatnonzero(~flagged)[:remaining]
        y = lv_observe(z[keep], rng)
        ys.append(y)
        us.append(u[keep])
        remaining -= len(keep)
    return np.vstack(ys), np.vstack(us)


def lv_benchmark_observation(seed: int = 0, params=LV_BENCHMARK_PARAMS) -> LvObservation:
    """Single noisy observation generated at the benchmark parameters."""
    z, _ = lv_simulate(np.asarray(params, dtype=float))
    y = lv_observe(z, np.random.default_rng(seed))
    return LvObservation(z, y, LV_T_GRID.copy())


def write_dataset(path, y: np.ndarray, u: np.ndarray, provenance: dict) -> None:
    """CSV with columns y0.., u0.. plus a ``<path>.json`` sidecar describing how it was made."""
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    u = np.asarray(u, dtype=float).reshape(len(u), -1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"y{i}" for i in range(y.shape[1])] + [f"u{i}" for i in range(u.shape[1])])
        for yr, ur in zip(y, u):
            writer.writerow([repr(float(v)) for v in yr] + [repr(float(v)) for v in ur])
    with open(f"{path}.json", "w") as fh:
        json.dump(provenance, fh, indent=2, sort_keys=True)


def read_dataset(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.asarray([[float(v) for v in row] for row in reader], dtype=float).reshape(-1, len(header))
    y_cols = [i for i, h in enumerate(header) if h.startswith("y")]
    u_cols = [i for i, h in enumerate(header) if h.startswith("u")]
    return rows[:, y_cols], rows[:, u_cols]


def spec_dict(spec: Synthetic2DSpec) -> dict:
    return asdict(spec)
