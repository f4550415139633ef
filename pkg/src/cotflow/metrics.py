"""Sample-based distances used in the benchmark tables: W2 and MMD."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .ot_core import assignment, solve_exact

MAX_POINTS = 5000
MEDIAN_SUBSAMPLE = 2000


def _equal_size(X: np.ndarray, Z: np.ndarray, seed: int, max_points: int | None):
    X = np.asarray(X, dtype=float).reshape(len(X), -1)
    Z = np.asarray(Z, dtype=float).reshape(len(Z), -1)
    n = min(len(X), len(Z))
    if max_points is not None:
        n = min(n, max_points)
    rng = np.random.default_rng(seed)
    if len(X) > n:
        X = X[np.sort(rng.choice(len(X), n, replace=False))]
    if len(Z) > n:
        Z = Z[np.sort(rng.choice(len(Z), n, replace=False))]
    return X, Z


def w2_empirical(X, Z, seed: int = 0, max_points: int | None = MAX_POINTS) -> float:
    """W2 between two equal-size uniform samples via an optimal assignment.

    The larger set (or both, beyond ``max_points``) is subsampled with ``seed``.
    """
    X, Z = _equal_size(X, Z, seed, max_points)
    cost = cdist(X, Z, "sqeuclidean")
    cols = assignment(cost)
    # fsum is correctly rounded, so the value does not depend on matching order (exact symmetry)
    return float(np.sqrt(math.fsum(cost[np.arange(len(X)), cols]) / len(X)))


def wasserstein_p(X, a, Z, b, p: int = 2) -> float:
    """Exact W_p between weighted point sets with Euclidean ground distance."""
    X = np.asarray(X, dtype=float).reshape(len(X), -1)
    Z = np.asarray(Z, dtype=float).reshape(len(Z), -1)
    sq = cdist(X, Z, "sqeuclidean")
    cost = sq if p == 2 else np.sqrt(sq) ** p
    plan = solve_exact(cost, a, b)
    return float(plan.cost_value ** (1.0 / p))


@dataclass(frozen=True)
class MmdConfig:
    bandwidth: float | Literal["median"] = "median"
    estimator: Literal["biased", "unbiased"] = "biased"

    def __post_init__(self):
        if self.bandwidth != "median" and not float(self.bandwidth) > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.estimator not in ("biased", "unbiased"):
            raise ValueError(f"unknown estimator {self.estimator!r}")


def median_bandwidth(X, Z, max_points: int = MEDIAN_SUBSAMPLE) -> float:
    """Median pairwise distance of the pooled sample (evenly strided if large)."""
    pooled = np.vstack([np.asarray(X, dtype=float).reshape(len(X), -1),
                        np.asarray(Z, dtype=float).reshape(len(Z), -1)])
    if len(pooled) > max_points:
        pooled = pooled[np.linspace(0, len(pooled) - 1, max_points).astype(int)]
    h = float(np.median(pdist(pooled)))
    return h if h > 0 else 1.0


def _kernel_sum(A: np.ndarray, B: np.ndarray, h: float, chunk: int = 1024) -> float:
    total = 0.0
    for start in range(0, len(A), chunk):
        d2 = cdist(A[start:start + chunk], B, "sqeuclidean")
        total += float(np.exp(-d2 / (2.0 * h * h)).sum())
    return total


def mmd_squared(X, Z, cfg: MmdConfig = MmdConfig()) -> float:
    """Squared MMD with a Gaussian kernel exp(-|x - z|^2 / (2 h^2))."""
    X = np.asarray(X, dtype=float).reshape(len(X), -1)
    Z = np.asarray(Z, dtype=float).reshape(len(Z), -1)
    h = median_bandwidth(X, Z) if cfg.bandwidth == "median" else float(cfg.bandwidth)
    m, n = len(X), len(Z)
    kxx = _kernel_sum(X, X, h)
    kzz = _kernel_sum(Z, Z, h)
    kxz = _kernel_sum(X, Z, h)
    if cfg.estimator == "biased":
        # a squared RKHS norm; clamp round-off below zero
        return max(kxx / m**2 + kzz / n**2 - 2.0 * kxz / (m * n), 0.0)
    if m < 2 or n < 2:
        raise ValueError("unbiased MMD needs at least two points per sample")
    # diagonal terms are exp(0) = 1
    return (kxx - m) / (m * (m - 1)) + (kzz - n) / (n * (n - 1)) - 2.0 * kxz / (m * n)


@dataclass
class MetricReport:
    metric: str
    value: float
    n: int
    seed: int
    config: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)
