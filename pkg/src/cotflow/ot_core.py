"""Discrete optimal transport with the triangular epsilon-cost.

Measures are weighted point clouds in a product space Y x U. Points are
stored with the y-block first, i.e. ``points[:, :d_y]`` is y and
``points[:, d_y:]`` is u.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

# POT probes every installed deep-learning backend on import; we only need numpy.
for _backend in ("PYTORCH", "JAX", "TENSORFLOW", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_backend}", "1")
from ot.lp import emd as _network_simplex  # noqa: E402

logger = logging.getLogger(__name__)

WEIGHT_TOL = 1e-12
FEASIBILITY_TOL = 1e-9
# Guard for the generic network simplex path (dense n*m problems).
MAX_PROBLEM_SIZE = 2**22
# Uniform square problems go through the assignment solver, which scales further.
MAX_ASSIGNMENT_SIZE = 2**25


class TransportError(ValueError):
    """Raised for invalid transport inputs (shapes, weights, costs)."""


@dataclass
class DiscreteMeasure:
    """Weighted point cloud on Y x U."""

    points: np.ndarray
    weights: np.ndarray
    d_y: int
    d_u: int

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.d_y < 1 or self.d_u < 1:
            raise TransportError(f"need d_y >= 1 and d_u >= 1, got {self.d_y}, {self.d_u}")
        n, d = self.points.shape
        if d != self.d_y + self.d_u:
            raise TransportError(f"points have dimension {d}, expected d_y + d_u = {self.d_y + self.d_u}")
        if self.weights.shape[0] != n:
            raise TransportError(f"{n} points but {self.weights.shape[0]} weights")
        if np.any(self.weights < 0):
            raise TransportError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > WEIGHT_TOL:
            raise TransportError(f"weights sum to {self.weights.sum():.15g}, expected 1")

    @classmethod
    def uniform(cls, points, d_y: int, d_u: int | None = None) -> "DiscreteMeasure":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if d_u is None:
            d_u = points.shape[1] - d_y
        n = points.shape[0]
        return cls(points, np.full(n, 1.0 / n), d_y, d_u)

    @classmethod
    def from_yu(cls, y, u, weights=None) -> "DiscreteMeasure":
        y = np.asarray(y, dtype=float)
        u = np.asarray(u, dtype=float)
        y = y.reshape(len(y), -1)
        u = u.reshape(len(u), -1)
        points = np.hstack([y, u])
        if weights is None:
            weights = np.full(len(points), 1.0 / len(points))
        return cls(points, weights, y.shape[1], u.shape[1])

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def y(self) -> np.ndarray:
        return self.points[:, : self.d_y]

    @property
    def u(self) -> np.ndarray:
        return self.points[:, self.d_y:]

    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))


@dataclass(frozen=True)
class CostSpec:
    kind: Literal["squared-euclidean", "cot-epsilon"] = "cot-epsilon"
    epsilon: float = 1e-2
    p: int = 2

    def __post_init__(self):
        if self.kind not in ("squared-euclidean", "cot-epsilon"):
            raise TransportError(f"unknown cost kind {self.kind!r}")
        if self.p not in (1, 2):
            raise TransportError(f"p must be 1 or 2, got {self.p}")
        if self.kind == "cot-epsilon" and not self.epsilon > 0:
            raise TransportError(f"epsilon must be positive, got {self.epsilon}")


@dataclass
class CouplingPlan:
    matrix: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    cost_value: float
    converged: bool = True
    n_iter: int = 0
    marginal_error: float = 0.0

    @property
    def shape(self):
        return self.matrix.shape

    def support(self, threshold: float = 0.0):
        """Index pairs (i, j) carrying mass above ``threshold``, in row-major order."""
        rows, cols = np.nonzero(self.matrix > threshold)
        return rows, cols

    def marginal_violation(self) -> float:
        """L1 violation of both marginals."""
        return float(
            np.abs(self.matrix.sum(axis=1) - self.row_marginal).sum()
            + np.abs(self.matrix.sum(axis=0) - self.col_marginal).sum()
        )

    def to_csv(self, path, threshold: float = 0.0) -> None:
        rows, cols = self.support(threshold)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["i", "j", "mass"])
            for i, j in zip(rows, cols):
                writer.writerow([int(i), int(j), repr(float(self.matrix[i, j]))])

    def to_json(self) -> str:
        return json.dumps(
            {
                "matrix": self.matrix.tolist(),
                "row_marginal": self.row_marginal.tolist(),
                "col_marginal": self.col_marginal.tolist(),
                "cost_value": self.cost_value,
                "converged": self.converged,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "CouplingPlan":
        obj = json.loads(text)
        return cls(
            np.asarray(obj["matrix"], dtype=float),
            np.asarray(obj["row_marginal"], dtype=float),
            np.asarray(obj["col_marginal"], dtype=float),
            float(obj["cost_value"]),
            bool(obj.get("converged", True)),
        )


def _pairwise_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # cdist sums squared coordinate differences, so identical points give
    # exactly zero and the matrix is symmetric bit-for-bit when a is b.
    return cdist(a, b, "sqeuclidean")


def _pairwise_norm_pow(a: np.ndarray, b: np.ndarray, p: int) -> np.ndarray:
    sq = _pairwise_sq(a, b)
    return sq if p == 2 else np.sqrt(sq)


def cost_matrix(src: DiscreteMeasure, tgt: DiscreteMeasure, spec: CostSpec = CostSpec()) -> np.ndarray:
    """Pairwise transport costs between the atoms of ``src`` and ``tgt``.

    ``cot-epsilon`` gives ``|y_j - y_i|^p + eps * |u_j - u_i|^p``; the
    ``squared-euclidean`` kind uses the full distance on Y x U raised to p.
    """
    if (src.d_y, src.d_u) != (tgt.d_y, tgt.d_u):
        raise TransportError(
            f"dimension mismatch: src (d_y={src.d_y}, d_u={src.d_u}) vs tgt (d_y={tgt.d_y}, d_u={tgt.d_u})"
        )
    if spec.kind == "squared-euclidean":
        return _pairwise_norm_pow(src.points, tgt.points, spec.p)
    cy = _pairwise_norm_pow(src.y, tgt.y, spec.p)
    cu = _pairwise_norm_pow(src.u, tgt.u, spec.p)
    return cy + spec.epsilon * cu


def _check_problem(cost, a, b):
    cost = np.asarray(cost, dtype=float)
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if cost.ndim != 2 or cost.shape != (a.size, b.size):
        raise TransportError(f"cost shape {cost.shape} does not match marginals ({a.size}, {b.size})")
    if not np.all(np.isfinite(cost)):
        raise TransportError("cost matrix has non-finite entries")
    if np.any(a < 0) or np.any(b < 0):
        raise TransportError("marginals must be nonnegative")
    if abs(a.sum() - b.sum()) > FEASIBILITY_TOL:
        raise TransportError(f"infeasible marginals: masses {a.sum():.12g} and {b.sum():.12g} differ")
    return cost, a, b


def assignment(cost: np.ndarray) -> np.ndarray:
    """Optimal permutation for a square cost matrix; ``perm[i]`` is the column matched to row i."""
    cost = np.asarray(cost, dtype=float)
    if cost.shape[0] * cost.shape[1] > MAX_ASSIGNMENT_SIZE:
        raise TransportError(f"assignment problem of size {cost.shape} exceeds the desk-scale guard")
    _, cols = linear_sum_assignment(cost)
    return cols


def solve_exact(cost, a, b) -> CouplingPlan:
    """Exact minimizer of <cost, plan> over the transportation polytope.

    Uniform square problems are solved as assignments (the optimum is a
    permutation scaled by 1/n); everything else goes to a network simplex.
    """
    cost, a, b = _check_problem(cost, a, b)
    n, m = cost.shape
    if n == m and np.all(a == a[0]) and np.all(b == b[0]):
        cols = assignment(cost)
        plan = np.zeros((n, m))
        plan[np.arange(n), cols] = a
        value = float(cost[np.arange(n), cols].sum() * a[0])
        return CouplingPlan(plan, a, b, value)

    if n * m > MAX_PROBLEM_SIZE:
        raise TransportError(f"problem size {n}x{m} exceeds the desk-scale guard of {MAX_PROBLEM_SIZE}")
    # The simplex needs equal total mass exactly; move the rounding residue onto b.
    b_adj = b * (a.sum() / b.sum())
    plan, log = _network_simplex(a, b_adj, cost, numItermax=max(100_000, 50 * n * m), log=True)
    if log["warning"] is not None:
        raise TransportError(f"network simplex failed: {log['warning']}")
    plan = np.asarray(plan, dtype=float)
    return CouplingPlan(plan, a, b, float(np.sum(plan * cost)))


def _reg_schedule(cost: np.ndarray, reg: float, factor: float = 0.5) -> list[float]:
    start = max(reg, float(np.ptp(cost)))
    schedule = []
    r = start
    while r > reg:
        schedule.append(r)
        r *= factor
    schedule.append(reg)
    return schedule


def solve_sinkhorn(cost, a, b, reg: float, max_iter: int = 10_000, tol: float = 1e-9,
                   eps_scaling: bool = True) -> CouplingPlan:
    """Entropic OT in the log domain, warm-started by annealing the regularization.

    Non-convergence within ``max_iter`` final-stage iterations is reported via
    ``plan.converged`` and a log warning; the last iterate is still returned.
    """
    if not reg > 0:
        raise TransportError(f"reg must be positive, got {reg}")
    if not tol > 0:
        raise TransportError(f"tol must be positive, got {tol}")
    cost, a, b = _check_problem(cost, a, b)
    with np.errstate(divide="ignore"):
        log_a = np.log(a)
        log_b = np.log(b)
    f = np.zeros(a.size)
    g = np.zeros(b.size)

    stages = _reg_schedule(cost, reg) if eps_scaling else [reg]
    n_iter = 0
    converged = False
    err = np.inf
    for stage, r in enumerate(stages):
        final = stage == len(stages) - 1
        budget = max_iter if final else 50
        stage_tol = tol if final else 1e-3
        for _ in range(budget):
            f = r * (log_a - logsumexp((g[None, :] - cost) / r, axis=1))
            g = r * (log_b - logsumexp((f[:, None] - cost) / r, axis=0))
            if final:
                n_iter += 1
            row = np.exp(logsumexp((f[:, None] + g[None, :] - cost) / r, axis=1))
            err = float(np.abs(row - a).sum())
            if err <= stage_tol:
                converged = final
                break

    plan = np.exp((f[:, None] + g[None, :] - cost) / reg)
    result = CouplingPlan(plan, a, b, float(np.sum(plan * cost)), converged=converged, n_iter=n_iter)
    result.marginal_error = result.marginal_violation()
    if not converged:
        logger.warning("sinkhorn did not converge: marginal error %.3g after %d iterations", err, n_iter)
    return result


def sample_pairs(plan: CouplingPlan | np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``k`` i.i.d. index pairs from the plan; returns an int array of shape (k, 2)."""
    if k < 1:
        raise TransportError(f"k must be >= 1, got {k}")
    matrix = plan.matrix if isinstance(plan, CouplingPlan) else np.asarray(plan, dtype=float)
    flat = matrix.ravel()
    total = flat.sum()
    if not total > 0:
        raise TransportError("cannot sample from a plan with no mass")
    idx = rng.choice(flat.size, size=k, p=flat / total)
    return np.stack(np.divmod(idx, matrix.shape[1]), axis=1)


def cot_coupling(src: DiscreteMeasure, tgt: DiscreteMeasure, epsilon: float = 1e-2,
                 method: Literal["exact", "sinkhorn"] = "exact", reg: float = 1e-2,
                 p: int = 2, **solver_kwargs) -> CouplingPlan:
    """Optimal plan for the epsilon-cost; nearly triangular for small epsilon."""
    cost = cost_matrix(src, tgt, CostSpec("cot-epsilon", epsilon, p))
    if method == "exact":
        return solve_exact(cost, src.weights, tgt.weights)
    if method == "sinkhorn":
        return solve_sinkhorn(cost, src.weights, tgt.weights, reg, **solver_kwargs)
    raise TransportError(f"unknown method {method!r}")
