"""Conditional Wasserstein distances and their geodesics.

The conditional distance between two joints with a common Y-marginal mu is
the mu-average of Wasserstein distances between the conditionals u | y.
It equals the optimal cost over couplings that never move y, which we
approximate with the epsilon-cost plan from :mod:`cotflow.ot_core`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .ot_core import CouplingPlan, DiscreteMeasure, TransportError, cot_coupling

EIG_FLOOR = 1e-12
MARGINAL_MATCH_TOL = 1e-10


@dataclass
class GaussianJoint:
    """Joint Gaussian on Y x U described by block mean and covariance."""

    m_y: np.ndarray
    m_u: np.ndarray
    Sigma_yy: np.ndarray
    Sigma_yu: np.ndarray
    Sigma_uu: np.ndarray
    Sigma_uy: np.ndarray | None = None

    def __post_init__(self):
        self.m_y = np.atleast_1d(np.asarray(self.m_y, dtype=float))
        self.m_u = np.atleast_1d(np.asarray(self.m_u, dtype=float))
        d_y, d_u = self.m_y.size, self.m_u.size
        self.Sigma_yy = np.asarray(self.Sigma_yy, dtype=float).reshape(d_y, d_y)
        self.Sigma_yu = np.asarray(self.Sigma_yu, dtype=float).reshape(d_y, d_u)
        self.Sigma_uu = np.asarray(self.Sigma_uu, dtype=float).reshape(d_u, d_u)
        if self.Sigma_uy is None:
            self.Sigma_uy = self.Sigma_yu.T.copy()
        self.Sigma_uy = np.asarray(self.Sigma_uy, dtype=float).reshape(d_u, d_y)
        if not np.allclose(self.Sigma_uy, self.Sigma_yu.T, rtol=0, atol=1e-12):
            raise ValueError("Sigma_uy must be the transpose of Sigma_yu")
        cov = self.covariance
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
            raise ValueError("covariance is not symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc

    @property
    def d_y(self) -> int:
        return self.m_y.size

    @property
    def d_u(self) -> int:
        return self.m_u.size

    @property
    def mean(self) -> np.ndarray:
        return np.concatenate([self.m_y, self.m_u])

    @property
    def covariance(self) -> np.ndarray:
        return np.block([[self.Sigma_yy, self.Sigma_yu], [self.Sigma_uy, self.Sigma_uu]])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` joint points with the y-block first."""
        chol = np.linalg.cholesky(self.covariance)
        return self.mean + rng.standard_normal((n, self.d_y + self.d_u)) @ chol.T

    def conditional(self, y) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of u | y."""
        gain = linalg.solve(self.Sigma_yy, self.Sigma_yu, assume_a="pos").T
        mean = self.m_u + gain @ (np.atleast_1d(y) - self.m_y)
        return mean, self.Sigma_uu - gain @ self.Sigma_yu

    def to_dict(self) -> dict:
        return {
            "m_y": self.m_y.tolist(),
            "m_u": self.m_u.tolist(),
            "Sigma_yy": self.Sigma_yy.tolist(),
            "Sigma_yu": self.Sigma_yu.tolist(),
            "Sigma_uu": self.Sigma_uu.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "GaussianJoint":
        return cls(obj["m_y"], obj["m_u"], obj["Sigma_yy"], obj["Sigma_yu"], obj["Sigma_uu"],
                   obj.get("Sigma_uy"))

    @classmethod
    def from_json(cls, text: str) -> "GaussianJoint":
        return cls.from_dict(json.loads(text))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def sqrtm_psd(mat: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    """Symmetric square root via eigendecomposition, eigenvalues floored at ``floor``."""
    mat = 0.5 * (mat + mat.T)
    vals, vecs = np.linalg.eigh(mat)
    vals = np.maximum(vals, floor)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _bures_trace(Q1: np.ndarray, Q2: np.ndarray) -> float:
    root = sqrtm_psd(Q1)
    cross = sqrtm_psd(root @ Q2 @ root)
    return float(np.trace(Q1 + Q2 - 2.0 * cross))


def gaussian_cw2_squared(eta: GaussianJoint, nu: GaussianJoint) -> float:
    """Squared conditional 2-Wasserstein distance between two Gaussian joints.

    Both joints must share the Y-marginal N(m_y, Sigma_yy). With
    Q = Sigma_uu - Sigma_uy Sigma_yy^{-1} Sigma_yu the conditional covariance
    and R = (Sigma_uy^eta - Sigma_uy^nu) Sigma_yy^{-1} the difference of the
    regression gains, the distance is the Bures distance between the Q's plus
    the mean gap and the extra Tr(R Sigma_yy R^T) term.
    """
    if eta.d_y != nu.d_y or eta.d_u != nu.d_u:
        raise ValueError("Gaussian joints live on different spaces")
    if (np.max(np.abs(eta.m_y - nu.m_y)) > MARGINAL_MATCH_TOL
            or np.max(np.abs(eta.Sigma_yy - nu.Sigma_yy)) > MARGINAL_MATCH_TOL):
        raise ValueError("Y-marginals differ; the conditional distance is undefined")
    sigma = eta.Sigma_yy
    inv_sigma_yu_eta = linalg.solve(sigma, eta.Sigma_yu, assume_a="pos")
    inv_sigma_yu_nu = linalg.solve(sigma, nu.Sigma_yu, assume_a="pos")
    Q_eta = eta.Sigma_uu - eta.Sigma_uy @ inv_sigma_yu_eta
    Q_nu = nu.Sigma_uu - nu.Sigma_uy @ inv_sigma_yu_nu
    # R Sigma R^T with R = (S21^eta - S21^nu) Sigma^{-1}
    diff = eta.Sigma_uy - nu.Sigma_uy
    r_sigma_rt = diff @ linalg.solve(sigma, diff.T, assume_a="pos")
    dm = eta.m_u - nu.m_u
    return float(dm @ dm + _bures_trace(Q_eta, Q_nu) + np.trace(r_sigma_rt))


@dataclass
class CWEstimate:
    """Result of the empirical conditional Wasserstein estimator."""

    value: float
    u_cost: float
    eps_cost: float
    y_slack: float
    plan: CouplingPlan


def _norm_pow(diff: np.ndarray, p: int) -> np.ndarray:
    sq = np.einsum("ijk,ijk->ij", diff, diff) if diff.ndim == 3 else np.sum(diff * diff, axis=-1)
    return sq if p == 2 else np.sqrt(sq)


def cw_estimate(src: DiscreteMeasure, tgt: DiscreteMeasure, p: int = 2, epsilon: float = 1e-6,
                method: str = "exact", reg: float = 1e-2) -> CWEstimate:
    """Estimate W_p^mu from the epsilon-cost plan.

    The estimate is the U-only displacement cost of the plan, raised to 1/p.
    The raw epsilon-cost optimum is reported alongside, as is the largest
    |y_0 - y_1| over supported pairs (zero when the plan is triangular).
    """
    if not epsilon > 0:
        raise TransportError(f"epsilon must be positive, got {epsilon}")
    plan = cot_coupling(src, tgt, epsilon, method=method, reg=reg, p=p)
    rows, cols = plan.support()
    mass = plan.matrix[rows, cols]
    u_cost = float(np.sum(mass * _norm_pow(tgt.u[cols] - src.u[rows], p)))
    y_slack = float(np.max(np.abs(tgt.y[cols] - src.y[rows]))) if rows.size else 0.0
    return CWEstimate(u_cost ** (1.0 / p), u_cost, plan.cost_value, y_slack, plan)


def empirical_cw(src: DiscreteMeasure, tgt: DiscreteMeasure, p: int = 2, epsilon: float = 1e-6,
                 method: str = "exact", reg: float = 1e-2) -> float:
    """Empirical conditional p-Wasserstein distance (see :func:`cw_estimate`)."""
    return cw_estimate(src, tgt, p, epsilon, method, reg).value


@dataclass
class InterpolantPath:
    """Displacement interpolation along a coupling between ``src`` and ``tgt``."""

    src: DiscreteMeasure
    tgt: DiscreteMeasure
    coupling: CouplingPlan
    t_grid: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)

    def __post_init__(self):
        if self.coupling.shape != (self.src.n, self.tgt.n):
            raise ValueError("coupling shape does not match the endpoint measures")
        self._rows, self._cols = self.coupling.support()

    @classmethod
    def from_measures(cls, src: DiscreteMeasure, tgt: DiscreteMeasure, epsilon: float = 1e-8,
                      method: str = "exact", **kwargs) -> "InterpolantPath":
        return cls(src, tgt, cot_coupling(src, tgt, epsilon, method=method), **kwargs)

    @property
    def y_slack(self) -> float:
        if self._rows.size == 0:
            return 0.0
        return float(np.max(np.abs(self.tgt.y[self._cols] - self.src.y[self._rows])))

    @property
    def pair_masses(self) -> np.ndarray:
        return self.coupling.matrix[self._rows, self._cols]

    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        return self.src.points[self._rows], self.tgt.points[self._cols]

    def pushed_points(self, t: float) -> np.ndarray:
        """Positions ``(1 - t) z0 + t z1`` of every supported pair."""
        _check_time(t)
        z0, z1 = self.endpoints()
        return (1.0 - t) * z0 + t * z1


def _check_time(t: float) -> None:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")


def merge_atoms(points: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Combine exactly coincident atoms, summing their weights (lexicographic order)."""
    uniq, inverse = np.unique(points, axis=0, return_inverse=True)
    merged = np.zeros(len(uniq))
    np.add.at(merged, inverse.reshape(-1), weights)
    return uniq, merged


def mccann_interpolate(path: InterpolantPath, t: float) -> DiscreteMeasure:
    """The interpolated measure at time ``t``; equals src at 0 and tgt at 1."""
    points = path.pushed_points(t)
    pts, w = merge_atoms(points, path.pair_masses)
    return DiscreteMeasure(pts, w / w.sum(), path.src.d_y, path.src.d_u)


def interpolant_velocity(path: InterpolantPath, t: float) -> np.ndarray:
    """Velocity ``(0, u1 - u0)`` of each pushed pair, aligned with :meth:`InterpolantPath.pushed_points`."""
    _check_time(t)
    z0, z1 = path.endpoints()
    vel = z1 - z0
    vel[:, : path.src.d_y] = 0.0
    return vel


def counterexample_measures(k: int, u0: float = 1.0, y0: float = 0.0, y1: float = 1.0):
    """Pair (eta_k, nu_k) whose conditional distance k|u0| grows while the joint distance stays <= |y1 - y0|.

    eta_k = (d(y0, u0) + d(y1, u_k)) / 2 and nu_k = (d(y1, u0) + d(y0, u_k)) / 2
    with u_k = (k + 1) u0.
    """
    if k < 1 or u0 == 0 or y0 == y1:
        raise ValueError("need k >= 1, u0 != 0 and y0 != y1")
    uk = (k + 1) * u0
    eta = DiscreteMeasure.from_yu([y0, y1], [u0, uk])
    nu = DiscreteMeasure.from_yu([y1, y0], [u0, uk])
    return eta, nu
