"""Reference posterior sampling for the Lotka-Volterra problem.

Differential-evolution Metropolis: every chain proposes a jump along the
difference of two other chains' current states,

    x_i' = x_i + gamma * (x_a - x_b) + jitter,

and accepts with the usual Metropolis ratio. All chains move in lockstep
generations; proposals only read the previous generation, so the proposal
is symmetric and detailed balance holds for the product target.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .datasets import LV_NOISE_VAR, LV_PRIOR_MEAN, LV_PRIOR_VAR, lv_simulate

LogDensity = Callable[[np.ndarray], np.ndarray]


def lv_log_posterior(log_params, y_obs, h: float | None = None) -> np.ndarray:
    """Unnormalized log posterior over log-parameters, vectorized over leading rows.

    Prior log u ~ N(m, 0.5 I); likelihood log y ~ N(log z(u), 0.1 I).
    Runs that diverge or hit the positivity floor get -inf.
    """
    log_params = np.asarray(log_params, dtype=float)
    single = log_params.ndim == 1
    lp = np.atleast_2d(log_params)
    y_obs = np.asarray(y_obs, dtype=float).reshape(-1)

    dev = lp - LV_PRIOR_MEAN
    prior = -0.5 * np.sum(dev**2, axis=1) / LV_PRIOR_VAR - 0.5 * lp.shape[1] * np.log(2 * np.pi * LV_PRIOR_VAR)

    out = np.full(len(lp), -np.inf)
    ok = np.all(np.isfinite(lp), axis=1) & np.all(lp < 50, axis=1)
    if np.any(ok):
        kwargs = {} if h is None else {"h": h}
        z, flagged = lv_simulate(np.exp(lp[ok]), **kwargs)
        with np.errstate(divide="ignore", invalid="ignore"):
            resid = np.log(y_obs) - np.log(z)
        loglik = (-0.5 * np.sum(resid**2, axis=1) / LV_NOISE_VAR
                  - 0.5 * y_obs.size * np.log(2 * np.pi * LV_NOISE_VAR))
        loglik[flagged | ~np.isfinite(loglik)] = -np.inf
        out[ok] = prior[ok] + loglik
    return out[0] if single else out


@dataclass
class DeMcConfig:
    n_chains: int = 16
    gamma_scale: float | None = None
    jitter_sd: float = 1e-4
    n_steps: int = 20_000
    burn_in: int = 5_000
    thin: int = 1
    seed: int = 0
    snooker_every: int = 10
    outlier_every: int = 1000

    def __post_init__(self):
        if self.n_chains < 3:
            raise ValueError("need at least 3 chains")
        if not 0 <= self.burn_in < self.n_steps:
            raise ValueError("burn_in must be in [0, n_steps)")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")

    def gamma(self, dim: int) -> float:
        return self.gamma_scale if self.gamma_scale is not None else 2.38 / np.sqrt(2 * dim)


@dataclass
class DeMcResult:
    samples: np.ndarray  # (n_kept, n_chains, dim)
    acceptance: np.ndarray  # per chain, over all generations
    log_prob: np.ndarray  # (n_kept, n_chains)
    proposals: list = field(default_factory=list)

    def flat(self) -> np.ndarray:
        """Post burn-in draws pooled across chains, shape (n_kept * n_chains, dim)."""
        return self.samples.reshape(-1, self.samples.shape[-1])

    def to_csv(self, path) -> None:
        n_kept, n_chains, dim = self.samples.shape
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["draw", "chain"] + [f"x{i}" for i in range(dim)] + ["log_prob"])
            for k in range(n_kept):
                for c in range(n_chains):
                    writer.writerow([k, c] + [repr(float(v)) for v in self.samples[k, c]]
                                    + [repr(float(self.log_prob[k, c]))])


def draw_donors(n_chains: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """For every chain i, a uniformly random ordered pair (a, b) of distinct chains other than i."""
    idx = np.arange(n_chains)
    a = rng.integers(0, n_chains - 1, size=n_chains)
    a += a >= idx
    b = rng.integers(0, n_chains - 2, size=n_chains)
    lo = np.minimum(idx, a)
    hi = np.maximum(idx, a)
    b += b >= lo
    b += b >= hi
    return a, b


def de_mc_sample(logp: LogDensity, cfg: DeMcConfig, init: np.ndarray,
                 record_proposals: bool = False) -> DeMcResult:
    """Run differential-evolution Metropolis chains from ``init`` (n_chains, dim).

    ``logp`` maps an (n_chains, dim) array to n_chains log densities. Every
    ``snooker_every``-th generation uses gamma = 1 so chains can hop between
    modes. During burn-in, every ``outlier_every`` generations, chains whose
    mean log density over the window falls below Q1 - 2 IQR are moved to the
    best chain's state. Returns post-burn-in states (thinned) and per-chain
    acceptance.
    """
    x = np.array(init, dtype=float)
    if x.ndim != 2 or x.shape[0] != cfg.n_chains:
        raise ValueError(f"init must have shape (n_chains={cfg.n_chains}, dim)")
    if len(np.unique(x, axis=0)) != cfg.n_chains:
        raise ValueError("initial chain states must be distinct")
    rng = np.random.default_rng(cfg.seed)
    n, dim = x.shape
    gamma = cfg.gamma(dim)
    lp = np.asarray(logp(x), dtype=float)

    kept = []
    kept_lp = []
    accepted = np.zeros(n)
    proposals = []
    window = np.zeros(n)
    for gen in range(cfg.n_steps):
        g = 1.0 if cfg.snooker_every and (gen + 1) % cfg.snooker_every == 0 else gamma
        a, b = draw_donors(n, rng)
        jump = g * (x[a] - x[b])
        prop = x + jump + cfg.jitter_sd * rng.standard_normal((n, dim))
        lp_prop = np.asarray(logp(prop), dtype=float)
        log_u = np.log(rng.random(n))
        with np.errstate(invalid="ignore"):
            accept = log_u < lp_prop - lp
        # a chain stuck at -inf moves to any finite proposal
        accept |= np.isneginf(lp) & np.isfinite(lp_prop)
        if record_proposals:
            proposals.append({"gen": gen, "a": a.copy(), "b": b.copy(), "gamma": g, "jump": jump,
                              "states": x.copy()})
        x = np.where(accept[:, None], prop, x)
        lp = np.where(accept, lp_prop, lp)
        accepted += accept
        if gen < cfg.burn_in and cfg.outlier_every:
            window += np.where(np.isfinite(lp), lp, -1e300)
            if (gen + 1) % cfg.outlier_every == 0:
                _reset_outliers(x, lp, window / cfg.outlier_every)
                window[:] = 0.0
        if gen >= cfg.burn_in and (gen - cfg.burn_in) % cfg.thin == 0:
            kept.append(x.copy())
            kept_lp.append(lp.copy())
    return DeMcResult(np.array(kept), accepted / cfg.n_steps, np.array(kept_lp), proposals)


def _reset_outliers(x: np.ndarray, lp: np.ndarray, mean_lp: np.ndarray) -> None:
    q1, q3 = np.percentile(mean_lp, [25, 75])
    bad = mean_lp < q1 - 2.0 * (q3 - q1)
    if np.any(bad):
        best = int(np.argmax(lp))
        x[bad] = x[best]
        lp[bad] = lp[best]


def effective_sample_size(chain: np.ndarray) -> float:
    """ESS of a 1-D chain using Geyer's initial positive sequence of autocorrelations."""
    x = np.asarray(chain, dtype=float)
    n = len(x)
    x = x - x.mean()
    var = x.var()
    if var == 0:
        return float(n)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acf = np.fft.irfft(f * np.conj(f), size)[:n] / (n * var)
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(n / max(tau, 1e-12))
