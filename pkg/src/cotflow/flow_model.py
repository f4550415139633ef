"""Triangular vector field, flow-matching loss and the training loop.

The network maps concat(t, y, u) to a velocity for the u-block only; the
y-velocity is identically zero, so integrated trajectories never move y.
Gradients are computed by hand-written reverse-mode differentiation.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np

from .ot_core import DiscreteMeasure, cot_coupling, sample_pairs

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "cotflow-checkpoint/1"

_SELU_ALPHA = 1.6732632423543772
_SELU_SCALE = 1.0507009873554805


def _selu(x):
    return _SELU_SCALE * np.where(x > 0, x, _SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))


def _selu_grad(x):
    return _SELU_SCALE * np.where(x > 0, 1.0, _SELU_ALPHA * np.exp(np.minimum(x, 0.0)))


def _elu(x):
    # alpha = 1 makes ELU continuously differentiable
    return _SELU_SCALE * np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _elu_grad(x):
    return _SELU_SCALE * np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def _tanh_grad(x):
    return 1.0 - np.tanh(x) ** 2


ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "selu": (_selu, _selu_grad),
    "elu": (_elu, _elu_grad),
    "tanh": (np.tanh, _tanh_grad),
}


@dataclass
class VectorFieldParams:
    """Weights of the fully connected field; layer k computes ``h @ W[k] + b[k]``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    d_y: int
    d_u: int
    activation: str = "selu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        if self.weights[0].shape[0] != 1 + self.d_y + self.d_u:
            raise ValueError("first layer must take concat(t, y, u)")
        if self.weights[-1].shape[1] != self.d_u:
            raise ValueError("output layer must have d_u units")

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "VectorFieldParams":
        return VectorFieldParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                                 self.d_y, self.d_u, self.activation)

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "VectorFieldParams":
        return VectorFieldParams([fn(w) for w in self.weights], [fn(b) for b in self.biases],
                                 self.d_y, self.d_u, self.activation)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> "VectorFieldParams":
        out = self.copy()
        offset = 0
        for a in out.arrays():
            a[...] = vec[offset:offset + a.size].reshape(a.shape)
            offset += a.size
        return out

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def to_dict(self) -> dict:
        return {
            "d_y": self.d_y,
            "d_u": self.d_u,
            "activation": self.activation,
            "layer_shapes": [list(w.shape) for w in self.weights],
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "VectorFieldParams":
        weights = [np.asarray(w, dtype=float).reshape(shape) for w, shape in zip(obj["weights"], obj["layer_shapes"])]
        biases = [np.asarray(b, dtype=float) for b in obj["biases"]]
        return cls(weights, biases, obj["d_y"], obj["d_u"], obj.get("activation", "selu"))


def _truncated_normal(rng: np.random.Generator, shape, bound: float = 2.0) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while np.any(bad):
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out


def init_params(d_y: int, d_u: int, width: int = 256, depth: int = 4, activation: str = "selu",
                rng: np.random.Generator | int | None = 0, zero_last: bool = True) -> VectorFieldParams:
    """Truncated-normal weights scaled by 1/sqrt(fan_in); the last layer starts at zero.

    ``depth`` counts linear layers, so there are ``depth - 1`` hidden layers.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    rng = np.random.default_rng(rng)
    sizes = [1 + d_y + d_u] + [width] * (depth - 1) + [d_u]
    weights, biases = [], []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = k == depth - 1
        if last and zero_last:
            weights.append(np.zeros((fan_in, fan_out)))
        else:
            weights.append(_truncated_normal(rng, (fan_in, fan_out)) / np.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return VectorFieldParams(weights, biases, d_y, d_u, activation)


def _inputs(params: VectorFieldParams, t, y, u) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    y = y.reshape(-1, params.d_y)
    u = u.reshape(-1, params.d_u)
    n = max(len(y), len(u))
    if len(y) not in (1, n) or len(u) not in (1, n):
        raise ValueError(f"batch size mismatch: y has {len(y)} rows, u has {len(u)}")
    t = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1, 1), (n, 1))
    return np.hstack([t, np.broadcast_to(y, (n, params.d_y)), np.broadcast_to(u, (n, params.d_u))])


def _run(params: VectorFieldParams, x: np.ndarray, keep: bool = False):
    act, _ = ACTIVATIONS[params.activation]
    cache = []
    h = x
    last = params.depth - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W + b
        if keep:
            cache.append((h, z))
        h = z if k == last else act(z)
    return h, cache


def u_velocity(params: VectorFieldParams, t, y, u) -> np.ndarray:
    """Network output: the u-block of the velocity, shape (n, d_u)."""
    x = _inputs(params, t, y, u)
    out, _ = _run(params, x)
    return out


def forward(params: VectorFieldParams, t, y, u) -> np.ndarray:
    """Full velocity on Y x U with the y-block set to exactly zero.

    Accepts single points (1-D ``y``/``u``) or batches; a single point returns
    a 1-D vector of length d_y + d_u.
    """
    single = np.ndim(y) <= 1 and np.ndim(u) <= 1
    vu = u_velocity(params, t, y, u)
    out = np.zeros((vu.shape[0], params.d_y + params.d_u))
    out[:, params.d_y:] = vu
    return out[0] if single else out


@dataclass
class PathSample:
    t: float
    z_t: np.ndarray
    target_v: np.ndarray


@dataclass
class PathBatch:
    t: np.ndarray
    z: np.ndarray
    target: np.ndarray

    def __len__(self):
        return len(self.t)

    @classmethod
    def from_samples(cls, samples: Sequence[PathSample]) -> "PathBatch":
        if not samples:
            raise ValueError("empty batch")
        return cls(np.array([s.t for s in samples], dtype=float),
                   np.vstack([s.z_t for s in samples]),
                   np.vstack([s.target_v for s in samples]))


def sample_path_point(z0, z1, t: float, sigma: float, rng: np.random.Generator) -> PathSample:
    """Draw z_t ~ N(t z1 + (1 - t) z0, sigma^2 I) with regression target z1 - z0."""
    z0 = np.asarray(z0, dtype=float)
    z1 = np.asarray(z1, dtype=float)
    if z0.shape != z1.shape:
        raise ValueError(f"endpoint shapes differ: {z0.shape} vs {z1.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    mean = t * z1 + (1.0 - t) * z0
    z_t = mean + sigma * rng.standard_normal(z0.shape) if sigma > 0 else mean
    return PathSample(float(t), z_t, z1 - z0)


def sample_path_batch(z0: np.ndarray, z1: np.ndarray, t: np.ndarray, sigma: float,
                      rng: np.random.Generator) -> PathBatch:
    """Vectorized :func:`sample_path_point` over rows of ``z0``/``z1``."""
    if z0.shape != z1.shape:
        raise ValueError(f"endpoint shapes differ: {z0.shape} vs {z1.shape}")
    t = np.asarray(t, dtype=float).reshape(-1)
    mean = t[:, None] * z1 + (1.0 - t[:, None]) * z0
    z_t = mean + sigma * rng.standard_normal(z0.shape) if sigma > 0 else mean
    return PathBatch(t, z_t, z1 - z0)


def _split(params: VectorFieldParams, batch: PathBatch):
    if len(batch) == 0:
        raise ValueError("empty batch")
    y = batch.z[:, : params.d_y]
    u = batch.z[:, params.d_y:]
    return _inputs(params, batch.t, y, u), batch.target[:, params.d_y:]


def fm_loss(params: VectorFieldParams, batch: PathBatch) -> float:
    """Mean squared error of the u-velocity against ``target_v`` (u-block only)."""
    x, target = _split(params, batch)
    out, _ = _run(params, x)
    return float(np.mean(np.sum((out - target) ** 2, axis=1)))


def value_and_grad(params: VectorFieldParams, batch: PathBatch) -> tuple[float, VectorFieldParams]:
    x, target = _split(params, batch)
    # overflow is reported through the explicit finiteness checks below
    with np.errstate(over="ignore", invalid="ignore"):
        return _value_and_grad(params, x, target)


def _value_and_grad(params: VectorFieldParams, x: np.ndarray, target: np.ndarray):
    out, cache = _run(params, x, keep=True)
    resid = out - target
    loss = float(np.mean(np.sum(resid**2, axis=1)))
    _, act_grad = ACTIVATIONS[params.activation]

    dW = [None] * params.depth
    db = [None] * params.depth
    delta = 2.0 * resid / len(x)
    for k in range(params.depth - 1, -1, -1):
        h, z = cache[k]
        if k != params.depth - 1:
            delta = delta * act_grad(z)
        dW[k] = h.T @ delta
        db[k] = delta.sum(axis=0)
        if not (np.all(np.isfinite(dW[k])) and np.all(np.isfinite(db[k]))):
            raise FloatingPointError(f"non-finite gradient in layer {k}")
        if k:
            delta = delta @ params.weights[k].T
    return loss, VectorFieldParams(dW, db, params.d_y, params.d_u, params.activation)


def grad(params: VectorFieldParams, batch: PathBatch) -> VectorFieldParams:
    """Exact gradient of :func:`fm_loss` with respect to every weight and bias."""
    return value_and_grad(params, batch)[1]


@dataclass
class AdamState:
    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def init(cls, params: VectorFieldParams) -> "AdamState":
        return cls(0, [np.zeros_like(a) for a in params.arrays()], [np.zeros_like(a) for a in params.arrays()])


def adam_step(params: VectorFieldParams, grads: VectorFieldParams, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns new ``(params, state)`` without mutating inputs."""
    step = state.step + 1
    new = params.copy()
    m_out, v_out = [], []
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    for p, g, m, v in zip(new.arrays(), grads.arrays(), state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        m_out.append(m)
        v_out.append(v)
    return new, AdamState(step, m_out, v_out)


@dataclass
class Standardizer:
    """Per-coordinate affine map to zero mean / unit variance on Y x U."""

    shift: np.ndarray
    scale: np.ndarray
    d_y: int

    @classmethod
    def identity(cls, d_y: int, d_u: int) -> "Standardizer":
        return cls(np.zeros(d_y + d_u), np.ones(d_y + d_u), d_y)

    @classmethod
    def fit(cls, points: np.ndarray, d_y: int) -> "Standardizer":
        points = np.asarray(points, dtype=float)
        scale = points.std(axis=0)
        scale[scale == 0] = 1.0
        return cls(points.mean(axis=0), scale, d_y)

    def transform(self, points):
        return (np.asarray(points, dtype=float) - self.shift) / self.scale

    def transform_y(self, y):
        return (np.asarray(y, dtype=float) - self.shift[: self.d_y]) / self.scale[: self.d_y]

    def inverse_u(self, u):
        return np.asarray(u, dtype=float) * self.scale[self.d_y:] + self.shift[self.d_y:]

    def to_dict(self) -> dict:
        return {"shift": self.shift.tolist(), "scale": self.scale.tolist(), "d_y": self.d_y}

    @classmethod
    def from_dict(cls, obj: dict) -> "Standardizer":
        return cls(np.asarray(obj["shift"], dtype=float), np.asarray(obj["scale"], dtype=float), obj["d_y"])


@dataclass
class TrainConfig:
    sigma: float = 1e-2
    epsilon: float = 1e-2
    batch_size: int = 512
    steps: int = 10_000
    learning_rate: float = 3e-4
    seed: int = 0
    coupling: Literal["cot-exact", "cot-sinkhorn", "independent"] = "cot-exact"
    sinkhorn_reg: float = 1e-2
    width: int = 256
    depth: int = 4
    activation: str = "selu"
    full_plan_max: int = 4096
    log_every: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if self.coupling not in ("cot-exact", "cot-sinkhorn", "independent"):
            raise ValueError(f"unknown coupling {self.coupling!r}")


@dataclass
class TrainResult:
    params: VectorFieldParams
    losses: np.ndarray
    standardizer: Standardizer
    config: TrainConfig
    extra: dict = field(default_factory=dict)

    def save(self, path) -> None:
        save_checkpoint(path, self.params, self.standardizer, self.config, self.extra)

    def write_losses(self, path) -> None:
        write_loss_csv(path, self.losses)


Sampler = Callable[[int, np.random.Generator], np.ndarray]


def array_sampler(points: np.ndarray) -> Sampler:
    """Sampler drawing rows of ``points`` uniformly without replacement per call."""
    points = np.asarray(points, dtype=float)

    def draw(n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(len(points), size=n, replace=n > len(points))
        return points[idx]

    return draw


def _pairs_for_batch(x0: np.ndarray, x1: np.ndarray, d_y: int, cfg: TrainConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    n = len(x0)
    if cfg.coupling == "independent":
        idx = np.arange(n)
        return idx, idx
    method = "exact" if cfg.coupling == "cot-exact" else "sinkhorn"
    plan = cot_coupling(DiscreteMeasure.uniform(x0, d_y), DiscreteMeasure.uniform(x1, d_y),
                        cfg.epsilon, method=method, reg=cfg.sinkhorn_reg)
    pairs = sample_pairs(plan, n, rng)
    return pairs[:, 0], pairs[:, 1]


def train(source: Sampler | np.ndarray, target: Sampler | np.ndarray, cfg: TrainConfig, d_y: int,
          standardizer: Standardizer | None = None,
          callback: Callable[[int, float, VectorFieldParams], None] | None = None) -> TrainResult:
    """Fit the triangular field by flow matching with COT (or independent) couplings.

    ``source`` and ``target`` are samplers ``(n, rng) -> (n, d_y + d_u)`` or fixed
    arrays. When both are arrays no larger than ``cfg.full_plan_max`` the coupling
    is computed once on the full sets; otherwise a fresh plan is solved per
    minibatch. With a standardizer, targets are mapped to model coordinates and
    source y's use the same y-map; source u's are taken as already in model
    coordinates (the Gaussian source lives there).
    """
    rng = np.random.default_rng(cfg.seed)
    scaler = standardizer
    both_arrays = not callable(source) and not callable(target)

    probe = target if not callable(target) else target(2, np.random.default_rng([cfg.seed, 1]))
    d = np.asarray(probe).shape[1]
    d_u = d - d_y
    if scaler is None:
        scaler = Standardizer.identity(d_y, d_u)

    def to_model_source(x):
        x = np.array(x, dtype=float)
        x[:, :d_y] = scaler.transform_y(x[:, :d_y])
        return x

    params = init_params(d_y, d_u, cfg.width, cfg.depth, cfg.activation, rng)
    state = AdamState.init(params)
    losses = np.empty(cfg.steps)

    full_plan = None
    if both_arrays:
        src_arr = to_model_source(source)
        tgt_arr = scaler.transform(target)
        if cfg.coupling != "independent" and max(len(src_arr), len(tgt_arr)) <= cfg.full_plan_max:
            method = "exact" if cfg.coupling == "cot-exact" else "sinkhorn"
            full_plan = cot_coupling(DiscreteMeasure.uniform(src_arr, d_y), DiscreteMeasure.uniform(tgt_arr, d_y),
                                     cfg.epsilon, method=method, reg=cfg.sinkhorn_reg)
        draw_src, draw_tgt = array_sampler(src_arr), array_sampler(tgt_arr)
    else:
        draw_src = (lambda n, r: to_model_source(source(n, r))) if callable(source) else array_sampler(to_model_source(source))
        draw_tgt = (lambda n, r: scaler.transform(target(n, r))) if callable(target) else array_sampler(scaler.transform(target))

    for step in range(cfg.steps):
        if full_plan is not None:
            pairs = sample_pairs(full_plan, cfg.batch_size, rng)
            z0, z1 = src_arr[pairs[:, 0]], tgt_arr[pairs[:, 1]]
        else:
            x0 = draw_src(cfg.batch_size, rng)
            x1 = draw_tgt(cfg.batch_size, rng)
            i0, i1 = _pairs_for_batch(x0, x1, d_y, cfg, rng)
            z0, z1 = x0[i0], x1[i1]
        t = rng.random(len(z0))
        batch = sample_path_batch(z0, z1, t, cfg.sigma, rng)
        loss, g = value_and_grad(params, batch)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at step {step}")
        params, state = adam_step(params, g, state, cfg.learning_rate)
        losses[step] = loss
        if cfg.log_every and step % cfg.log_every == 0:
            logger.info("step %d loss %.5f", step, loss)
        if callback is not None:
            callback(step, loss, params)
    return TrainResult(params, losses, scaler, cfg)


def save_checkpoint(path, params: VectorFieldParams, standardizer: Standardizer | None = None,
                    config: TrainConfig | None = None, extra: dict | None = None) -> None:
    obj = {
        "format": CHECKPOINT_FORMAT,
        "params": params.to_dict(),
        "standardizer": standardizer.to_dict() if standardizer is not None else None,
        "config": asdict(config) if config is not None else None,
        "seed": config.seed if config is not None else None,
        "extra": extra or {},
    }
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_checkpoint(path) -> tuple[VectorFieldParams, Standardizer, dict]:
    with open(path) as fh:
        obj = json.load(fh)
    if obj.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {obj.get('format')!r}")
    params = VectorFieldParams.from_dict(obj["params"])
    scaler = (Standardizer.from_dict(obj["standardizer"]) if obj.get("standardizer")
              else Standardizer.identity(params.d_y, params.d_u))
    return params, scaler, obj


def write_loss_csv(path, losses) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for step, loss in enumerate(losses):
            writer.writerow([step, repr(float(loss))])
