"""Tail inflation plus truncation as a training strategy, on toy stochastic objectives.

The heavy gradient keeps the mean of a small-batch gradient but multiplies
its noise component by a Pareto factor:

    g_heavy = g_SB* + Z (g_SB - g_LB),   Z = c W,  W ~ Pareto(alpha)

and the update clips the whole step, theta <- theta - clip(eta g_heavy, b).
All routines accept a single parameter vector of shape ``(d,)`` or a stack
of independent replicas of shape ``(R, d)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NonFinite
from .landscape import Landscape


class StochasticOracle:
    """Minibatch gradients of a finite-sum (or synthetic-noise) objective.

    Subclasses implement ``grad_batch(theta, rng, size)``, the mean gradient
    over a fresh batch of ``size`` samples drawn with replacement, and
    ``loss``.  ``g_true`` is optional.
    """

    dim: int = 1
    sb_size: int = 8
    lb_size: int = 256

    def grad_batch(self, theta, rng, size):
        raise NotImplementedError

    def loss(self, theta):
        raise NotImplementedError

    def g_true(self, theta):
        return None

    def g_sb(self, theta, rng):
        return self.grad_batch(theta, rng, self.sb_size)

    def g_lb(self, theta, rng):
        return self.grad_batch(theta, rng, self.lb_size)


class LinearRegressionOracle(StochasticOracle):
    """Least squares on synthetic data y = X w + noise, with Gaussian features."""

    def __init__(self, n: int = 2000, dim: int = 5, noise: float = 0.5, sb_size: int = 8,
                 lb_size: int = 256, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.dim = dim
        self.X = rng.standard_normal((n, dim))
        self.w_star = rng.standard_normal(dim)
        self.y = self.X @ self.w_star + noise * rng.standard_normal(n)
        self.sb_size, self.lb_size = sb_size, lb_size

    def grad_batch(self, theta, rng, size):
        theta = np.asarray(theta, dtype=float)
        idx = rng.integers(self.X.shape[0], size=theta.shape[:-1] + (size,))
        xb = self.X[idx]
        resid = np.einsum("...bd,...d->...b", xb, theta) - self.y[idx]
        return np.einsum("...bd,...b->...d", xb, resid) / size

    def g_true(self, theta):
        theta = np.asarray(theta, dtype=float)
        resid = theta @ self.X.T - self.y
        return resid @ self.X / self.X.shape[0]

    def loss(self, theta):
        resid = np.asarray(theta, dtype=float) @ self.X.T - self.y
        return 0.5 * np.mean(resid ** 2, axis=-1)


class LandscapeNoiseOracle(StochasticOracle):
    """A potential with additive Gaussian gradient noise.

    One sample carries noise of standard deviation ``noise``; a batch of m
    samples averages it down to ``noise / sqrt(m)``.
    """

    def __init__(self, landscape: Landscape, noise: float = 1.0, sb_size: int = 1,
                 lb_size: int = 64):
        if landscape.potential is None:
            raise ValueError("the landscape needs a potential for loss evaluation")
        self.landscape = landscape
        self.dim = landscape.dim
        self.noise = noise
        self.sb_size, self.lb_size = sb_size, lb_size

    def g_true(self, theta):
        theta = np.asarray(theta, dtype=float)
        return self.landscape.grad_many(theta).reshape(theta.shape)

    def grad_batch(self, theta, rng, size):
        theta = np.asarray(theta, dtype=float)
        return self.g_true(theta) + self.noise / math.sqrt(size) * rng.standard_normal(theta.shape)

    def loss(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 1:
            return self.landscape.potential(theta)
        return np.array([self.landscape.potential(t) for t in theta])


@dataclass(frozen=True)
class HeavyTrainConfig:
    """Training parameters.

    ``method`` is ``"heavy"`` (inflated and clipped) or ``"sb"`` (clipped
    small-batch SGD, the baseline).  The last ``cooldown`` steps use plain
    large-batch gradient steps without clipping.  ``pareto`` selects the
    family of W: ``"type1"`` (support [1, inf)) or ``"lomax"`` (W - 1).
    ``threshold`` keeps only Z > threshold (Z I{Z > C}).
    """

    eta: float
    b: float = math.inf
    c: float = 1.0
    alpha: float = 1.4
    steps: int = 1000
    cooldown: int = 0
    independent_batches: bool = True
    seed: int = 0
    method: str = "heavy"
    pareto: str = "type1"
    threshold: Optional[float] = None
    box: Optional[tuple] = None
    log_every: int = 1

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("c must be positive")
        if not self.alpha > 1:
            raise ValueError("alpha must exceed 1")
        if not 0 <= self.cooldown <= self.steps:
            raise ValueError("cooldown must lie in [0, steps]")
        if not self.eta > 0 or not self.b > 0:
            raise ValueError("eta and b must be positive")
        if self.method not in ("heavy", "sb"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.pareto not in ("type1", "lomax"):
            raise ValueError(f"unknown Pareto family {self.pareto!r}")


def pareto(rng: np.random.Generator, alpha: float, shape, family: str = "type1") -> np.ndarray:
    """Inverse-CDF Pareto draws: P(W > x) = x^-alpha on [1, inf), or Lomax (W - 1)."""
    w = (1.0 - rng.random(shape)) ** (-1.0 / alpha)
    return w if family == "type1" else w - 1.0


def g_heavy(oracle: StochasticOracle, theta, config: HeavyTrainConfig, rng) -> np.ndarray:
    """g_SB* + Z (g_SB - g_LB) with Z = c Pareto(alpha), one Z per replica."""
    theta = np.asarray(theta, dtype=float)
    g_sb = oracle.g_sb(theta, rng)
    g_star = oracle.g_sb(theta, rng) if config.independent_batches else g_sb
    g_lb = oracle.g_lb(theta, rng)
    z = config.c * pareto(rng, config.alpha, theta.shape[:-1] + (1,), config.pareto)
    if config.threshold is not None:
        z = np.where(z > config.threshold, z, 0.0)
    return g_star + z * (g_sb - g_lb)


def clip_rows(w, b: float):
    """Clip each row (last axis) to norm b; returns (clipped, was_clipped)."""
    w = np.asarray(w, dtype=float)
    norm = np.linalg.norm(w, axis=-1, keepdims=True)
    if not math.isfinite(b):
        return w, np.zeros(norm.shape[:-1], dtype=bool)
    scale = np.where(norm > b, b / np.where(norm > 0, norm, 1.0), 1.0)
    return w * scale, (norm > b)[..., 0]


def _step(oracle, theta, config, rng, cooling):
    theta = np.asarray(theta, dtype=float)
    if cooling:
        new = theta - config.eta * oracle.g_lb(theta, rng)
        flag = np.zeros(theta.shape[:-1], dtype=bool)
    else:
        g = g_heavy(oracle, theta, config, rng) if config.method == "heavy" else oracle.g_sb(theta, rng)
        inc, flag = clip_rows(config.eta * g, config.b)
        new = theta - inc
    if config.box is not None:
        new = np.clip(new, config.box[0], config.box[1])
    if not np.all(np.isfinite(new)):
        raise NonFinite("parameters became non-finite")
    return new, flag


def train_step(oracle: StochasticOracle, theta, config: HeavyTrainConfig, rng,
               cooling: bool = False) -> np.ndarray:
    """One update: theta - clip(eta g, b), or theta - eta g_LB while cooling down."""
    return _step(oracle, theta, config, rng, cooling)[0]


@dataclass
class TrainResult:
    theta: np.ndarray
    log: list = field(default_factory=list)  # rows (step, loss, theta_norm, clipped_flag)


def train(oracle: StochasticOracle, config: HeavyTrainConfig, theta0, rng=None) -> TrainResult:
    """Run ``config.steps`` updates from ``theta0``; the last ``cooldown`` cool down."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    theta = np.asarray(theta0, dtype=float).copy()
    log = []
    start_cool = config.steps - config.cooldown
    for t in range(config.steps):
        theta, flag = _step(oracle, theta, config, rng, t >= start_cool)
        if theta.ndim == 1 and (t + 1) % config.log_every == 0:
            log.append((t + 1, float(oracle.loss(theta)), float(np.linalg.norm(theta)), bool(flag)))
    return TrainResult(theta, log)


def head_to_head(oracle: StochasticOracle, heavy: HeavyTrainConfig, baseline: HeavyTrainConfig,
                 theta0, runs: int, classify: Callable, good) -> dict:
    """Fraction of ``runs`` replicas whose final iterate lands in a ``good`` field.

    Replicas of each method run in lockstep as one ``(runs, d)`` stack.
    """
    out = {}
    good = set(good)
    for name, cfg in (("heavy", heavy), ("baseline", baseline)):
        theta0_stack = np.tile(np.asarray(theta0, dtype=float), (runs, 1))
        res = train(oracle, cfg, theta0_stack)
        labels = [classify(th) for th in res.theta]
        out[name] = float(np.mean([lab in good for lab in labels]))
        out[name + "_labels"] = labels
    return out


def expected_sharpness(loss: Callable, theta, delta: float = 0.01, n_samples: int = 100,
                       loss_cap: float = 5.0, rng=None):
    """Mean of |min(loss(theta + nu), cap) - loss(theta)|, nu ~ N(0, delta^2 I).

    Returns ``(estimate, standard_error)``.
    """
    if n_samples < 2:
        raise ValueError("need at least two samples")
    rng = rng if rng is not None else np.random.default_rng(0)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    base = float(loss(theta))
    vals = np.empty(n_samples)
    for n in range(n_samples):
        pert = theta + delta * rng.standard_normal(theta.shape)
        vals[n] = abs(min(float(loss(pert)), loss_cap) - base)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_samples))


def write_train_log(result: TrainResult, path, header: Optional[str] = None):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["step", "loss", "theta_norm", "clipped_flag"])
        for step, loss, norm, flag in result.log:
            w.writerow([step, repr(loss), repr(norm), int(flag)])
