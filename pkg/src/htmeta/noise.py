"""Regularly varying noise laws and the time-scaling functions built on them."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import erfc

from .errors import ConfigError, Unsupported


@dataclass(frozen=True)
class NoiseModel:
    """Law of the noise vector Z.

    kind is one of ``"lomax"`` (Z = c0 * U * W in 1-D, U a fair sign and W
    standard Lomax with P(W > x) = (1 + x)^-alpha), ``"gaussian"`` (iid
    N(0, std^2) coordinates, light tailed) or ``"radial"`` (radius from
    ``radial`` times a direction from ``spherical``).  ``zero`` gives the
    noiseless model.
    """

    kind: str
    alpha: float = math.inf
    c0: float = 1.0
    std: float = 1.0
    dim: int = 1
    radial: Optional[Callable] = None  # (rng, n) -> radii
    spherical: Optional[Callable] = None  # (rng, n) -> unit vectors (n, dim)
    tail: Optional[Callable] = None  # x -> P(|Z| > x)
    p_plus: float = 0.5

    @property
    def heavy_tailed(self) -> bool:
        return self.kind in ("lomax", "radial") and math.isfinite(self.alpha)

    def sample_block(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` iid draws as an ``(n, dim)`` array."""
        if self.kind == "lomax":
            v = 1.0 - rng.random(n)  # uniform on (0, 1]
            w = v ** (-1.0 / self.alpha) - 1.0
            u = np.where(rng.random(n) < self.p_plus, 1.0, -1.0)
            return (self.c0 * u * w).reshape(n, 1)
        if self.kind == "gaussian":
            return self.std * rng.standard_normal((n, self.dim))
        if self.kind == "radial":
            r = np.asarray(self.radial(rng, n), dtype=float)
            s = np.asarray(self.spherical(rng, n), dtype=float).reshape(n, self.dim)
            return r[:, None] * s
        if self.kind == "zero":
            return np.zeros((n, self.dim))
        raise Unsupported(f"unknown noise kind {self.kind!r}")


def symmetric_lomax(c0: float = 0.1, alpha: float = 1.2) -> NoiseModel:
    if alpha <= 1:
        raise ValueError("tail index must exceed 1 so that E Z = 0 is defined")
    return NoiseModel("lomax", alpha=alpha, c0=c0)


def gaussian(std: float = 1.0, dim: int = 1) -> NoiseModel:
    return NoiseModel("gaussian", std=std, dim=dim)


def zero_noise(dim: int = 1) -> NoiseModel:
    return NoiseModel("zero", dim=dim)


def uniform_sphere(dim):
    def draw(rng, n):
        v = rng.standard_normal((n, dim))
        return v / np.linalg.norm(v, axis=1, keepdims=True)
    return draw


def isotropic_lomax(dim: int, c0: float = 0.1, alpha: float = 1.2) -> NoiseModel:
    """Radius c0 * Lomax(alpha) with a uniformly distributed direction."""

    def radial(rng, n):
        return c0 * ((1.0 - rng.random(n)) ** (-1.0 / alpha) - 1.0)

    return NoiseModel("radial", alpha=alpha, c0=c0, dim=dim, radial=radial,
                      spherical=uniform_sphere(dim), tail=lambda x: (1.0 + x / c0) ** -alpha)


def sample(model: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    """One draw of Z as a vector of length ``model.dim``."""
    return model.sample_block(rng, 1)[0]


def tail_h(model: NoiseModel, x: float) -> float:
    """P(|Z| > x)."""
    if x <= 0:
        raise ValueError("tail is evaluated at x > 0")
    if model.kind == "lomax":
        return (1.0 + x / model.c0) ** (-model.alpha)
    if model.kind == "gaussian":
        if model.dim != 1:
            raise Unsupported("closed-form Gaussian tail is implemented for d = 1")
        return float(erfc(x / (model.std * math.sqrt(2.0))))
    if model.kind == "zero":
        return 0.0
    if model.tail is None:
        raise Unsupported("radial noise without a supplied tail function")
    return float(model.tail(x))


def lambda_scale(model: NoiseModel, eta: float) -> float:
    """lambda(eta) = H(1/eta) / eta."""
    if not model.heavy_tailed:
        raise Unsupported("time scaling needs a heavy-tailed noise model")
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    return tail_h(model, 1.0 / eta) / eta


def lambda_star(model: NoiseModel, eta: float, j_star: int) -> float:
    """eta * lambda(eta)^j_star, the clock of the metastable limit."""
    if j_star < 1:
        raise ValueError("j_star must be a positive integer")
    return eta * lambda_scale(model, eta) ** j_star


def nu_alpha_half(alpha: float, lo: float, hi: float = math.inf) -> float:
    """Mass of one sign half of the limit measure on magnitudes in [lo, hi).

    The full measure has nu[x, inf) = x^-alpha split evenly between the two
    directions of the line.
    """
    if lo <= 0:
        return math.inf
    upper = 0.0 if not math.isfinite(hi) else hi ** (-alpha)
    return 0.5 * (lo ** (-alpha) - upper)


def noise_from_spec(spec: dict) -> NoiseModel:
    kind = spec.get("kind")
    try:
        if kind == "lomax":
            return symmetric_lomax(float(spec.get("c0", 0.1)), float(spec.get("alpha", 1.2)))
        if kind == "gaussian":
            return gaussian(float(spec.get("std", 1.0)))
        if kind == "zero":
            return zero_noise()
    except ValueError as exc:
        raise ConfigError(f"bad noise spec: {exc}") from None
    raise ConfigError(f"unknown noise kind {kind!r}")
