"""Multimodal potentials, their gradient flow and attraction fields.

Field labels are 1-based (``1..K``) to match the usual ``m_1, ..., m_K``
numbering of local minima; ``BOUNDARY`` (0) marks points that belong to no
open field.  Arrays indexed by field (rate matrices, widths) are plain
0-based numpy arrays, so field ``i`` lives at position ``i - 1``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numba
import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import ConfigError, NonFinite

BOUNDARY = 0

FOUR_WELL_MINIMA = (-1.51, -0.66, 0.49, 1.32)
FOUR_WELL_BOUNDARIES = (-1.3, 0.2, 0.7)
FOUR_WELL_BOX = (-1.6, 1.6)
FD_H = 1e-6

# kernel codes understood by ``grad_1d``
KIND_FOUR_WELL = 0
KIND_POLY = 1
KIND_SPLINE = 2


@numba.njit(cache=True)
def _four_well_f(x):
    return (
        (x + 1.6) * (x + 1.3) ** 2 * (x - 0.2) ** 2 * (x - 0.7) ** 2 * (x - 1.6)
        * (0.05 * abs(1.65 - x)) ** 0.6
        * (1.0 + 1.0 / (0.01 + 4.0 * (x - 0.5) ** 2))
        * (1.0 + 1.0 / (0.1 + 4.0 * (x + 1.5) ** 2))
        * (1.0 - 0.25 * math.exp(-5.0 * (x + 0.8) ** 2))
    )


@numba.njit(cache=True)
def grad_1d(kind, params, x):
    """Scalar derivative f'(x) for the compiled 1-D landscape kinds."""
    if kind == KIND_FOUR_WELL:
        h = params[0]
        return (_four_well_f(x + h) - _four_well_f(x - h)) / (2.0 * h)
    elif kind == KIND_POLY:
        # params = derivative coefficients, highest degree first
        acc = 0.0
        for c in params:
            acc = acc * x + c
        return acc
    else:
        # params = [n, breaks(n), c0(n-1), c1(n-1), c2(n-1)] of a cubic spline
        n = int(params[0])
        breaks = params[1:1 + n]
        j = np.searchsorted(breaks, x) - 1
        if j < 0:
            j = 0
        elif j > n - 2:
            j = n - 2
        dx = x - breaks[j]
        base = 1 + n
        c0 = params[base + j]
        c1 = params[base + (n - 1) + j]
        c2 = params[base + 2 * (n - 1) + j]
        return (3.0 * c0 * dx + 2.0 * c1) * dx + c2


@numba.njit(cache=True)
def grad_1d_many(kind, params, xs):
    out = np.empty_like(xs)
    for n in range(xs.shape[0]):
        out[n] = grad_1d(kind, params, xs[n])
    return out


@numba.njit(cache=True)
def _rk4_flow_1d(kind, params, x0, minima, flow_tol, t_max, dt):
    x = x0
    t = 0.0
    while True:
        for i in range(minima.shape[0]):
            if abs(x - minima[i]) <= flow_tol:
                return x, t, i, 1
        if t > t_max:
            return x, t, -1, 0
        k1 = -grad_1d(kind, params, x)
        k2 = -grad_1d(kind, params, x + 0.5 * dt * k1)
        k3 = -grad_1d(kind, params, x + 0.5 * dt * k2)
        k4 = -grad_1d(kind, params, x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(x):
            return x, t, -1, 2
        t += dt


@dataclass(frozen=True, eq=False)
class Landscape:
    """A potential ``f`` on R^d with K local minima and their attraction fields.

    In 1-D the fields are the open intervals cut out by ``boundaries`` (the
    local maxima).  In higher dimension fields are the gradient-flow basins
    and classification runs the flow.  ``sigma`` is a constant scalar
    diffusion; pass ``diffusion`` for a state-dependent matrix instead.
    ``kernel`` holds the ``(kind, params)`` pair of a compiled 1-D gradient,
    which enables the fast simulation paths.
    """

    dim: int
    grad: Callable[[np.ndarray], np.ndarray]
    minima: np.ndarray
    potential: Optional[Callable[[np.ndarray], float]] = None
    diffusion: Optional[Callable[[np.ndarray], np.ndarray]] = None
    sigma: Optional[float] = 1.0
    boundaries: Optional[np.ndarray] = None
    kernel: Optional[tuple] = None
    domain: Optional[tuple] = None
    boundary_tol: float = 1e-9
    name: str = "custom"
    allow_single: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        minima = np.atleast_2d(np.asarray(self.minima, dtype=float))
        if self.dim == 1 and minima.shape[0] == 1 and minima.shape[1] > 1:
            minima = minima.T
        object.__setattr__(self, "minima", minima)
        if minima.shape[1] != self.dim:
            raise ValueError(f"minima have dimension {minima.shape[1]}, expected {self.dim}")
        if minima.shape[0] < 2 and not self.allow_single:
            raise ValueError("a multimodal landscape needs at least two minima (K >= 2)")
        if self.diffusion is None and self.sigma is None:
            raise ValueError("give either a constant sigma or a diffusion callable")
        if self.boundaries is not None:
            bnd = np.asarray(self.boundaries, dtype=float).ravel()
            if self.dim != 1:
                raise ValueError("interval boundaries only make sense in 1-D")
            if bnd.size != minima.shape[0] - 1:
                raise ValueError("need exactly K-1 boundaries between K minima")
            if np.any(np.diff(bnd) <= 0):
                raise ValueError("boundaries must be strictly increasing")
            m = minima[:, 0]
            if np.any(np.diff(m) <= 0):
                raise ValueError("1-D minima must be listed in increasing order")
            if np.any(m[:-1] >= bnd) or np.any(m[1:] <= bnd):
                raise ValueError("each boundary must sit between consecutive minima")
            object.__setattr__(self, "boundaries", bnd)

    @property
    def n_minima(self) -> int:
        return self.minima.shape[0]

    @property
    def fields(self) -> range:
        return range(1, self.n_minima + 1)

    def minimum(self, i: int) -> np.ndarray:
        return self.minima[i - 1]

    def grad_at(self, x) -> np.ndarray:
        g = np.asarray(self.grad(np.atleast_1d(np.asarray(x, dtype=float))), dtype=float)
        return np.atleast_1d(g)

    def grad_many(self, xs) -> np.ndarray:
        """Gradients at the rows of ``xs`` (shape ``(n, dim)``)."""
        xs = np.asarray(xs, dtype=float).reshape(-1, self.dim)
        if self.kernel is not None:
            kind, params = self.kernel
            return grad_1d_many(kind, params, np.ascontiguousarray(xs[:, 0]))[:, None]
        return np.array([self.grad_at(x) for x in xs])

    def sigma_at(self, x) -> np.ndarray:
        if self.diffusion is not None:
            return np.atleast_2d(np.asarray(self.diffusion(np.atleast_1d(x)), dtype=float))
        return self.sigma * np.eye(self.dim)

    def interval(self, i: int) -> tuple:
        """Open interval ``(lo, hi)`` of field ``i`` in 1-D."""
        edges = np.concatenate(([-np.inf], self.boundaries, [np.inf]))
        return float(edges[i - 1]), float(edges[i])

    def classify(self, x) -> int:
        return classify_field(self, x)


@dataclass
class FlowResult:
    terminal: np.ndarray
    terminal_field: Optional[int]
    converged: bool
    time: float
    path_samples: Optional[list] = None


def gradient_flow(landscape: Landscape, x0, flow_tol: float = 1e-6, t_max: float = 1e4,
                  dt: float = 1e-3, record_every: Optional[int] = None) -> FlowResult:
    """Integrate dy/dt = -grad f(y) with fixed-step RK4 until a minimum is reached.

    Stops once ``|y - m_i| <= flow_tol`` for some i (``converged=True``) or
    after ``t_max`` (``converged=False``).  ``record_every`` keeps every n-th
    step as ``(time, point)`` in ``path_samples``.
    """
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 must be finite")
    if flow_tol <= 0:
        raise ValueError("flow_tol must be positive")

    if landscape.kernel is not None and record_every is None:
        kind, params = landscape.kernel
        xt, t, idx, status = _rk4_flow_1d(kind, params, float(x[0]), landscape.minima[:, 0],
                                          flow_tol, t_max, dt)
        if status == 2:
            raise NonFinite(f"gradient flow from {x0} diverged at t={t:.4g}")
        return FlowResult(np.array([xt]), idx + 1 if status == 1 else None, status == 1, t)

    path = [(0.0, x.copy())] if record_every else None
    t = 0.0
    n = 0
    while True:
        dist = np.linalg.norm(landscape.minima - x, axis=1)
        hit = int(np.argmin(dist))
        if dist[hit] <= flow_tol:
            if path is not None and path[-1][0] != t:
                path.append((t, x.copy()))
            return FlowResult(x, hit + 1, True, t, path)
        if t > t_max:
            return FlowResult(x, None, False, t, path)
        k1 = -landscape.grad_at(x)
        k2 = -landscape.grad_at(x + 0.5 * dt * k1)
        k3 = -landscape.grad_at(x + 0.5 * dt * k2)
        k4 = -landscape.grad_at(x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise NonFinite(f"gradient flow from {x0} diverged at t={t:.4g}")
        t += dt
        n += 1
        if path is not None and n % record_every == 0:
            path.append((t, x.copy()))


def classify_field(landscape: Landscape, x, flow_tol: float = 1e-6, t_max: float = 1e4) -> int:
    """Field label of ``x``, or ``BOUNDARY``.

    1-D uses interval lookup with ``landscape.boundary_tol``; otherwise the
    gradient flow is integrated (adaptive RK45) until it comes within
    ``flow_tol`` of a minimum, and a flow still running at ``t_max`` counts
    as ``BOUNDARY``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot classify a non-finite point")
    if landscape.boundaries is not None:
        bnd = landscape.boundaries
        if bnd.size and np.min(np.abs(bnd - x[0])) <= landscape.boundary_tol:
            return BOUNDARY
        return int(np.searchsorted(bnd, x[0])) + 1
    if landscape.n_minima == 1 and landscape.allow_single:
        return 1
    return _flow_label(landscape, x, flow_tol, t_max)


def _flow_label(landscape: Landscape, x, flow_tol, t_max) -> int:
    # adaptive integration: the fixed-step flow is far too slow for the many
    # classification calls of the sampled geometry routines
    minima = landscape.minima
    d0 = np.linalg.norm(minima - x, axis=1)
    if d0.min() <= flow_tol:
        return int(np.argmin(d0)) + 1

    def rhs(_t, y):
        return -landscape.grad_at(y)

    def hit(_t, y):
        return np.linalg.norm(minima - y, axis=1).min() - flow_tol

    hit.terminal = True
    sol = solve_ivp(rhs, (0.0, t_max), x, events=hit, rtol=1e-8, atol=1e-10)
    y = sol.y[:, -1]
    if not np.all(np.isfinite(y)):
        raise NonFinite(f"gradient flow from {x} diverged")
    if sol.status != 1:
        return BOUNDARY
    return int(np.argmin(np.linalg.norm(minima - y, axis=1))) + 1


def classify_many(landscape: Landscape, xs) -> np.ndarray:
    """Vectorised 1-D classification; returns an int array of labels."""
    xs = np.asarray(xs, dtype=float)
    if landscape.boundaries is None:
        return np.array([classify_field(landscape, x) for x in xs])
    bnd = landscape.boundaries
    flat = xs.reshape(-1)
    labels = np.searchsorted(bnd, flat) + 1
    near = np.min(np.abs(flat[:, None] - bnd[None, :]), axis=1) <= landscape.boundary_tol
    labels[near] = BOUNDARY
    return labels


# ---------------------------------------------------------------------------
# constructors


def _kernel_landscape(kind, params, minima, boundaries, potential, name, domain=None,
                      sigma=1.0, meta=None) -> Landscape:
    params = np.ascontiguousarray(params, dtype=float)

    def grad(x, _k=kind, _p=params):
        return np.array([grad_1d(_k, _p, float(np.ravel(x)[0]))])

    def pot(x, _f=potential):
        return float(_f(float(np.ravel(x)[0])))

    return Landscape(dim=1, grad=grad, minima=np.asarray(minima, dtype=float).reshape(-1, 1),
                     potential=pot, sigma=sigma, boundaries=np.asarray(boundaries, dtype=float),
                     kernel=(kind, params), domain=domain, name=name, meta=meta or {})


def four_well_potential(x):
    """The four-well test potential, vectorised over numpy input."""
    x = np.asarray(x, dtype=float)
    return (
        (x + 1.6) * (x + 1.3) ** 2 * (x - 0.2) ** 2 * (x - 0.7) ** 2 * (x - 1.6)
        * (0.05 * np.abs(1.65 - x)) ** 0.6
        * (1 + 1 / (0.01 + 4 * (x - 0.5) ** 2))
        * (1 + 1 / (0.1 + 4 * (x + 1.5) ** 2))
        * (1 - 0.25 * np.exp(-5 * (x + 0.8) ** 2))
    )


def four_well_landscape(fd_h: float = FD_H) -> Landscape:
    """Four-well 1-D landscape with fields cut at -1.3, 0.2 and 0.7.

    The nominal minima (-1.51, -0.66, 0.49, 1.32) are refined to the roots of
    the finite-difference gradient inside each field, so ``grad(m_i)`` is
    zero to solver precision.  ``domain`` is the projection box [-1.6, 1.6].
    """
    params = np.array([fd_h])

    def g(x):
        return grad_1d(KIND_FOUR_WELL, params, x)

    edges = (FOUR_WELL_BOX[0],) + FOUR_WELL_BOUNDARIES + (FOUR_WELL_BOX[1],)
    refined = [brentq(g, lo + 1e-6, hi - 1e-6, xtol=1e-14) for lo, hi in zip(edges[:-1], edges[1:])]
    return _kernel_landscape(KIND_FOUR_WELL, params, refined, FOUR_WELL_BOUNDARIES, four_well_potential,
                             name="fourwell", domain=FOUR_WELL_BOX,
                             meta={"nominal_minima": FOUR_WELL_MINIMA})


def wells_1d(minima: Sequence[float], boundaries: Sequence[float], scale: float = 1.0,
             domain=None, name: str = "wells1d") -> Landscape:
    """Polynomial landscape whose critical points are exactly the given ones.

    f'(x) = scale * prod (x - c) over the interleaved minima and boundaries,
    so minima and local maxima sit where declared and the potential is
    dissipative (odd degree, positive leading coefficient).
    """
    minima = np.asarray(minima, dtype=float)
    boundaries = np.asarray(boundaries, dtype=float)
    crit = np.sort(np.concatenate([minima, boundaries]))
    dpoly = scale * np.polynomial.Polynomial.fromroots(crit)
    fpoly = dpoly.integ()
    coeffs = dpoly.coef[::-1].copy()  # highest degree first for Horner
    return _kernel_landscape(KIND_POLY, coeffs, minima, boundaries, fpoly, name=name,
                             domain=domain, meta={"critical_points": crit.tolist()})


def three_well_landscape() -> Landscape:
    """Three-well landscape with the distances of the transition-graph example.

    m_1 sits 0.25 left of the first boundary, m_2 is 0.6 from its left
    boundary and 0.9 from its right one, m_3 is 0.35 right of the second
    boundary; the outer sides are unbounded.
    """
    m1, s1 = 0.0, 0.25
    m2 = s1 + 0.6
    s2 = m2 + 0.9
    m3 = s2 + 0.35
    return wells_1d([m1, m2, m3], [s1, s2], scale=1.0, domain=(m1 - 1.5, m3 + 1.5), name="threewell")


def two_well_landscape(a: float = 1.0) -> Landscape:
    """Symmetric double well f = (x^2 - a^2)^2 / 4 with minima at +-a."""
    return wells_1d([-a, a], [0.0], scale=1.0, domain=(-3 * a, 3 * a), name="twowell")


def grid_1d(x_samples, f_samples, minima, boundaries, domain=None) -> Landscape:
    """Cubic-spline interpolant of sampled potential values."""
    x_samples = np.asarray(x_samples, dtype=float)
    f_samples = np.asarray(f_samples, dtype=float)
    if x_samples.shape != f_samples.shape or x_samples.size < 4:
        raise ValueError("need matching x/f samples, at least four of them")
    spline = CubicSpline(x_samples, f_samples)
    n = x_samples.size
    c = spline.c  # shape (4, n-1)
    params = np.concatenate([[n], x_samples, c[0], c[1], c[2]])
    if domain is None:
        domain = (float(x_samples[0]), float(x_samples[-1]))
    return _kernel_landscape(KIND_SPLINE, params, minima, boundaries, lambda x: float(spline(x)),
                             name="grid1d", domain=domain)


def landscape_from_spec(spec: dict) -> Landscape:
    """Build a landscape from its JSON description.

    Kinds: ``fourwell``; ``threewell``; ``twowell``; ``wells1d`` (minima,
    boundaries, optional scale); ``grid1d`` (x_samples + f_samples, or
    f_samples as ``[x, f]`` pairs, plus minima and boundaries).
    """
    kind = spec.get("kind")
    try:
        if kind == "fourwell":
            return four_well_landscape(spec.get("fd_h", FD_H))
        if kind == "threewell":
            return three_well_landscape()
        if kind == "twowell":
            return two_well_landscape(spec.get("a", 1.0))
        if kind == "wells1d":
            return wells_1d(spec["minima"], spec["boundaries"], spec.get("scale", 1.0),
                            domain=tuple(spec["domain"]) if "domain" in spec else None)
        if kind == "grid1d":
            fs = np.asarray(spec["f_samples"], dtype=float)
            if fs.ndim == 2:
                xs, fs = fs[:, 0], fs[:, 1]
            else:
                xs = np.asarray(spec["x_samples"], dtype=float)
            return grid_1d(xs, fs, spec["minima"], spec["boundaries"],
                           domain=tuple(spec["domain"]) if "domain" in spec else None)
    except KeyError as exc:
        raise ConfigError(f"landscape kind {kind!r} is missing field {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"bad landscape spec: {exc}") from None
    raise ConfigError(f"unknown landscape kind {kind!r}")


def load_landscape(path) -> Landscape:
    with open(path) as fh:
        return landscape_from_spec(json.load(fh))


# ---------------------------------------------------------------------------
# assumption checks


@dataclass
class GridSpec:
    lo: float
    hi: float
    spacing: float = 1e-3
    annulus: float = 0.05


@dataclass
class ValidationReport:
    contraction: list
    dissipativity: list
    nondegeneracy: list
    stationarity: list

    @property
    def ok(self) -> bool:
        return not (self.contraction or self.dissipativity or self.nondegeneracy or self.stationarity)


def _sphere_directions(dim, n, rng):
    if dim == 1:
        return np.array([[-1.0], [1.0]])
    v = rng.standard_normal((n, dim))
    v = np.vstack([np.eye(dim), -np.eye(dim), v])
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def validate_assumptions(landscape: Landscape, grid: GridSpec, grad_tol: float = 1e-6,
                         n_directions: int = 64, seed: int = 0) -> ValidationReport:
    """Scan a grid for violations of the basin assumptions.

    Checks grad f(x).(x - m_i) > 0 on punctured balls of radius
    ``grid.annulus`` around each minimum, grad f(x).x > 0 on the frontier of
    the box ``[lo, hi]^d``, stationarity of each listed minimum, and
    invertibility of sigma at every probed point.  Violations are returned
    as data, with their locations.
    """
    rng = np.random.default_rng(seed)
    contraction, dissip, nondeg, station = [], [], [], []
    radii = np.arange(grid.spacing, grid.annulus + 0.5 * grid.spacing, grid.spacing)
    dirs = _sphere_directions(landscape.dim, n_directions, rng)
    probed = []
    for i in landscape.fields:
        m = landscape.minimum(i)
        if np.linalg.norm(landscape.grad_at(m)) > grad_tol:
            station.append((i, m.copy()))
        for r in radii:
            for u in dirs:
                x = m + r * u
                probed.append(x)
                if float(landscape.grad_at(x) @ (x - m)) <= 0:
                    contraction.append((i, x))
    # box frontier
    if landscape.dim == 1:
        frontier = [np.array([grid.lo]), np.array([grid.hi])]
    else:
        frontier = []
        n_face = max(4, int(round((grid.hi - grid.lo) / max(grid.spacing, (grid.hi - grid.lo) / 20))))
        ticks = np.linspace(grid.lo, grid.hi, n_face)
        for axis in range(landscape.dim):
            for edge in (grid.lo, grid.hi):
                pts = rng.choice(ticks, size=(n_face, landscape.dim))
                pts[:, axis] = edge
                frontier.extend(pts)
    for x in frontier:
        probed.append(x)
        if float(landscape.grad_at(x) @ x) <= 0:
            dissip.append(x)
    for x in probed[:: max(1, len(probed) // 200)]:
        if abs(np.linalg.det(landscape.sigma_at(x))) < 1e-12:
            nondeg.append(x)
    return ValidationReport(contraction, dissip, nondeg, station)
