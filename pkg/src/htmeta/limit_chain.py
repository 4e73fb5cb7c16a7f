"""Jump measures of clipped heavy-tailed perturbations and the limiting Markov chain.

The rate of a transition m_i -> I_j is the mass that the measure
C^{(k)|b}(. ; m_i) puts on I_j, where k = J_b(i).  Under that measure the
first jump ``x + clip(sigma w_1, b)`` leaves m_i, the path then follows the
gradient flow for a Lebesgue-distributed gap, takes the next clipped jump,
and so on; the mass is read off right after the k-th jump.  Jump sizes
follow the power-law measure nu_alpha with nu[x, inf) = x^-alpha.

k = 1 masses are computed in closed form.  For k >= 2 the measure is
estimated by importance sampling: magnitudes from nu_alpha restricted to
[floor, inf) with the analytic total mass as weight, gaps from a defensive
mixture of a uniform and a truncated exponential on [0, T_gap].
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import null_space

from .errors import (DegenerateGeometry, InsufficientInput, NonFinite, RateSumMismatch,
                     SingularSystem, Unsupported)
from .geometry import WidthReport, effective_width, width_report
from .landscape import Landscape, classify_many
from .noise import NoiseModel


class MCVarianceWarning(UserWarning):
    """Relative standard error of a Monte Carlo mass exceeds the tolerance."""


# ---------------------------------------------------------------------------
# perturbed gradient flow


@dataclass(frozen=True)
class PerturbedFlowSpec:
    """Flow from ``x0`` kicked by ``jumps[j]`` at ``times[j]`` (0 < t_1 < ... <= horizon)."""

    x0: tuple
    jumps: tuple = ()
    times: tuple = ()
    b: float = math.inf
    horizon: Optional[float] = None

    def __post_init__(self):
        if len(self.jumps) != len(self.times):
            raise ValueError("need one time per jump")
        t = np.asarray(self.times, dtype=float)
        if t.size and (t[0] <= 0 or np.any(np.diff(t) <= 0)):
            raise ValueError("jump times must be positive and strictly increasing")
        if self.horizon is not None and t.size and t[-1] > self.horizon:
            raise ValueError("last jump falls after the horizon")


def _clip(v, b):
    n = float(np.linalg.norm(v))
    return v if n <= b else v * (b / n)


def _flow_segment(landscape, x, t0, t1, rtol, atol):
    def rhs(_t, y):
        return -landscape.grad_at(y)

    sol = solve_ivp(rhs, (t0, t1), x, method="DOP853", rtol=rtol, atol=atol, dense_output=True)
    if not sol.success or not np.all(np.isfinite(sol.y[:, -1])):
        raise NonFinite(f"flow integration failed on [{t0}, {t1}]")
    return sol


def perturbed_flow(landscape: Landscape, spec: PerturbedFlowSpec, rtol: float = 1e-10,
                   atol: float = 1e-12) -> Callable[[float], np.ndarray]:
    """Right-continuous path evaluator ``t -> xi_t`` on [0, horizon]."""
    x = np.atleast_1d(np.asarray(spec.x0, dtype=float))
    times = [float(t) for t in spec.times]
    horizon = spec.horizon if spec.horizon is not None else (times[-1] + 1.0 if times else 1.0)
    knots = [0.0] + times + [horizon]
    segments = []  # (start, end, dense solution or None, value right after the end jump)
    for j in range(len(knots) - 1):
        a, c = knots[j], knots[j + 1]
        sol = _flow_segment(landscape, x, a, c, rtol, atol) if c > a else None
        if sol is not None:
            x = sol.y[:, -1].copy()
        if j < len(times):
            x = x + _clip(landscape.sigma_at(x) @ np.atleast_1d(spec.jumps[j]), spec.b)
        segments.append((a, c, sol, x.copy()))

    def path(t: float) -> np.ndarray:
        if t < 0 or t > horizon:
            raise ValueError(f"t={t} outside [0, {horizon}]")
        for j, (a, c, sol, after) in enumerate(segments):
            if j < len(times) and t == c:
                return after.copy()
            if sol is not None and (a <= t < c or t == c == horizon):
                return np.asarray(sol.sol(t)).copy()
        return segments[-1][3].copy()

    return path


def flow_endpoint(landscape: Landscape, spec: PerturbedFlowSpec, **kw) -> np.ndarray:
    """Location right after the last jump; ``x0`` when there are no jumps."""
    if not spec.times:
        return np.atleast_1d(np.asarray(spec.x0, dtype=float)).copy()
    return perturbed_flow(landscape, spec, **kw)(spec.times[-1])


# ---------------------------------------------------------------------------
# tabulated 1-D flow map


class FlowMap1D:
    """Gradient flow of a 1-D landscape via tabulated time-to-position maps.

    For each field and each side of its minimum the flow time from an edge
    point to distance u from m is integrated once on a grid that is
    geometric near both ends; advancing a point by ``gap`` is then an
    interpolation in (time, log u).  Past the table the flow decays
    exponentially at the curvature of the minimum.  Points within ``edge``
    of a boundary, or farther than ``reach`` on an unbounded side, are
    moved to the table end first.
    """

    def __init__(self, landscape: Landscape, reach: float = 4.0, edge: float = 1e-7,
                 u_min: float = 1e-8, n_grid: int = 4000, box: Optional[tuple] = None):
        if landscape.dim != 1 or landscape.boundaries is None:
            raise Unsupported("tabulated flow map needs a 1-D landscape with interval fields")
        self.landscape = landscape
        self.tables = {}
        grad = landscape.grad_at
        for i in landscape.fields:
            m = float(landscape.minimum(i)[0])
            lo, hi = landscape.interval(i)
            for side, bound in ((-1, lo), (1, hi)):
                finite = math.isfinite(bound)
                if finite:
                    u_e = abs(bound - m) - edge
                elif box is not None:
                    u_e = abs(box[(side + 1) // 2] - m)
                else:
                    u_e = max(reach, 1.0)
                near_m = np.geomspace(u_min, 0.5 * u_e, n_grid)
                if finite:
                    near_b = u_e + edge - np.geomspace(edge, 0.5 * u_e + edge, n_grid)
                else:
                    near_b = np.linspace(0.5 * u_e, u_e, n_grid)
                u = np.unique(np.concatenate([near_m, near_b]))[::-1]  # from u_e down to u_min
                g = np.array([side * grad(np.array([m + side * v]))[0] for v in u])
                bad = np.flatnonzero(g <= 0)
                if bad.size:
                    if finite:
                        raise DegenerateGeometry(f"field {i} has a critical point other than m_{i}")
                    # an unbounded side that stops being dissipative: keep the inward part
                    cut = bad.max() + 1
                    u, g = u[cut:], g[cut:]
                inv = 1.0 / g
                t = np.concatenate([[0.0], np.cumsum(0.5 * (inv[1:] + inv[:-1]) * -np.diff(u))])
                # probe well above u_min: the gradient may be a finite difference
                u_c = min(1e-4, 0.1 * u_e)
                curv = side * grad(np.array([m + side * u_c]))[0] / u_c
                self.tables[(i, side)] = (m, t, np.log(u), curv, u[0])

    def curvature(self, i: int) -> float:
        return 0.5 * (self.tables[(i, -1)][3] + self.tables[(i, 1)][3])

    def time_between(self, i: int, side: int, u_from: float, u_to: float) -> float:
        m, t, logu, curv, u_e = self.tables[(i, side)]
        ta = np.interp(-math.log(min(u_from, u_e)), -logu, t)
        if u_to >= math.exp(logu[-1]):
            tb = np.interp(-math.log(u_to), -logu, t)
        else:
            tb = t[-1] + (logu[-1] - math.log(u_to)) / curv
        return float(tb - ta)

    def advance(self, x: np.ndarray, gap: np.ndarray) -> np.ndarray:
        """Flow each ``x[n]`` forward for time ``gap[n]`` (gap may be inf)."""
        x = np.asarray(x, dtype=float)
        gap = np.broadcast_to(np.asarray(gap, dtype=float), x.shape)
        out = x.copy()
        labels = classify_many(self.landscape, x)
        for i in self.landscape.fields:
            in_i = labels == i
            if not np.any(in_i):
                continue
            for side in (-1, 1):
                m, t, logu, curv, u_e = self.tables[(i, side)]
                sel = in_i & ((x - m) * side > 0)
                if not np.any(sel):
                    continue
                u0 = np.minimum(np.abs(x[sel] - m), u_e)
                g = gap[sel]
                lu0 = np.log(u0)
                inside = lu0 >= logu[-1]
                t0 = np.where(inside, np.interp(-lu0, -logu, t), t[-1] + (logu[-1] - lu0) / curv)
                tt = t0 + g
                with np.errstate(invalid="ignore"):
                    lu = np.where(tt <= t[-1], np.interp(tt, t, logu), logu[-1] - curv * (tt - t[-1]))
                lu = np.where(np.isinf(g), -np.inf, lu)
                out[sel] = m + side * np.exp(lu)
        return out


# ---------------------------------------------------------------------------
# targets and jump-measure masses


@dataclass(frozen=True)
class Field:
    j: int


@dataclass(frozen=True)
class Complement:
    i: int


@dataclass(frozen=True)
class BoundaryBand:
    delta: float = 1e-3


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float


def target_intervals(landscape: Landscape, target) -> list:
    """Open intervals whose union is the target set (1-D)."""
    if isinstance(target, Field):
        return [landscape.interval(target.j)]
    if isinstance(target, Complement):
        lo, hi = landscape.interval(target.i)
        return [iv for iv in ((-math.inf, lo), (hi, math.inf)) if iv[0] < iv[1]]
    if isinstance(target, BoundaryBand):
        return [(s - target.delta, s + target.delta) for s in landscape.boundaries]
    if isinstance(target, Interval):
        return [(target.lo, target.hi)]
    raise TypeError(f"unknown target {target!r}")


def _contains(intervals, x):
    hit = np.zeros(np.shape(x), dtype=bool)
    for lo, hi in intervals:
        hit |= (x > lo) & (x < hi)
    return hit


def _member(landscape, target, intervals):
    if isinstance(target, Complement):
        # the complement is closed: it also owns the boundary points of I_i
        lo, hi = landscape.interval(target.i)
        return lambda x: ~((x > lo) & (x < hi))
    return lambda x: _contains(intervals, x)


def _distance_to(intervals, m):
    best = math.inf
    for lo, hi in intervals:
        if lo < m < hi:
            return 0.0
        best = min(best, abs(lo - m) if m <= lo else abs(m - hi))
    return best


@dataclass
class MassEstimate:
    """Mass of a jump measure on a target, with its standard error.

    ``floor`` is the minimal clipped jump size kept by the sampler;
    ``floor_exact`` says whether smaller jumps provably contribute nothing.
    ``tail_hits`` counts probe paths that still hit the target after an
    infinitely long gap (any hit makes the mass infinite).
    """

    mass: float
    se: float
    n: int = 0
    method: str = "analytic"
    floor: float = 0.0
    floor_exact: bool = True
    tail_hits: int = 0

    @property
    def rel_se(self) -> float:
        return self.se / self.mass if self.mass > 0 else 0.0


@dataclass(frozen=True)
class MCSpec:
    n_samples: int = 1_000_000
    block: int = 1 << 16
    seed: int = 0
    mc_rel_tol: float = 0.05
    t_gap_factor: float = 50.0
    uniform_weight: float = 0.2
    tail_probe: int = 10_000
    floor_fraction: float = 0.05
    box: Optional[tuple] = None  # clamp jump destinations like the projected dynamics


def _nu_sign_mass(alpha, sigma, b, lo, hi):
    """nu-mass of {w > 0 : clip(sigma w, b) in (lo, hi)} for 0 <= lo < hi."""
    if hi <= 0:
        return 0.0
    lo = max(lo, 0.0)
    if lo == 0.0:
        return math.inf
    if lo >= b:
        return 0.0
    upper = 0.0 if hi > b else (hi / sigma) ** (-alpha)
    return 0.5 * ((lo / sigma) ** (-alpha) - upper)


def one_jump_mass(intervals, m, alpha, sigma, b) -> float:
    """Exact mass of {w : m + clip(sigma w, b) in union of intervals} under nu_alpha."""
    total = 0.0
    for lo, hi in intervals:
        total += _nu_sign_mass(alpha, sigma, b, lo - m, hi - m)       # positive jumps
        total += _nu_sign_mass(alpha, sigma, b, m - hi, m - lo)       # negative jumps
    return total


def _reach(k, b):
    # unclipped jumps can land anywhere; the table then covers a fixed window
    return max(4.0, 2 * k * b) if math.isfinite(b) else 4.0


def _check_model(landscape, model):
    if not model.heavy_tailed:
        raise Unsupported("jump measures need a heavy-tailed noise model")
    if landscape.dim != 1 or landscape.boundaries is None:
        raise Unsupported("jump-measure masses are implemented for 1-D interval landscapes")
    if landscape.diffusion is not None:
        raise Unsupported("jump-measure masses assume a constant diffusion coefficient")


def jump_measure_mass(landscape: Landscape, model: NoiseModel, i: int, target, b: float, k: int,
                      mc: MCSpec = MCSpec(), flow_map: Optional[FlowMap1D] = None,
                      stream: tuple = (), method: str = "auto") -> MassEstimate:
    """Mass that C^{(k)|b}(. ; m_i) puts on ``target``.

    ``method="mc"`` forces the sampler even for k = 1, where the closed
    form is otherwise used.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    _check_model(landscape, model)
    alpha, sigma = model.alpha, float(landscape.sigma)
    m = float(landscape.minimum(i)[0])
    intervals = target_intervals(landscape, target)
    member = _member(landscape, target, intervals)
    if k == 1 and method != "mc":
        return MassEstimate(one_jump_mass(intervals, m, alpha, sigma, b), 0.0)

    d_t = _distance_to(intervals, m)
    r = effective_width(landscape, i)
    monotone = (k - 1) * b < r  # first k-1 jumps stay in I_i and the flow pulls back to m_i
    if monotone and d_t > k * b:
        return MassEstimate(0.0, 0.0, method="unreachable")
    need = d_t - (k - 1) * b
    if monotone and need > 0:
        floor, exact = need, True
    else:
        floor, exact = mc.floor_fraction * b, False
    floor_w = floor / sigma
    per_jump = floor_w ** (-alpha)  # nu-mass of |w| >= floor_w, both signs

    fm = flow_map or FlowMap1D(landscape, reach=_reach(k, b), box=mc.box)
    lo_box, hi_box = mc.box if mc.box is not None else (-math.inf, math.inf)
    tau_lin = 1.0 / fm.curvature(i)
    u_start = min((k - 1) * b, r) if monotone else r
    tau_relax = max(fm.time_between(i, side, u_start, 1e-6) for side in (-1, 1)) if k > 1 else 1.0
    t_gap = mc.t_gap_factor * tau_relax
    lam = 1.0 / tau_lin
    z_exp = -math.expm1(-lam * t_gap)
    pu = mc.uniform_weight

    def draw(rng, n):
        x = np.full(n, m)
        logw = np.zeros(n)
        for j in range(k):
            if j > 0:
                use_u = rng.random(n) < pu
                v = rng.random(n)
                gap = np.where(use_u, v * t_gap, -np.log1p(-v * z_exp) / lam)
                dens = pu / t_gap + (1 - pu) * lam * np.exp(-lam * gap) / z_exp
                logw -= np.log(dens)
                x = fm.advance(x, gap)
            mag = floor_w * (1.0 - rng.random(n)) ** (-1.0 / alpha)
            sign = np.where(rng.random(n) < 0.5, 1.0, -1.0)
            x = np.clip(x + sign * np.minimum(b, sigma * mag), lo_box, hi_box)
        return np.where(member(x), np.exp(logw) * per_jump ** k, 0.0)

    total = total_sq = 0.0
    n_done = 0
    blk = 0
    while n_done < mc.n_samples:
        n = min(mc.block, mc.n_samples - n_done)
        rng = np.random.default_rng(np.random.SeedSequence(mc.seed, spawn_key=tuple(stream) + (blk,)))
        w = draw(rng, n)
        total += w.sum()
        total_sq += (w * w).sum()
        n_done += n
        blk += 1
    mean = total / n_done
    var = max(total_sq / n_done - mean * mean, 0.0)
    se = math.sqrt(var / n_done)

    # infinite-gap probe: send one gap at a time to infinity
    tail_hits = 0
    rng = np.random.default_rng(np.random.SeedSequence(mc.seed, spawn_key=tuple(stream) + (10 ** 6,)))
    n = mc.tail_probe
    for g in range(1, k):
        x = np.full(n, m)
        for j in range(k):
            if j > 0:
                gap = np.full(n, np.inf) if j == g else rng.random(n) * t_gap
                x = fm.advance(x, gap)
            mag = floor_w * (1.0 - rng.random(n)) ** (-1.0 / alpha)
            x = np.clip(x + np.where(rng.random(n) < 0.5, 1.0, -1.0) * np.minimum(b, sigma * mag),
                        lo_box, hi_box)
        tail_hits += int(member(x).sum())
    if tail_hits:
        mean, se = math.inf, math.inf

    est = MassEstimate(mean, se, n_done, "importance", floor, exact, tail_hits)
    if math.isfinite(mean) and mean > 0 and est.rel_se > mc.mc_rel_tol:
        warnings.warn(f"relative SE {est.rel_se:.3f} of C^({k})(target; m_{i}) exceeds "
                      f"{mc.mc_rel_tol}", MCVarianceWarning, stacklevel=2)
    return est


# ---------------------------------------------------------------------------
# rates, absorption, generator


@dataclass
class RateTable:
    """q[i-1, j-1] = q_b(i, j) for i != j (zero diagonal); q_diag[i-1] = q_b(i)."""

    q: np.ndarray
    q_diag: np.ndarray
    j_b: list
    b: float
    se: Optional[np.ndarray] = None
    se_diag: Optional[np.ndarray] = None
    band: Optional[np.ndarray] = None

    @property
    def k(self) -> int:
        return self.q.shape[0]

    def to_json(self) -> dict:
        out = {"b": self.b, "j_b": list(self.j_b), "q": self.q.tolist(), "q_diag": self.q_diag.tolist()}
        if self.se is not None:
            out["se"] = self.se.tolist()
            out["se_diag"] = self.se_diag.tolist()
        if self.band is not None:
            out["band"] = self.band.tolist()
        return out


def rate_table(landscape: Landscape, model: NoiseModel, b: float, wr: Optional[WidthReport] = None,
               mc: MCSpec = MCSpec(), mc_tol: float = 0.05, band_delta: float = 1e-3,
               check_band: bool = True) -> RateTable:
    """q_b(i, j) = C^{(J_b(i))|b}(I_j; m_i) and q_b(i) = C^{(J_b(i))|b}(I_i^c; m_i).

    Every mass uses its own random stream, so the row-sum identity is a
    genuine check.  Raises RateSumMismatch when it fails by more than
    ``mc_tol`` (plus three standard errors) and DegenerateGeometry when the
    boundary band carries more than ``mc_tol * q_b(i)``.
    """
    _check_model(landscape, model)
    if wr is None:
        wr = width_report(landscape, b)
    k_n = landscape.n_minima
    fm = FlowMap1D(landscape, reach=_reach(max(wr.j_b), b), box=mc.box)
    q = np.zeros((k_n, k_n))
    se = np.zeros((k_n, k_n))
    qd = np.zeros(k_n)
    sed = np.zeros(k_n)
    band = np.zeros(k_n)
    for i in landscape.fields:
        k = wr.j_b[i - 1]
        for j in landscape.fields:
            if j == i:
                continue
            est = jump_measure_mass(landscape, model, i, Field(j), b, k, mc, fm, stream=(i, j))
            q[i - 1, j - 1], se[i - 1, j - 1] = est.mass, est.se
        est = jump_measure_mass(landscape, model, i, Complement(i), b, k, mc, fm, stream=(i, 0))
        qd[i - 1], sed[i - 1] = est.mass, est.se
        if not 0 < qd[i - 1] < math.inf:
            raise DegenerateGeometry(f"q_b({i}) = {qd[i - 1]} is not a positive finite rate")
        row = q[i - 1].sum()
        slack = mc_tol * qd[i - 1] + 3 * math.hypot(sed[i - 1], float(np.sqrt((se[i - 1] ** 2).sum())))
        if abs(row - qd[i - 1]) > slack:
            raise RateSumMismatch(f"row {i}: sum q(i,j) = {row:.6g} vs q(i) = {qd[i - 1]:.6g}")
        if check_band:
            with warnings.catch_warnings():
                # only an upper bound is needed here, its precision is irrelevant
                warnings.simplefilter("ignore", MCVarianceWarning)
                est = jump_measure_mass(landscape, model, i, BoundaryBand(band_delta), b, k, mc, fm,
                                        stream=(i, 10 ** 5))
            band[i - 1] = est.mass
            if est.mass > mc_tol * qd[i - 1]:
                raise DegenerateGeometry(f"boundary band mass {est.mass:.3g} from m_{i} exceeds "
                                         f"{mc_tol} q_b({i})")
    return RateTable(q, qd, list(wr.j_b), b, se, sed, band if check_band else None)


def absorption_probs(rates: RateTable, widest) -> np.ndarray:
    """theta[i-1, j-1]: probability that the embedded chain from m_i is absorbed at m_j.

    The embedded chain moves i -> j with probability q(i,j)/q(i); states in
    ``widest`` are absorbing.  Columns outside ``widest`` are zero.  q(i) is
    taken as the off-diagonal row sum, which equals the separately estimated
    ``q_diag`` up to Monte Carlo error and keeps the chain exactly stochastic.
    """
    widest = sorted(set(widest))
    if not widest:
        raise ValueError("widest set is empty")
    n = rates.k
    p = rates.q / rates.q.sum(axis=1, keepdims=True)
    a_idx = [w - 1 for w in widest]
    t_idx = [s for s in range(n) if s not in a_idx]
    theta = np.zeros((n, n))
    for a in a_idx:
        theta[a, a] = 1.0
    if t_idx:
        m = np.eye(len(t_idx)) - p[np.ix_(t_idx, t_idx)]
        rhs = p[np.ix_(t_idx, a_idx)]
        try:
            sol = np.linalg.solve(m, rhs)
        except np.linalg.LinAlgError:
            raise SingularSystem("some transient state cannot reach the widest minima") from None
        if not np.all(np.isfinite(sol)) or np.any(np.abs(sol.sum(axis=1) - 1) > 1e-8) or np.any(sol < -1e-12):
            raise SingularSystem("absorption probabilities do not form distributions")
        theta[np.ix_(t_idx, a_idx)] = np.clip(sol, 0.0, None)
    return theta


@dataclass
class Ctmc:
    """Limit chain on ``states`` (1-based minima labels, the widest ones).

    ``generator`` and ``embedded_kernel`` are indexed by position in
    ``states``.  ``jump_kernel`` includes self-returns through transient
    minima and pairs with ``holding_rates``; ``embedded_kernel`` has zero
    diagonal and pairs with ``-diag(generator)``.
    """

    states: list
    generator: np.ndarray
    initial_dist: np.ndarray
    embedded_kernel: np.ndarray
    jump_kernel: Optional[np.ndarray] = None
    holding_rates: Optional[np.ndarray] = None

    def to_json(self) -> dict:
        out = {"states": self.states, "generator": self.generator.tolist(),
               "initial_dist": self.initial_dist.tolist(),
               "embedded_kernel": self.embedded_kernel.tolist()}
        if self.jump_kernel is not None:
            out["jump_kernel"] = self.jump_kernel.tolist()
            out["holding_rates"] = self.holding_rates.tolist()
        return out


def _embedded(gen):
    out = np.zeros_like(gen)
    for s in range(gen.shape[0]):
        rate = -gen[s, s]
        if rate > 0:
            out[s] = gen[s] / rate
            out[s, s] = 0.0
        else:
            out[s, s] = 1.0
    return out


def build_ctmc(rates: RateTable, theta: np.ndarray, widest, i0: int) -> Ctmc:
    """Q(i, j) = sum_{j' != i} q(i, j') theta(j | j') for i != j in ``widest``."""
    states = sorted(set(widest))
    idx = [s - 1 for s in states]
    n = len(states)
    gen = np.zeros((n, n))
    jump = np.zeros((n, n))
    hold = np.zeros(n)
    for a, i in enumerate(idx):
        flux = rates.q[i] @ theta  # sum over j' != i (q has zero diagonal)
        for c, j in enumerate(idx):
            if c != a:
                gen[a, c] = flux[j]
        gen[a, a] = -gen[a].sum()
        hold[a] = rates.q[i].sum()
        jump[a] = flux[idx] / hold[a]
    init = theta[i0 - 1, idx].copy()
    if abs(init.sum() - 1) > 1e-8:
        raise SingularSystem(f"absorption law from m_{i0} does not sum to one")
    return Ctmc(states, gen, init, _embedded(gen), jump, hold)


def ctmc_from_generator(states, generator, initial_dist=None) -> Ctmc:
    gen = np.asarray(generator, dtype=float)
    if initial_dist is None:
        initial_dist = np.eye(len(states))[0]
    if np.any(np.abs(gen.sum(axis=1)) > 1e-9) or np.any(gen - np.diag(np.diag(gen)) < 0):
        raise ValueError("not a generator: rows must sum to zero with nonnegative off-diagonals")
    return Ctmc(list(states), gen, np.asarray(initial_dist, dtype=float), _embedded(gen))


def limit_chain(landscape: Landscape, model: NoiseModel, b: float, i0: int,
                mc: MCSpec = MCSpec(), **kw):
    """Widths, rates, absorption law and generator in one call."""
    wr = width_report(landscape, b)
    rates = rate_table(landscape, model, b, wr, mc, **kw)
    theta = absorption_probs(rates, wr.widest)
    return wr, rates, theta, build_ctmc(rates, theta, wr.widest, i0)


def stationary_distribution(ctmc: Ctmc) -> np.ndarray:
    ns = null_space(ctmc.generator.T)
    if ns.shape[1] != 1:
        raise SingularSystem("generator does not have a unique stationary law")
    pi = ns[:, 0]
    return pi / pi.sum()


# ---------------------------------------------------------------------------
# jump processes


@dataclass
class JumpProcessInput:
    """Inter-arrival times ``U`` (first may be 0) and destinations ``V`` (rows).

    ``arrivals`` caches the partial sums of ``U``; transformations that
    keep a subset of arrivals pass them through so that path values do not
    pick up rounding from re-summing differences.
    """

    U: np.ndarray
    V: np.ndarray
    arrivals: Optional[np.ndarray] = None

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=float).ravel()
        if self.arrivals is None:
            self.arrivals = np.cumsum(self.U)
        else:
            self.arrivals = np.asarray(self.arrivals, dtype=float).ravel()
            if self.arrivals.shape != self.U.shape:
                raise ValueError("arrivals must match U")
        v = np.asarray(self.V, dtype=float)
        self.V = v.reshape(len(self.U), -1) if v.size else v.reshape(0, 1)
        if len(self.U) != len(self.V):
            raise ValueError("need one destination per inter-arrival time")
        if np.any(self.U < 0):
            raise ValueError("inter-arrival times must be nonnegative")


def jump_process_eval(inp: JumpProcessInput, t: float) -> np.ndarray:
    """V_J with J = max{J : U_1 + ... + U_J <= t}; the origin when J = 0."""
    s = inp.arrivals
    if s.size == 0 or s[-1] <= t:
        raise InsufficientInput(f"arrival times never pass t={t}")
    n = int(np.searchsorted(s, t, side="right"))
    if n == 0:
        return np.zeros(inp.V.shape[1])
    return inp.V[n - 1].copy()


def group_instantaneous(inp: JumpProcessInput) -> JumpProcessInput:
    """Merge runs of zero gaps into their last destination (paths are unchanged)."""
    keep = np.ones(len(inp.U), dtype=bool)
    keep[:-1] = inp.U[1:] > 0
    kept = inp.arrivals[keep]
    return JumpProcessInput(np.diff(kept, prepend=0.0), inp.V[keep], kept)


def extend_dummy(inp: JumpProcessInput, gaps: Sequence[float]) -> JumpProcessInput:
    """Append jumps that land where the path already is."""
    gaps = np.asarray(gaps, dtype=float)
    last = inp.V[-1]
    tail = inp.arrivals[-1] + np.cumsum(gaps) if inp.arrivals.size else np.cumsum(gaps)
    return JumpProcessInput(np.concatenate([inp.U, gaps]),
                            np.vstack([inp.V, np.repeat(last[None], len(gaps), axis=0)]),
                            np.concatenate([inp.arrivals, tail]))


@dataclass
class CtmcPath:
    realization: JumpProcessInput
    horizon: float

    def __call__(self, t: float):
        return int(jump_process_eval(self.realization, t)[0])

    @property
    def jump_times(self) -> np.ndarray:
        return self.realization.arrivals

    @property
    def states(self) -> np.ndarray:
        return self.realization.V[:, 0].astype(int)


def simulate_ctmc(ctmc: Ctmc, horizon: float, rng: np.random.Generator,
                  i0: Optional[int] = None) -> CtmcPath:
    """Sample the chain on [0, horizon].

    The first arrival is at time 0 (the initial state, drawn from
    ``initial_dist`` unless ``i0`` is given); the last arrival lies beyond
    ``horizon`` so the path can be evaluated anywhere on [0, horizon].
    """
    n = len(ctmc.states)
    s = ctmc.states.index(i0) if i0 is not None else int(rng.choice(n, p=ctmc.initial_dist))
    rates = -np.diag(ctmc.generator)
    U, V = [0.0], [ctmc.states[s]]
    t = 0.0
    while t <= horizon:
        if rates[s] <= 0:
            U.append(horizon - t + 1.0)
            V.append(ctmc.states[s])
            break
        h = rng.exponential(1.0 / rates[s])
        s = int(rng.choice(n, p=ctmc.embedded_kernel[s]))
        U.append(h)
        V.append(ctmc.states[s])
        t += h
    return CtmcPath(JumpProcessInput(np.array(U), np.array(V, dtype=float)), horizon)


def occupation_fractions(path: CtmcPath, states) -> np.ndarray:
    """Fraction of [0, horizon] spent in each state."""
    times = np.concatenate([path.realization.arrivals, [np.inf]])
    occ = np.zeros(len(states))
    pos = {s: k for k, s in enumerate(states)}
    for k, v in enumerate(path.states):
        a, c = times[k], min(times[k + 1], path.horizon)
        if c > a:
            occ[pos[v]] += c - a
    return occ / path.horizon


def write_ctmc_path_csv(path: CtmcPath, filename, header: Optional[str] = None):
    with open(filename, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["t", "state"])
        for t, v in zip(path.jump_times, path.states):
            if t > path.horizon:
                break
            w.writerow([repr(float(t)), int(v)])


def write_json(obj, filename):
    with open(filename, "w") as fh:
        json.dump(obj.to_json() if hasattr(obj, "to_json") else obj, fh, indent=2)
