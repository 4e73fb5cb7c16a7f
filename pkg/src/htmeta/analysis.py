"""Statistics that tie the simulated dynamics to the limiting jump process."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .dynamics import RunConfig, Trajectory, exit_times_batch
from .errors import InsufficientEvents, OutOfHorizon
from .geometry import jump_width
from .landscape import Landscape
from .noise import NoiseModel, lambda_scale

MIN_EVENTS = 20


@dataclass
class OccupancyReport:
    fraction_per_minimum: list
    fraction_widest: float
    eps: float
    steps: int
    horizon_scaled: Optional[float] = None
    exact: bool = True


def occupancy(traj: Trajectory, landscape: Landscape, widest, eps: Optional[float] = None,
              lambda_star: Optional[float] = None) -> OccupancyReport:
    """Fraction of steps 1..n spent in each ball B_eps(m_i), and over ``widest``.

    Uses the full-resolution counts kept by the simulator when ``eps``
    matches the run's marker radius; otherwise falls back to the thinned
    states (``exact=False``).
    """
    eps = traj.eps if eps is None else eps
    n = traj.steps_run
    if traj.ball_counts is not None and math.isclose(eps, traj.eps):
        frac = traj.ball_counts / max(n, 1)
        exact = True
    else:
        pts = traj.states[1:]
        d = np.linalg.norm(pts[:, None, :] - landscape.minima[None, :, :], axis=2)
        frac = (d < eps).mean(axis=0) if len(pts) else np.zeros(landscape.n_minima)
        exact = False
    frac = [float(f) for f in frac]
    widest_frac = float(sum(frac[i - 1] for i in widest))
    return OccupancyReport(frac, widest_frac, eps, n,
                           None if lambda_star is None else n * lambda_star, exact)


@dataclass
class KernelEstimate:
    """Marker-to-marker transition counts between ``states``.

    ``counts[a, c]`` counts consecutive markers (states[a] -> states[c]).
    With ``self_returns`` the marker sequence was first restricted to
    ``states``, so a trip m_2 -> m_1 -> m_2 shows up as a self-return.
    """

    states: list
    counts: np.ndarray
    sojourn_mean: dict = field(default_factory=dict)
    self_returns: bool = False

    @property
    def row_n(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def P(self) -> np.ndarray:
        n = self.row_n
        out = np.zeros_like(self.counts, dtype=float)
        ok = n > 0
        out[ok] = self.counts[ok] / n[ok, None]
        return out

    def z_scores(self, reference: np.ndarray) -> np.ndarray:
        """(P_hat - p) / sqrt(p (1 - p) / n) per entry, SE from the reference p."""
        ref = np.asarray(reference, dtype=float)
        n = self.row_n[:, None]
        se = np.sqrt(ref * (1 - ref) / np.maximum(n, 1))
        diff = self.P - ref
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(se > 0, diff / se, np.where(np.abs(diff) > 0, np.inf, 0.0))
        return z

    def matches(self, reference: np.ndarray, n_se: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.z_scores(reference)) <= n_se))


def empirical_kernel(trajectories: Sequence[Trajectory], landscape: Landscape, states=None,
                     min_events: int = MIN_EVENTS, lambda_star: Optional[float] = None,
                     collapse_self: bool = False) -> KernelEstimate:
    """Empirical kernel of the transition markers, pooled over a batch.

    ``states`` restricts the marker sequence (e.g. to the widest minima)
    before pairing, so returns through other minima become self-returns;
    ``collapse_self`` drops those to give the embedded (jump) chain.
    Sojourn means are in steps, or in scaled time when ``lambda_star`` is
    given.  Raises InsufficientEvents if there are no transitions or a
    visited row has fewer than ``min_events``.
    """
    states = list(states) if states is not None else list(landscape.fields)
    pos = {s: k for k, s in enumerate(states)}
    counts = np.zeros((len(states), len(states)), dtype=np.int64)
    soj = {s: [] for s in states}
    for tr in trajectories:
        marks = [(t, f) for t, f in tr.transitions if f in pos]
        if collapse_self:
            marks = [m for k, m in enumerate(marks) if k == 0 or m[1] != marks[k - 1][1]]
        for (t0, a), (t1, c) in zip(marks[:-1], marks[1:]):
            counts[pos[a], pos[c]] += 1
            soj[a].append(t1 - t0)
    rows = counts.sum(axis=1)
    if rows.sum() == 0:
        raise InsufficientEvents("no transitions between the requested minima")
    thin = [states[k] for k in range(len(states)) if 0 < rows[k] < min_events]
    if thin:
        raise InsufficientEvents(f"rows {thin} have fewer than {min_events} transitions")
    scale = lambda_star if lambda_star is not None else 1.0
    sojourn = {s: float(np.mean(v)) * scale for s, v in soj.items() if v}
    return KernelEstimate(states, counts, sojourn, not collapse_self)


@dataclass
class ExitStudy:
    field: int
    b: float
    etas: list
    j: int
    raw_times: list
    n_horizon: list
    mean_times: list
    C: float
    scaled_times: np.ndarray
    scaled_means: list
    ks_statistic: float
    ks_critical: float
    ks_pvalue: float
    fitted_exponent: float
    exponent_ci: tuple
    theory_exponent: float

    @property
    def ks_pass(self) -> bool:
        return self.ks_statistic < self.ks_critical


def ks_exponential(samples, n_mc: int = 1000, level: float = 0.01, seed: int = 0):
    """KS statistic against an exponential law whose rate is fitted to the data.

    Critical value and p-value come from a parametric bootstrap, since
    estimating the rate invalidates the standard KS tables.  Returns
    ``(statistic, critical_value, pvalue)``.
    """
    res = stats.goodness_of_fit(stats.expon, np.asarray(samples, dtype=float),
                                known_params={"loc": 0.0}, statistic="ks",
                                n_mc_samples=n_mc, rng=np.random.default_rng(seed))
    crit = float(np.quantile(res.null_distribution, 1 - level))
    return float(res.statistic), crit, float(res.pvalue)


def fit_exponent(etas, mean_times) -> float:
    """Least-squares slope of log E[tau] against log(1/eta)."""
    x = np.log(1.0 / np.asarray(etas, dtype=float))
    y = np.log(np.asarray(mean_times, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def exit_study(landscape: Landscape, model: NoiseModel, field_: int, b: float, etas,
               replicas: int, steps: int = 10 ** 9, box=None, x0=None, seed: int = 0,
               workers: int = 1, n_boot: int = 1000, ks_mc: int = 1000,
               level: float = 0.01) -> ExitStudy:
    """First-exit study of field ``field_`` over a grid of step sizes.

    C is calibrated at the smallest eta as the reciprocal mean of
    eta * lambda(eta)^J * tau; the scaled sample there is tested against
    Exp(1).  The exit-order exponent is the slope of log mean exit time in
    log(1/eta), with a bootstrap CI over replicas.  Replicas that hit the
    horizon are dropped and counted in ``n_horizon``.
    """
    if replicas < 2:
        raise ValueError("need at least two replicas")
    etas = sorted(float(e) for e in etas)[::-1]  # largest first
    j = jump_width(landscape, field_, b)
    x0 = tuple(landscape.minimum(field_)) if x0 is None else tuple(np.atleast_1d(x0))
    raw, lost, means = [], [], []
    for k, eta in enumerate(etas):
        cfg = RunConfig(eta=eta, b=b, steps=steps, x0=x0, projection_box=box, seed=seed + k)
        times, _, n_h = exit_times_batch(landscape, model, cfg, field_, replicas, workers)
        if times.size < 2:
            raise InsufficientEvents(f"fewer than two exits at eta={eta}")
        raw.append(times)
        lost.append(n_h)
        means.append(float(times.mean()))
    scale = [eta * lambda_scale(model, eta) ** j for eta in etas]
    cal = int(np.argmin(etas))
    C = 1.0 / (scale[cal] * means[cal])
    scaled = C * scale[cal] * raw[cal]
    scaled_means = [C * s * m for s, m in zip(scale, means)]
    ks, crit, pval = ks_exponential(scaled, ks_mc, level, seed)
    slope = fit_exponent(etas, means)
    rng = np.random.default_rng(seed)
    boot = []
    for _ in range(n_boot):
        bm = [rng.choice(t, size=t.size, replace=True).mean() for t in raw]
        boot.append(fit_exponent(etas, bm))
    ci = (float(np.quantile(boot, 0.025)), float(np.quantile(boot, 0.975)))
    return ExitStudy(field_, b, etas, j, raw, lost, means, C, scaled, scaled_means, ks, crit, pval,
                     slope, ci, j * (model.alpha - 1) + 1)


class ScaledPath:
    """t -> X_{floor(t / lambda_star)} read from a (thinned) trajectory.

    Between recorded steps the most recent recorded state is returned.
    """

    def __init__(self, traj: Trajectory, lambda_star: float):
        if not lambda_star > 0:
            raise ValueError("lambda_star must be positive")
        self.traj = traj
        self.lambda_star = lambda_star

    @property
    def horizon_scaled(self) -> float:
        return self.traj.steps_run * self.lambda_star

    def __call__(self, t: float) -> np.ndarray:
        if t < 0:
            raise OutOfHorizon("negative time")
        n = math.floor(t / self.lambda_star)
        if n > self.traj.steps_run:
            raise OutOfHorizon(f"step {n} beyond the recorded {self.traj.steps_run}")
        k = int(np.searchsorted(self.traj.times, n, side="right")) - 1
        return self.traj.states[k].copy()


def time_scaled_path(traj: Trajectory, lambda_star: float) -> ScaledPath:
    return ScaledPath(traj, lambda_star)


# ---------------------------------------------------------------------------
# CSV output


def _writer(path, header, columns):
    fh = open(path, "w", newline="")
    if header:
        fh.write(f"# {header}\n")
    w = csv.writer(fh)
    w.writerow(columns)
    return fh, w


def write_exit_csv(study: ExitStudy, path, header: Optional[str] = None):
    fh, w = _writer(path, header, ["eta", "mean_exit_steps", "fitted_exponent_lo",
                                   "fitted_exponent", "fitted_exponent_hi"])
    with fh:
        for eta, m in zip(study.etas, study.mean_times):
            w.writerow([eta, m, study.exponent_ci[0], study.fitted_exponent, study.exponent_ci[1]])


def write_occupancy_csv(report: OccupancyReport, path, header: Optional[str] = None):
    fh, w = _writer(path, header, ["field", "fraction"])
    with fh:
        for i, f in enumerate(report.fraction_per_minimum, start=1):
            w.writerow([i, f])


def write_histogram_csv(counts, edges, path, header: Optional[str] = None):
    fh, w = _writer(path, header, ["bin_left", "bin_right", "count"])
    with fh:
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
