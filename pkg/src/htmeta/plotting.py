"""Report figures.  Everything renders to files through the Agg backend."""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 120


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def _mark_fields(ax, landscape, widest=()):
    if landscape.boundaries is not None:
        for s in landscape.boundaries:
            ax.axvline(s, color="0.6", ls=":", lw=0.8)
    for i in landscape.fields:
        m = float(landscape.minimum(i)[0])
        ax.axvline(m, color="C3" if i in widest else "C2", ls="--", lw=0.8)


def plot_histogram(landscape, counts, edges, path, widest=(), title=None):
    """Visited-location histogram with the potential overlaid on a twin axis."""
    counts = np.asarray(counts, dtype=float)
    edges = np.asarray(edges, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 3.6))
    total = counts.sum()
    dens = counts / (total * np.diff(edges)) if total > 0 else counts
    ax.bar(edges[:-1], dens, width=np.diff(edges), align="edge", color="C0", alpha=0.7)
    ax.set_yscale("log")
    ax.set_xlabel("x")
    ax.set_ylabel("density of visited locations")
    _mark_fields(ax, landscape, widest)
    if landscape.potential is not None:
        ax2 = ax.twinx()
        xs = np.linspace(edges[0], edges[-1], 800)
        ax2.plot(xs, [landscape.potential(np.array([x])) for x in xs], color="k", lw=1)
        ax2.set_ylabel("f(x)")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_trajectory(traj, landscape, path, title=None):
    """Thinned path of a 1-D run against step count."""
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(traj.times, traj.states[:, 0], lw=0.4, color="C0")
    if landscape.boundaries is not None:
        for s in landscape.boundaries:
            ax.axhline(s, color="0.6", ls=":", lw=0.8)
    for i in landscape.fields:
        ax.axhline(float(landscape.minimum(i)[0]), color="C2", ls="--", lw=0.6)
    ax.set_xlabel("step")
    ax.set_ylabel("x")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_exit_scaling(study, path):
    """log-log mean exit time with the fitted slope and the theoretical one."""
    inv = 1.0 / np.asarray(study.etas)
    means = np.asarray(study.mean_times)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(inv, means, "o", color="C0", label="mean exit steps")
    x = np.log(inv)
    a = np.polyfit(x, np.log(means), 1)
    grid = np.linspace(x.min(), x.max(), 50)
    ax.loglog(np.exp(grid), np.exp(np.polyval(a, grid)), "-", color="C0",
              label=f"fit, slope {study.fitted_exponent:.3f}")
    anchor = np.log(means[-1]) - study.theory_exponent * x[-1]
    ax.loglog(np.exp(grid), np.exp(anchor + study.theory_exponent * grid), "--", color="C3",
              label=f"J(alpha-1)+1 = {study.theory_exponent:.3f}")
    ax.set_xlabel("1/eta")
    ax.set_ylabel("steps")
    ax.set_title(f"exit from field {study.field}, b = {study.b}")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_exit_ecdf(scaled, path):
    """Empirical CDF of scaled exit times against Exp(1)."""
    s = np.sort(np.asarray(scaled, dtype=float))
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.step(s, np.arange(1, s.size + 1) / s.size, where="post", label="empirical")
    grid = np.linspace(0, s[-1] if s.size else 1.0, 200)
    ax.plot(grid, 1 - np.exp(-grid), "--", color="C3", label="Exp(1)")
    ax.set_xlabel("scaled exit time")
    ax.set_ylabel("CDF")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_ctmc_paths(paths, path, horizon=None):
    """Step plot of sampled limit-chain paths."""
    fig, ax = plt.subplots(figsize=(7, 3))
    for k, p in enumerate(paths):
        t = p.jump_times
        h = p.horizon if horizon is None else horizon
        keep = t <= h
        tt = np.append(t[keep], h)
        vv = np.append(p.states[keep], p.states[keep][-1])
        ax.step(tt, vv + 0.04 * k, where="post", lw=0.8)
    ax.set_xlabel("scaled time")
    ax.set_ylabel("minimum")
    return _save(fig, path)


def plot_train_log(log, path, title=None):
    """Loss along a training run, with clipped steps marked."""
    if not log:
        return None
    arr = np.array([(s, l, c) for s, l, _, c in log], dtype=float)
    fig, ax = plt.subplots(figsize=(6, 3.4))
    ax.plot(arr[:, 0], arr[:, 1], lw=0.6, color="C0")
    clipped = arr[:, 2] > 0
    if clipped.any():
        ax.plot(arr[clipped, 0], arr[clipped, 1], ".", ms=2, color="C3", label="clipped step")
        ax.legend(fontsize=8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_reach(landscape, wr, path):
    """Potential with the clipped reach interval [m - J b, m + J b] of each minimum."""
    if landscape.dim != 1 or landscape.potential is None:
        return None
    lo = float(landscape.minima.min()) - 0.5
    hi = float(landscape.minima.max()) + 0.5
    if landscape.domain is not None:
        lo, hi = max(lo, landscape.domain[0]), min(hi, landscape.domain[1])
    xs = np.linspace(lo, hi, 600)
    fs = np.array([landscape.potential(np.array([x])) for x in xs])
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.plot(xs, fs, color="k", lw=1)
    _mark_fields(ax, landscape, wr.widest)
    y0 = fs.min() - 0.05 * (np.ptp(fs) or 1.0)
    for i in landscape.fields:
        m = float(landscape.minimum(i)[0])
        reach = wr.j_b[i - 1] * wr.b if math.isfinite(wr.b) else np.ptp(xs)
        y = y0 - 0.04 * (np.ptp(fs) or 1.0) * i
        ax.plot([max(m - reach, lo), min(m + reach, hi)], [y, y], lw=2,
                color="C3" if i in wr.widest else "C2")
        ax.text(m, y, f" J={wr.j_b[i - 1]}", fontsize=7, va="bottom")
    ax.set_xlabel("x")
    ax.set_ylabel("f(x)")
    ax.set_title(f"reach of J clipped jumps, b = {wr.b}")
    return _save(fig, path)
