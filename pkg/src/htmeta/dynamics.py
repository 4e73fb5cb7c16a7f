"""Clipped SGD recursion, its killed variant and first-exit sampling.

All runs draw their noise in blocks from ``numpy.random.Generator`` streams
keyed by ``(seed, replica)``.  Block sizes follow one fixed schedule, so a
full run, a killed run and an exit-time run with the same seed see the same
noise sequence step for step.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numba
import numpy as np

from .errors import HorizonExceeded, NonFinite
from .landscape import BOUNDARY, Landscape, classify_field, grad_1d
from .noise import NoiseModel

FIRST_BLOCK = 1 << 12
MAX_BLOCK = 1 << 20
MARK_BUFFER = 4096


@dataclass(frozen=True)
class RunConfig:
    """Parameters of one SGD run.

    ``b = math.inf`` switches clipping off.  ``projection_box`` is an
    axis-aligned box ``(lo, hi)`` applied coordinatewise after clipping;
    ``project=False`` keeps the box for bookkeeping but stops clamping.
    """

    eta: float
    b: float = math.inf
    steps: int = 1000
    x0: tuple = (0.0,)
    projection_box: Optional[tuple] = None
    seed: int = 0
    replica: int = 0
    thin: int = 100
    eps_marker: float = 0.1
    project: bool = True
    hist_bins: int = 320
    hist_range: Optional[tuple] = None

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if int(self.steps) < 1:
            raise ValueError("steps must be at least 1")
        if int(self.thin) < 1:
            raise ValueError("thin must be at least 1")
        if not self.b > 0:
            raise ValueError("b must be positive (or inf)")
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "x0", tuple(np.atleast_1d(np.asarray(self.x0, dtype=float)).tolist()))

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(self.replica,)))


@dataclass
class Trajectory:
    """Thinned record of a run.

    ``states[k]`` is the iterate at step ``times[k]``.  ``transitions`` holds
    ``(step, field)`` pairs: the step at which the iterate first entered the
    ``eps_marker`` ball around ``m_field`` after having last been marked at
    another minimum.  ``ball_counts[i]`` counts steps 1..n in the ball around
    ``m_{i+1}``; ``hist`` is a full-resolution histogram of visited states.
    """

    times: np.ndarray
    states: np.ndarray
    transitions: list
    final_state: np.ndarray
    steps_run: int
    exited_at: Optional[int] = None
    ball_counts: Optional[np.ndarray] = None
    eps: float = 0.1
    hist: Optional[np.ndarray] = None
    hist_edges: Optional[np.ndarray] = None
    config: Optional[RunConfig] = None
    meta: dict = field(default_factory=dict)

    @property
    def transition_steps(self) -> np.ndarray:
        return np.array([s for s, _ in self.transitions], dtype=np.int64)

    @property
    def transition_fields(self) -> np.ndarray:
        return np.array([f for _, f in self.transitions], dtype=np.int64)


def clip(w, b: float) -> np.ndarray:
    """Rescale ``w`` to norm at most ``b``, keeping its direction."""
    w = np.asarray(w, dtype=float)
    if not math.isfinite(b):
        return w.copy()
    norm = float(np.linalg.norm(w))
    if norm <= b:
        return w.copy()
    return w * (b / norm)


def sgd_step(landscape: Landscape, model: NoiseModel, x, b: float, eta: float,
             rng: np.random.Generator, box: Optional[tuple] = None, z=None) -> np.ndarray:
    """One step x + clip(-eta grad f(x) + eta sigma(x) Z, b), then clamp to ``box``.

    ``z`` overrides the fresh noise draw.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    g = landscape.grad_at(x)
    if not np.all(np.isfinite(g)):
        raise NonFinite(f"gradient is not finite at {x}")
    if z is None:
        z = model.sample_block(rng, 1)[0]
    inc = -eta * g + eta * (landscape.sigma_at(x) @ np.atleast_1d(z))
    out = x + clip(inc, b)
    if box is not None:
        out = np.clip(out, box[0], box[1])
    return out


def block_sizes(total: int) -> Iterable[int]:
    """Noise block schedule: 4096, 8192, ... doubling up to 2**20."""
    size = FIRST_BLOCK
    done = 0
    while done < total:
        n = min(size, total - done)
        yield n
        done += n
        size = min(2 * size, MAX_BLOCK)


@numba.njit(cache=True, nogil=True)
def _run_block_1d(kind, params, x, z, t0, eta, b, sigma, box_lo, box_hi, use_box,
                  minima, eps, last_mark, bounds, btol, alive, use_kill,
                  thin, thin_t, thin_x, n_thin, mark_t, mark_f, n_mark,
                  ball_counts, hist, hist_lo, hist_w):
    n = z.shape[0]
    k = minima.shape[0]
    nb = hist.shape[0]
    for s in range(n):
        g = grad_1d(kind, params, x)
        if not np.isfinite(g):
            return s, x, last_mark, n_thin, n_mark, 3
        d = -eta * g + eta * sigma * z[s]
        if d > b:
            d = b
        elif d < -b:
            d = -b
        x = x + d
        if use_box:
            if x < box_lo:
                x = box_lo
            elif x > box_hi:
                x = box_hi
        t = t0 + s + 1
        for i in range(k):
            if abs(x - minima[i]) < eps:
                ball_counts[i] += 1
                if i != last_mark:
                    mark_t[n_mark] = t
                    mark_f[n_mark] = i + 1
                    n_mark += 1
                    last_mark = i
                break
        if nb > 0:
            j = int(math.floor((x - hist_lo) / hist_w))
            if 0 <= j < nb:
                hist[j] += 1
        if t % thin == 0:
            thin_t[n_thin] = t
            thin_x[n_thin] = x
            n_thin += 1
        if use_kill:
            lab = np.searchsorted(bounds, x) + 1
            for q in range(bounds.shape[0]):
                if abs(x - bounds[q]) <= btol:
                    lab = 0
            if lab == 0 or not alive[lab - 1]:
                return s + 1, x, last_mark, n_thin, n_mark, 1
        if n_mark == mark_t.shape[0]:
            return s + 1, x, last_mark, n_thin, n_mark, 2
    return n, x, last_mark, n_thin, n_mark, 0


def _initial_mark(landscape, x, eps):
    d = np.linalg.norm(landscape.minima - x, axis=1)
    i = int(np.argmin(d))
    return i if d[i] < eps else -1


def _hist_setup(landscape, config):
    if landscape.dim != 1 or config.hist_bins <= 0:
        return np.zeros(0, dtype=np.int64), None
    rng_ = config.hist_range or config.projection_box or landscape.domain
    if rng_ is None:
        return np.zeros(0, dtype=np.int64), None
    edges = np.linspace(rng_[0], rng_[1], config.hist_bins + 1)
    return np.zeros(config.hist_bins, dtype=np.int64), edges


def _run(landscape: Landscape, model: NoiseModel, config: RunConfig,
         class_fields: Optional[set] = None) -> Trajectory:
    rng = config.rng()
    x = np.array(config.x0, dtype=float)
    if x.size != landscape.dim:
        raise ValueError(f"x0 has dimension {x.size}, landscape has {landscape.dim}")
    box = config.projection_box if config.project else None
    eps = config.eps_marker
    k = landscape.n_minima
    last_mark = _initial_mark(landscape, x, eps)
    marks = [(0, last_mark + 1)] if last_mark >= 0 else []
    ball_counts = np.zeros(k, dtype=np.int64)
    hist, edges = _hist_setup(landscape, config)
    times = [0]
    states = [x.copy()]
    fast = landscape.kernel is not None and landscape.sigma is not None and landscape.diffusion is None
    alive = np.zeros(k, dtype=np.bool_)
    if class_fields is not None:
        for c in class_fields:
            alive[c - 1] = True
    exited = None
    t = 0

    if fast:
        kind, params = landscape.kernel
        minima = np.ascontiguousarray(landscape.minima[:, 0])
        bounds = landscape.boundaries if landscape.boundaries is not None else np.zeros(0)
        box_lo, box_hi = (box if box is not None else (-np.inf, np.inf))
        hist_lo = edges[0] if edges is not None else 0.0
        hist_w = (edges[1] - edges[0]) if edges is not None else 1.0
        mark_t = np.zeros(MARK_BUFFER, dtype=np.int64)
        mark_f = np.zeros(MARK_BUFFER, dtype=np.int64)
        xs = float(x[0])
        for n in block_sizes(config.steps):
            z = np.ascontiguousarray(model.sample_block(rng, n)[:, 0])
            thin_t = np.zeros(n // config.thin + 2, dtype=np.int64)
            thin_x = np.zeros(n // config.thin + 2)
            pos = 0
            while pos < n:
                done, xs, last_mark, n_thin, n_mark, status = _run_block_1d(
                    kind, params, xs, z[pos:], t, config.eta, config.b, float(landscape.sigma),
                    box_lo, box_hi, box is not None, minima, eps, last_mark, bounds,
                    landscape.boundary_tol, alive, class_fields is not None, config.thin,
                    thin_t, thin_x, 0, mark_t, mark_f, 0, ball_counts, hist, hist_lo, hist_w)
                times.extend(thin_t[:n_thin].tolist())
                states.extend([np.array([v]) for v in thin_x[:n_thin]])
                marks.extend(zip(mark_t[:n_mark].tolist(), mark_f[:n_mark].tolist()))
                pos += done
                t += done
                if status == 3:
                    raise NonFinite(f"gradient is not finite at step {t + 1}", step=t + 1)
                if status == 1:
                    exited = t
                    break
            if exited is not None:
                break
        x = np.array([xs])
    else:
        for n in block_sizes(config.steps):
            z = model.sample_block(rng, n)
            for s in range(n):
                x = sgd_step(landscape, model, x, config.b, config.eta, rng, box=box, z=z[s])
                if not np.all(np.isfinite(x)):
                    raise NonFinite(f"iterate is not finite at step {t + 1}", step=t + 1)
                t += 1
                d = np.linalg.norm(landscape.minima - x, axis=1)
                i = int(np.argmin(d))
                if d[i] < eps:
                    ball_counts[i] += 1
                    if i != last_mark:
                        marks.append((t, i + 1))
                        last_mark = i
                if edges is not None:
                    j = int(math.floor((x[0] - edges[0]) / (edges[1] - edges[0])))
                    if 0 <= j < hist.size:
                        hist[j] += 1
                if t % config.thin == 0:
                    times.append(t)
                    states.append(x.copy())
                if class_fields is not None:
                    lab = classify_field(landscape, x)
                    if lab == BOUNDARY or lab not in class_fields:
                        exited = t
                        break
            if exited is not None:
                break

    if times[-1] != t:
        times.append(t)
        states.append(x.copy())
    return Trajectory(times=np.asarray(times, dtype=np.int64), states=np.vstack(states),
                      transitions=marks, final_state=x, steps_run=t, exited_at=exited,
                      ball_counts=ball_counts, eps=eps, hist=hist if edges is not None else None,
                      hist_edges=edges, config=config)


def simulate(landscape: Landscape, model: NoiseModel, config: RunConfig) -> Trajectory:
    """Run ``config.steps`` clipped SGD steps from ``config.x0``."""
    return _run(landscape, model, config)


def simulate_killed(landscape: Landscape, model: NoiseModel, config: RunConfig,
                    class_fields) -> Trajectory:
    """As :func:`simulate`, but stop at the first step outside ``class_fields``.

    ``exited_at`` is that step, or None when the run survives the horizon.
    """
    class_fields = set(int(c) for c in class_fields)
    if not class_fields:
        raise ValueError("class_fields must be non-empty")
    start = classify_field(landscape, np.array(config.x0))
    if start not in class_fields:
        raise ValueError(f"x0 lies in field {start}, outside the class {sorted(class_fields)}")
    return _run(landscape, model, config, class_fields=class_fields)


def first_exit_time(landscape: Landscape, model: NoiseModel, config: RunConfig, field: int):
    """First step at which the iterate leaves field ``field``, and where it lands.

    With a projection box the exit is from the field intersected with the
    box.  Raises HorizonExceeded if the run stays inside for ``config.steps``.
    """
    traj = simulate_killed(landscape, model, replace(config, thin=max(config.thin, 1 << 30)), {field})
    if traj.exited_at is None:
        raise HorizonExceeded(f"no exit from field {field} within {config.steps} steps")
    return traj.exited_at, traj.final_state


def simulate_batch(landscape: Landscape, model: NoiseModel, config: RunConfig, replicas: int,
                   workers: int = 1) -> list:
    """Independent runs with replica streams ``0..replicas-1``."""
    configs = [replace(config, replica=r) for r in range(replicas)]
    if workers <= 1:
        return [simulate(landscape, model, c) for c in configs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda c: simulate(landscape, model, c), configs))


def exit_times_batch(landscape: Landscape, model: NoiseModel, config: RunConfig, field: int,
                     replicas: int, workers: int = 1):
    """First-exit samples over replicas; runs hitting the horizon are dropped.

    Returns ``(times, exit_points, n_horizon)``.
    """

    def one(r):
        try:
            return first_exit_time(landscape, model, replace(config, replica=r), field)
        except HorizonExceeded:
            return None

    if workers <= 1:
        out = [one(r) for r in range(replicas)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(one, range(replicas)))
    ok = [o for o in out if o is not None]
    times = np.array([o[0] for o in ok], dtype=np.int64)
    points = np.array([o[1] for o in ok]).reshape(len(ok), -1)
    return times, points, len(out) - len(ok)


def write_trajectory_csv(traj: Trajectory, path, header: Optional[str] = None):
    d = traj.states.shape[1]
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["step"] + [f"x{i + 1}" for i in range(d)])
        for t, s in zip(traj.times, traj.states):
            w.writerow([int(t)] + [repr(float(v)) for v in s])


def write_transitions_csv(traj: Trajectory, path, header: Optional[str] = None):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["step", "field"])
        w.writerows(traj.transitions)
