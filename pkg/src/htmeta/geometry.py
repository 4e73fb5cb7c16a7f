"""Jump widths of attraction fields and the typical transition graph.

A field's width J_b(i) is the least number of clipped jumps (each of norm at
most b, separated by arbitrary stretches of gradient flow) that carry the
iterate from m_i out of I_i.  In 1-D with constant diffusion this is
ceil(r(i) / b); the sampled reachability routine handles everything else.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DegenerateThreshold, Unbounded
from .landscape import BOUNDARY, Landscape, classify_field, gradient_flow

DEG_TOL = 1e-9


@dataclass
class WidthReport:
    b: float
    r: list
    j_b: list
    j_star: int
    widest: set

    def as_dict(self) -> dict:
        return {"b": self.b, "r": self.r, "j_b": self.j_b, "j_star": self.j_star,
                "widest": sorted(self.widest)}


@dataclass
class TransitionGraph:
    nodes: list
    edges: list
    classes: list
    class_kinds: list
    b: float = math.nan
    meta: dict = field(default_factory=dict)

    @property
    def irreducible(self) -> bool:
        return len(self.classes) == 1

    def class_of(self, i: int) -> int:
        for c, members in enumerate(self.classes):
            if i in members:
                return c
        raise KeyError(i)

    def absorbing_classes(self) -> list:
        return [c for c, k in zip(self.classes, self.class_kinds) if k == "absorbing"]

    def to_json(self) -> dict:
        return {"nodes": self.nodes, "edges": [list(e) for e in self.edges],
                "classes": [sorted(c) for c in self.classes], "class_kinds": self.class_kinds,
                "irreducible": self.irreducible, "b": self.b}

    def to_dot(self) -> str:
        lines = ["digraph transitions {"]
        for c, (members, kind) in enumerate(zip(self.classes, self.class_kinds)):
            lines.append(f"  subgraph cluster_{c} {{")
            lines.append(f'    label="class {c + 1} ({kind})";')
            for i in sorted(members):
                lines.append(f'    m{i} [label="m{i}"];')
            lines.append("  }")
        for i, j in self.edges:
            lines.append(f"  m{i} -> m{j};")
        lines.append("}")
        return "\n".join(lines) + "\n"


def effective_width(landscape: Landscape, i: int) -> float:
    """Distance from m_i to the complement of its field (inf if there is none)."""
    if landscape.boundaries is not None:
        lo, hi = landscape.interval(i)
        m = float(landscape.minimum(i)[0])
        return min(m - lo, hi - m)
    if landscape.n_minima == 1:
        return math.inf
    # general d: probe the field along rays from m_i
    return _sampled_width(landscape, i)


def _sampled_width(landscape, i, n_dir=16, r_max=10.0, n_r=50, seed=0):
    rng = np.random.default_rng(seed)
    d = landscape.dim
    dirs = np.vstack([np.eye(d), -np.eye(d), rng.standard_normal((n_dir, d))])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    m = landscape.minimum(i)
    best = math.inf
    radii = np.linspace(r_max / n_r, r_max, n_r)
    for u in dirs:
        lo = 0.0
        for r in radii:
            if r >= best:
                break
            if classify_field(landscape, m + r * u) != i:
                # refine by bisection between lo and r
                a, c = lo, r
                for _ in range(25):
                    mid = 0.5 * (a + c)
                    if classify_field(landscape, m + mid * u) == i:
                        a = mid
                    else:
                        c = mid
                best = min(best, c)
                break
            lo = r
    return best


def _analytic_ok(landscape: Landscape) -> bool:
    return landscape.dim == 1 and landscape.boundaries is not None and landscape.diffusion is None


def jump_width(landscape: Landscape, i: int, b: float, deg_tol: float = DEG_TOL,
               method: str = "auto", **sample_kw) -> int:
    """J_b(i).  Raises DegenerateThreshold at exact multiples r(i)/b."""
    if not b > 0:
        raise ValueError("b must be positive")
    r = effective_width(landscape, i)
    if math.isinf(r):
        raise Unbounded(f"field {i} has no exterior")
    if not math.isfinite(b):
        return 1
    ratio = r / b
    if abs(ratio - round(ratio)) <= deg_tol and round(ratio) >= 1:
        raise DegenerateThreshold(f"r({i})/b = {ratio:.12g} is an integer")
    if method == "auto":
        method = "analytic" if _analytic_ok(landscape) else "sampled"
    if method == "analytic":
        return max(1, math.ceil(ratio))
    return sampled_jump_width(landscape, i, b, **sample_kw)


def width_report(landscape: Landscape, b: float, deg_tol: float = DEG_TOL,
                 method: str = "auto") -> WidthReport:
    r = [effective_width(landscape, i) for i in landscape.fields]
    j = [jump_width(landscape, i, b, deg_tol, method) for i in landscape.fields]
    j_star = max(j)
    return WidthReport(b=b, r=r, j_b=j, j_star=j_star,
                       widest={i for i, ji in zip(landscape.fields, j) if ji == j_star})


# ---------------------------------------------------------------------------
# sampled reachability


def _jump_directions(dim, n_dir, rng):
    if dim == 1:
        return np.array([[-1.0], [1.0]])
    v = np.vstack([np.eye(dim), -np.eye(dim), rng.standard_normal((n_dir, dim))])
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _flow_points(landscape, p, n):
    """Up to ``n`` points spread along the gradient flow from ``p`` (excluding p)."""
    res = gradient_flow(landscape, p, flow_tol=1e-3, t_max=20.0, dt=2e-2, record_every=25)
    pts = [q for _, q in (res.path_samples or [])][1:]
    if not pts:
        return None
    pick = np.linspace(0, len(pts) - 1, min(n, len(pts))).astype(int)
    return np.array([pts[j] for j in pick])


def _reach_rounds(landscape, i, b, n_dir=16, flow_samples=3, magnitudes=(1.0, 0.5),
                  frontier_cap=64, seed=0):
    rng = np.random.default_rng(seed)
    dirs = _jump_directions(landscape.dim, n_dir, rng)
    steps = (np.array([m * b for m in magnitudes])[:, None, None] * dirs[None]).reshape(-1, landscape.dim)
    frontier = landscape.minimum(i)[None, :].copy()
    while True:
        bases = [frontier]
        if flow_samples > 0:
            for p in frontier[:16]:
                pts = _flow_points(landscape, p, flow_samples)
                if pts is not None:
                    bases.append(pts)
        new = (np.vstack(bases)[:, None, :] + steps[None]).reshape(-1, landscape.dim)
        new = np.unique(np.round(new, 12), axis=0)
        yield new
        if new.shape[0] > frontier_cap:
            # keep the points farthest from m_i plus a random remainder
            dist = np.linalg.norm(new - landscape.minimum(i), axis=1)
            far = np.argsort(dist)[-(frontier_cap // 2):]
            rest = rng.choice(new.shape[0], frontier_cap - far.size, replace=False)
            new = new[np.unique(np.concatenate([far, rest]))]
        frontier = new


def reachable_sets(landscape: Landscape, i: int, b: float, k_max: int, **kw) -> list:
    """Sampled approximations of G^{(k)|b}(m_i) for k = 1..k_max.

    Each round takes the current frontier, adds up to ``flow_samples``
    points of the gradient flow started there, and jumps from every such
    point by ``mag * b`` in ``n_dir`` directions.  In 1-D the directions are
    +-1, so the extreme points m_i +- k b are hit exactly.  Returns a list of
    ``(n_k, d)`` arrays.
    """
    rounds = _reach_rounds(landscape, i, b, **kw)
    return [next(rounds) for _ in range(k_max)]


def sampled_jump_width(landscape: Landscape, i: int, b: float, k_max: int = 32, **kw) -> int:
    """Smallest k whose sampled reachable set meets the complement of I_i."""
    rounds = _reach_rounds(landscape, i, b, **kw)
    for k in range(1, k_max + 1):
        pts = next(rounds)
        if any(classify_field(landscape, p) != i for p in pts):
            return k
    raise Unbounded(f"no exit from field {i} within {k_max} sampled jumps")


# ---------------------------------------------------------------------------
# graph


def _edges_1d(landscape: Landscape, wr: WidthReport) -> list:
    edges = []
    for i in landscape.fields:
        m = float(landscape.minimum(i)[0])
        reach = wr.j_b[i - 1] * wr.b
        lo, hi = m - reach, m + reach
        for j in landscape.fields:
            if j == i:
                continue
            a, c = landscape.interval(j)
            if lo < c and hi > a:  # closed [lo, hi] meets open (a, c)
                edges.append((i, j))
    return edges


def _edges_sampled(landscape: Landscape, wr: WidthReport, **kw) -> list:
    edges = set()
    for i in landscape.fields:
        sets = reachable_sets(landscape, i, wr.b, wr.j_b[i - 1], **kw)
        for p in sets[-1]:
            lab = classify_field(landscape, p)
            if lab not in (BOUNDARY, i):
                edges.add((i, lab))
    return sorted(edges)


def communication_classes(nodes: list, edges: list):
    """Strongly connected classes and their kinds (absorbing iff closed)."""
    n = len(nodes)
    pos = {v: k for k, v in enumerate(nodes)}
    rows = [pos[i] for i, _ in edges]
    cols = [pos[j] for _, j in edges]
    adj = csr_matrix((np.ones(len(edges)), (rows, cols)), shape=(n, n))
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    classes = [set() for _ in range(n_comp)]
    for v, lab in zip(nodes, labels):
        classes[lab].add(v)
    classes.sort(key=min)
    kinds = []
    for c in classes:
        leaves = any(i in c and j not in c for i, j in edges)
        kinds.append("transient" if leaves else "absorbing")
    return classes, kinds


def build_graph(landscape: Landscape, b: float, wr: Optional[WidthReport] = None,
                method: str = "auto", **sample_kw) -> TransitionGraph:
    """Typical transition graph: i -> j iff G^{(J_b(i))|b}(m_i) meets I_j."""
    if wr is None:
        wr = width_report(landscape, b)
    if method == "auto":
        method = "analytic" if _analytic_ok(landscape) else "sampled"
    edges = _edges_1d(landscape, wr) if method == "analytic" else _edges_sampled(landscape, wr, **sample_kw)
    nodes = list(landscape.fields)
    classes, kinds = communication_classes(nodes, edges)
    return TransitionGraph(nodes=nodes, edges=edges, classes=classes, class_kinds=kinds, b=b,
                           meta={"method": method, "widths": wr.as_dict()})


def write_graph(graph: TransitionGraph, json_path=None, dot_path=None):
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump(graph.to_json(), fh, indent=2)
    if dot_path is not None:
        with open(dot_path, "w") as fh:
            fh.write(graph.to_dot())
