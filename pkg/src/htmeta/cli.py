"""Command-line experiment runner.

    htmeta <simulate|graph|limit|exit|train> [--config PATH] [--preset NAME]
           [--out DIR] [--workers N] [--dry-run] [--check] [overrides]

Exit codes: 0 success, 2 configuration or I/O error, 3 numerical failure,
4 a ``--check`` threshold failed.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .analysis import (exit_study, occupancy, write_exit_csv,
                       write_histogram_csv, write_occupancy_csv)
from .dynamics import RunConfig, simulate_batch, write_trajectory_csv, write_transitions_csv
from .errors import ConfigError, HtmetaError
from .geometry import build_graph, width_report
from .landscape import landscape_from_spec
from .limit_chain import (MCSpec, limit_chain, occupation_fractions, simulate_ctmc,
                          stationary_distribution, write_ctmc_path_csv)
from .noise import lambda_star, noise_from_spec
from .optimizer import (HeavyTrainConfig, LandscapeNoiseOracle, LinearRegressionOracle,
                        expected_sharpness, head_to_head, train, write_train_log)
from . import plotting

COMMANDS = ("simulate", "graph", "limit", "exit", "train")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4


class Context:
    """Output directory, provenance header and collected check results."""

    def __init__(self, command, cfg, out, workers):
        self.command = command
        self.cfg = cfg
        self.out = Path(out)
        self.workers = workers
        self.hash = cfgmod.config_hash(cfg)
        self.header = f"htmeta {__version__} command={command} config_sha256={self.hash}"
        self.checks = []
        self.files = []

    def path(self, name):
        p = self.out / name
        self.files.append(str(p))
        return p

    def dump_json(self, name, obj):
        body = {"provenance": self.header}
        body.update(obj)
        with open(self.path(name), "w") as fh:
            json.dump(body, fh, indent=2, default=_jsonable)

    def check(self, name, ok, detail):
        self.checks.append({"name": name, "pass": bool(ok), "detail": detail})


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _landscape(cfg):
    if "landscape" not in cfg:
        raise ConfigError("config has no landscape section")
    return landscape_from_spec(cfg["landscape"])


def _noise(cfg):
    if "noise" not in cfg:
        raise ConfigError("config has no noise section")
    return noise_from_spec(cfg["noise"])


def _box(v):
    return None if v is None else (float(v[0]), float(v[1]))


def _run_config(cfg, landscape, **extra):
    run = cfg.get("run", {})
    x0 = run.get("x0")
    if x0 is None:
        x0 = landscape.minimum(1).tolist()
    box = _box(run.get("box"))
    kw = dict(eta=float(run.get("eta", 1e-3)), b=cfgmod.as_float(run.get("b", "inf")),
              steps=int(run.get("steps", 1000)), x0=tuple(x0), projection_box=box,
              seed=int(run.get("seed", 0)), thin=int(run.get("thin", 100)),
              eps_marker=float(run.get("eps_marker", 0.1)), project=bool(run.get("project", True)),
              hist_bins=int(run.get("hist_bins", 320)), hist_range=box)
    kw.update(extra)
    return RunConfig(**kw)


def _mc_spec(cfg, box=None):
    spec = dict(cfg.get("analysis", {}).get("mc", {}))
    if "n_samples" in spec:
        spec["n_samples"] = int(spec["n_samples"])
    return MCSpec(box=box, **spec)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(ctx: Context):
    cfg = ctx.cfg
    land, model = _landscape(cfg), _noise(cfg)
    rc = _run_config(cfg, land)
    replicas = int(cfg.get("run", {}).get("replicas", 1))
    trajs = simulate_batch(land, model, rc, replicas, ctx.workers)
    try:
        wr = width_report(land, rc.b)
        widest = sorted(wr.widest)
        lam = lambda_star(model, rc.eta, wr.j_star) if model.heavy_tailed else None
    except HtmetaError:
        widest, lam = list(land.fields), None

    reports = []
    for r, tr in enumerate(trajs):
        write_trajectory_csv(tr, ctx.path(f"trajectory_r{r}.csv"), ctx.header)
        write_transitions_csv(tr, ctx.path(f"transitions_r{r}.csv"), ctx.header)
        reports.append(occupancy(tr, land, widest, lambda_star=lam))
    steps = sum(r.steps for r in reports)
    pooled_counts = sum(np.asarray(tr.ball_counts, dtype=float) for tr in trajs)
    pooled = [float(c / steps) for c in pooled_counts]
    ctx.dump_json("occupancy.json", {
        "eps": rc.eps_marker, "widest": widest,
        "replicas": [vars(r) for r in reports],
        "pooled": {"fraction_per_minimum": pooled,
                   "fraction_widest": float(sum(pooled[i - 1] for i in widest))},
    })
    pooled_report = type(reports[0])(pooled, sum(pooled[i - 1] for i in widest), rc.eps_marker, steps)
    write_occupancy_csv(pooled_report, ctx.path("occupancy.csv"), ctx.header)
    hist = sum(tr.hist for tr in trajs)
    edges = trajs[0].hist_edges
    write_histogram_csv(hist, edges, ctx.path("histogram.csv"), ctx.header)
    if land.dim == 1:
        title = f"{cfg['noise']['kind']} noise, b = {rc.b}"
        plotting.plot_histogram(land, hist, edges, ctx.path("histogram.png"), widest, title)
        plotting.plot_trajectory(trajs[0], land, ctx.path("trajectory.png"), title)

    chk = cfg.get("check", {})
    fw = [r.fraction_widest for r in reports]
    if "min_fraction_widest" in chk:
        bar = float(chk["min_fraction_widest"])
        need = math.ceil(float(chk.get("min_seed_share", 0.9)) * len(fw))
        n_ok = sum(f >= bar for f in fw)
        ctx.check("fraction_widest", n_ok >= need,
                  f"{n_ok}/{len(fw)} replicas at >= {bar} (need {need}); fractions {fw}")
    if "min_fraction_each" in chk:
        bar = float(chk["min_fraction_each"])
        worst = [min(r.fraction_per_minimum) for r in reports]
        ctx.check("fraction_each", all(w >= bar for w in worst),
                  f"smallest per-minimum fraction by replica {worst} vs {bar}")
    if "stay_field" in chk:
        f = int(chk["stay_field"])
        left = [r for r, tr in enumerate(trajs)
                if any(land.classify(s) != f for s in tr.states) or
                any(g != f for g in tr.transition_fields)]
        ctx.check("stay_field", not left, f"replicas leaving field {f}: {left}")
    return {"fraction_widest": fw, "pooled_fraction": pooled, "widest": widest}


def cmd_graph(ctx: Context):
    cfg = ctx.cfg
    land = _landscape(cfg)
    g = cfg.get("graph", {})
    b = cfgmod.as_float(g.get("b", 0.5))
    method = g.get("method", "auto")
    wr = width_report(land, b, method=method)
    graph = build_graph(land, b, wr, method=method)
    ctx.dump_json("widths.json", wr.as_dict())
    ctx.dump_json("graph.json", graph.to_json())
    with open(ctx.path("graph.dot"), "w") as fh:
        fh.write(f"// {ctx.header}\n")
        fh.write(graph.to_dot())
    plotting.plot_reach(land, wr, ctx.path("reach.png"))
    chk = cfg.get("check", {})
    if "expect_irreducible" in chk:
        ctx.check("irreducible", graph.irreducible == bool(chk["expect_irreducible"]),
                  f"irreducible={graph.irreducible}")
    if "expect_classes" in chk:
        want = sorted(sorted(c) for c in chk["expect_classes"])
        got = sorted(sorted(c) for c in graph.classes)
        ctx.check("classes", want == got, f"classes {got}, expected {want}")
    if "expect_j" in chk:
        ctx.check("widths", list(chk["expect_j"]) == wr.j_b, f"J = {wr.j_b}")
    return {"j_b": wr.j_b, "widest": sorted(wr.widest), "classes": [sorted(c) for c in graph.classes],
            "irreducible": graph.irreducible}


def cmd_limit(ctx: Context):
    cfg = ctx.cfg
    land, model = _landscape(cfg), _noise(cfg)
    lim = cfg.get("limit", {})
    b = cfgmod.as_float(lim.get("b", 0.5))
    i0 = int(lim.get("i0", 1))
    if i0 not in land.fields:
        raise ConfigError(f"i0 = {i0} is not a field of the landscape (1..{land.n_minima})")
    mc = _mc_spec(cfg, _box(lim.get("box")))
    wr, rates, theta, ctmc = limit_chain(land, model, b, i0, mc, mc_tol=float(lim.get("mc_tol", 0.05)))
    pi = stationary_distribution(ctmc) if len(ctmc.states) > 1 else np.ones(1)
    ctx.dump_json("rates.json", rates.to_json())
    ctx.dump_json("theta.json", {"theta": theta, "widest": sorted(wr.widest)})
    ctx.dump_json("ctmc.json", dict(ctmc.to_json(), stationary=pi, widths=wr.as_dict()))
    rng = np.random.default_rng(np.random.SeedSequence(int(cfg.get("run", {}).get("seed", 0)),
                                                       spawn_key=(7,)))
    horizon = float(lim.get("horizon", 100.0))
    paths, occ = [], []
    for k in range(int(lim.get("n_paths", 5))):
        p = simulate_ctmc(ctmc, horizon, rng)
        write_ctmc_path_csv(p, ctx.path(f"ctmc_path_{k}.csv"), ctx.header)
        paths.append(p)
        occ.append(occupation_fractions(p, ctmc.states).tolist())
    if paths:
        plotting.plot_ctmc_paths(paths, ctx.path("ctmc_paths.png"))
    ctx.check("rate_row_sums", bool(np.all(np.abs(rates.q.sum(1) - rates.q_diag)
                                           <= 0.05 * rates.q_diag + 3 * rates.se_diag)),
              f"sum_j q(i,j) = {rates.q.sum(1).tolist()} vs q(i) = {rates.q_diag.tolist()}")
    ctx.check("theta_rows", bool(np.all(np.abs(theta.sum(1) - 1) <= 1e-10)), "theta rows sum to one")
    ctx.check("generator_rows", bool(np.all(np.abs(ctmc.generator.sum(1)) <= 1e-10)),
              "generator rows sum to zero")
    return {"states": ctmc.states, "generator": ctmc.generator.tolist(), "stationary": pi.tolist(),
            "path_occupation": occ}


def cmd_exit(ctx: Context):
    cfg = ctx.cfg
    land, model = _landscape(cfg), _noise(cfg)
    an = cfg.get("analysis", {})
    run = cfg.get("run", {})
    field_ = int(an.get("field", 1))
    if field_ not in land.fields:
        raise ConfigError(f"unknown field {field_}; the landscape has fields 1..{land.n_minima}")
    etas = an.get("eta_grid")
    if not etas:
        raise ConfigError("analysis.eta_grid is required for the exit study")
    study = exit_study(land, model, field_, cfgmod.as_float(run.get("b", "inf")), etas,
                       int(an.get("replicas", 200)), steps=int(an.get("max_steps", 10 ** 9)),
                       box=_box(run.get("box")), x0=run.get("x0"), seed=int(run.get("seed", 0)),
                       workers=ctx.workers, n_boot=int(an.get("n_boot", 1000)),
                       ks_mc=int(an.get("ks_mc", 1000)), level=float(an.get("level", 0.01)))
    write_exit_csv(study, ctx.path("exit.csv"), ctx.header)
    with open(ctx.path("scaled_exit_times.csv"), "w") as fh:
        fh.write(f"# {ctx.header}\nscaled_time\n")
        fh.writelines(f"{v!r}\n" for v in map(float, study.scaled_times))
    summary = {"field": field_, "b": study.b, "j": study.j, "etas": study.etas,
               "mean_exit_steps": study.mean_times, "n_horizon": study.n_horizon, "C": study.C,
               "scaled_means": study.scaled_means, "fitted_exponent": study.fitted_exponent,
               "exponent_ci": list(study.exponent_ci), "theory_exponent": study.theory_exponent,
               "ks": {"statistic": study.ks_statistic, "critical": study.ks_critical,
                      "pvalue": study.ks_pvalue, "pass": study.ks_pass}}
    ctx.dump_json("exit_study.json", summary)
    plotting.plot_exit_scaling(study, ctx.path("exit_scaling.png"))
    plotting.plot_exit_ecdf(study.scaled_times, ctx.path("exit_ecdf.png"))
    chk = cfg.get("check", {})
    if "exponent_tol" in chk:
        tol = float(chk["exponent_tol"])
        ctx.check("exponent", abs(study.fitted_exponent - study.theory_exponent) <= tol,
                  f"slope {study.fitted_exponent:.4f} vs {study.theory_exponent:.4f} +- {tol}")
    ctx.check("ks_exponential", study.ks_pass,
              f"KS {study.ks_statistic:.4f} vs critical {study.ks_critical:.4f}")
    return summary


def _oracle(cfg, land):
    spec = cfg.get("train", {}).get("oracle")
    if spec is None:
        raise ConfigError("train.oracle is required")
    kind = spec["kind"]
    if kind == "landscape":
        return LandscapeNoiseOracle(land, float(spec.get("noise", 1.0)), int(spec.get("sb_size", 1)),
                                    int(spec.get("lb_size", 64)))
    return LinearRegressionOracle(int(spec.get("n", 2000)), int(spec.get("dim", 5)),
                                  float(spec.get("noise", 0.5)), int(spec.get("sb_size", 8)),
                                  int(spec.get("lb_size", 256)), int(spec.get("seed", 0)))


def _train_config(d, seed):
    d = dict(d)
    d.setdefault("seed", seed)
    if d.get("box") is not None:
        d["box"] = _box(d["box"])
    if "b" in d:
        d["b"] = cfgmod.as_float(d["b"])
    try:
        return HeavyTrainConfig(**d)
    except TypeError as exc:
        raise ConfigError(f"bad training config: {exc}") from None


def cmd_train(ctx: Context):
    cfg = ctx.cfg
    tr = cfg.get("train")
    if tr is None or "oracle" not in tr:
        raise ConfigError("train.oracle is required")
    land = _landscape(cfg) if tr["oracle"]["kind"] == "landscape" else None
    oracle = _oracle(cfg, land)
    seed = int(cfg.get("run", {}).get("seed", 0))
    out = {}
    theta0 = tr.get("theta0", [0.0] * oracle.dim)
    final = None
    if "heavy" in tr:
        heavy = _train_config(tr["heavy"], seed)
        res = train(oracle, heavy, theta0, np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,))))
        write_train_log(res, ctx.path("train_log.csv"), ctx.header)
        plotting.plot_train_log(res.log, ctx.path("train_loss.png"), f"method {heavy.method}")
        final = res.theta
        out["final_theta"] = res.theta.tolist()
        out["final_loss"] = float(oracle.loss(res.theta))
        if "baseline" in tr and land is not None:
            base = _train_config(tr["baseline"], seed)
            h2h = head_to_head(oracle, heavy, base, theta0, int(tr.get("runs", 50)), land.classify,
                               tr.get("good_fields", sorted(width_report(land, heavy.b).widest)))
            out["head_to_head"] = {k: v for k, v in h2h.items()}
            chk = cfg.get("check", {})
            if "heavy_min" in chk:
                ctx.check("heavy_success", h2h["heavy"] >= float(chk["heavy_min"]),
                          f"heavy {h2h['heavy']:.3f} vs >= {chk['heavy_min']}")
            if "baseline_max" in chk:
                ctx.check("baseline_success", h2h["baseline"] <= float(chk["baseline_max"]),
                          f"baseline {h2h['baseline']:.3f} vs <= {chk['baseline_max']}")
    sh = tr.get("sharpness")
    if sh is not None:
        theta = sh.get("theta", None if final is None else final.tolist())
        if theta is None:
            raise ConfigError("sharpness needs train.sharpness.theta when no training run is configured")
        est, se = expected_sharpness(oracle.loss, theta, float(sh.get("delta", 0.01)),
                                     int(sh.get("n_samples", 100)), float(sh.get("loss_cap", 5.0)),
                                     np.random.default_rng(int(sh.get("seed", seed))))
        out["sharpness"] = {"theta": list(np.atleast_1d(theta)), "estimate": est, "se": se,
                            "delta": sh.get("delta", 0.01)}
    if not out:
        raise ConfigError("nothing to do: give train.heavy or train.sharpness")
    ctx.dump_json("train_report.json", out)
    return out


RUNNERS = {"simulate": cmd_simulate, "graph": cmd_graph, "limit": cmd_limit, "exit": cmd_exit,
           "train": cmd_train}


# ---------------------------------------------------------------------------
# argument handling


def build_parser():
    p = argparse.ArgumentParser(prog="htmeta", description=__doc__.split("\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="experiment config (JSON)")
    p.add_argument("--preset", choices=sorted(cfgmod.PRESETS), help="embedded base config")
    p.add_argument("--out", default="htmeta_out", help="output directory")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--dry-run", action="store_true", help="validate the config and stop")
    p.add_argument("--check", action="store_true", help="exit 4 when a configured check fails")
    g = p.add_argument_group("overrides")
    g.add_argument("--b", help="clip threshold (number or inf)")
    g.add_argument("--eta", type=float)
    g.add_argument("--steps", type=int)
    g.add_argument("--noise", choices=["lomax", "gaussian", "zero"])
    g.add_argument("--seed", type=int)
    g.add_argument("--replicas", type=int)
    g.add_argument("--field", type=int)
    return p


def _b_value(text):
    if text.lower() in ("inf", "infinity"):
        return "inf"
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"--b must be a number or inf, got {text!r}") from None


def overrides_from_args(args) -> dict:
    over = {}
    run = {}
    if args.b is not None:
        b = _b_value(args.b)
        run["b"] = b
        over["graph"] = {"b": b}
        over["limit"] = {"b": b}
    if args.eta is not None:
        run["eta"] = args.eta
    if args.steps is not None:
        run["steps"] = args.steps
    if args.seed is not None:
        run["seed"] = args.seed
    if args.replicas is not None:
        run["replicas"] = args.replicas
    if run:
        over["run"] = run
    if args.noise is not None:
        over["noise"] = {"gaussian": {"kind": "gaussian", "std": 1.0},
                         "lomax": {"kind": "lomax", "c0": 0.1, "alpha": 1.2},
                         "zero": {"kind": "zero"}}[args.noise]
    if args.field is not None:
        over["analysis"] = {"field": args.field}
    return over


def _replace_noise(cfg, over):
    # a --noise switch replaces the whole noise block instead of merging into it
    if "noise" in over:
        cfg = dict(cfg)
        cfg.pop("noise", None)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config is None and args.preset is None:
            raise ConfigError("give --config or --preset")
        over = overrides_from_args(args)
        cfg = cfgmod.load(args.config, args.preset, None)
        cfg = cfgmod.validate(cfgmod.deep_merge(_replace_noise(cfg, over), over))
        ctx = Context(args.command, cfg, args.out, max(1, args.workers))
        if args.dry_run:
            _landscape(cfg)
            if args.command in ("simulate", "limit", "exit"):
                _noise(cfg)
            print(json.dumps({"command": args.command, "config_sha256": ctx.hash, "config": cfg},
                             indent=2))
            return EXIT_OK
        ctx.out.mkdir(parents=True, exist_ok=True)
        result = RUNNERS[args.command](ctx)
        ctx.dump_json("summary.json", {"command": args.command, "config": cfg, "result": result,
                                       "checks": ctx.checks, "files": ctx.files})
    except (ConfigError, OSError) as exc:
        print(f"htmeta: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HtmetaError as exc:
        print(f"htmeta: numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"htmeta: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for c in ctx.checks:
        print(f"check {c['name']}: {'PASS' if c['pass'] else 'FAIL'} ({c['detail']})")
    print(f"wrote {len(ctx.files)} files to {ctx.out}")
    if args.check and not all(c["pass"] for c in ctx.checks):
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
