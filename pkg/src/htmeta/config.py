"""Experiment configuration: JSON schema, presets and merging."""
from __future__ import annotations

import copy
import hashlib
import json
import math
import os

import jsonschema

from .errors import ConfigError

_number_or_inf = {"oneOf": [{"type": "number", "exclusiveMinimum": 0},
                            {"type": "string", "enum": ["inf", "Infinity"]}]}
_point = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_box = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}

MC_SCHEMA = {
    "type": "object",
    "properties": {
        "n_samples": {"type": "integer", "minimum": 100},
        "block": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "mc_rel_tol": {"type": "number", "exclusiveMinimum": 0},
        "t_gap_factor": {"type": "number", "exclusiveMinimum": 0},
        "uniform_weight": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "tail_probe": {"type": "integer", "minimum": 0},
        "floor_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
    },
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "properties": {
        "landscape": {
            "type": "object",
            "properties": {"kind": {"enum": ["fourwell", "threewell", "twowell", "wells1d", "grid1d"]}},
            "required": ["kind"],
        },
        "noise": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["lomax", "gaussian", "zero"]},
                "alpha": {"type": "number", "exclusiveMinimum": 1},
                "c0": {"type": "number", "exclusiveMinimum": 0},
                "std": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        "run": {
            "type": "object",
            "properties": {
                "eta": {"type": "number", "exclusiveMinimum": 0},
                "b": _number_or_inf,
                "steps": {"type": "integer", "minimum": 1},
                "x0": _point,
                "box": {"oneOf": [_box, {"type": "null"}]},
                "seed": {"type": "integer", "minimum": 0},
                "replicas": {"type": "integer", "minimum": 1},
                "thin": {"type": "integer", "minimum": 1},
                "eps_marker": {"type": "number", "exclusiveMinimum": 0},
                "project": {"type": "boolean"},
                "hist_bins": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "analysis": {
            "type": "object",
            "properties": {
                "eps": {"type": "number", "exclusiveMinimum": 0},
                "field": {"type": "integer", "minimum": 1},
                "eta_grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                             "minItems": 2},
                "replicas": {"type": "integer", "minimum": 2},
                "max_steps": {"type": "integer", "minimum": 1},
                "ks_mc": {"type": "integer", "minimum": 10},
                "n_boot": {"type": "integer", "minimum": 10},
                "level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "mc": MC_SCHEMA,
            },
            "additionalProperties": False,
        },
        "graph": {
            "type": "object",
            "properties": {"b": _number_or_inf, "method": {"enum": ["auto", "analytic", "sampled"]}},
            "additionalProperties": False,
        },
        "limit": {
            "type": "object",
            "properties": {
                "b": _number_or_inf,
                "i0": {"type": "integer", "minimum": 1},
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "n_paths": {"type": "integer", "minimum": 0},
                "box": {"oneOf": [_box, {"type": "null"}]},
                "mc_tol": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "train": {
            "type": "object",
            "properties": {
                "oracle": {
                    "type": "object",
                    "properties": {
                        "kind": {"enum": ["landscape", "linreg"]},
                        "noise": {"type": "number", "exclusiveMinimum": 0},
                        "n": {"type": "integer", "minimum": 2},
                        "dim": {"type": "integer", "minimum": 1},
                        "sb_size": {"type": "integer", "minimum": 1},
                        "lb_size": {"type": "integer", "minimum": 1},
                        "seed": {"type": "integer", "minimum": 0},
                    },
                    "required": ["kind"],
                    "additionalProperties": False,
                },
                "heavy": {"type": "object"},
                "baseline": {"type": "object"},
                "theta0": _point,
                "runs": {"type": "integer", "minimum": 1},
                "good_fields": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "sharpness": {
                    "type": "object",
                    "properties": {
                        "delta": {"type": "number", "exclusiveMinimum": 0},
                        "n_samples": {"type": "integer", "minimum": 2},
                        "loss_cap": {"type": "number"},
                        "theta": _point,
                        "seed": {"type": "integer", "minimum": 0},
                    },
                    "additionalProperties": False,
                },
            },
            "required": ["oracle"],
        },
        "check": {"type": "object"},
    },
}

_FOUR_WELL_RUN = {"eta": 1e-3, "steps": 10_000_000, "x0": [0.3], "box": [-1.6, 1.6], "seed": 0,
              "replicas": 10, "thin": 1000, "eps_marker": 0.1, "project": True, "hist_bins": 320}
_LOMAX = {"kind": "lomax", "c0": 0.1, "alpha": 1.2}
_GAUSS = {"kind": "gaussian", "std": 1.0}


def _fourwell_run(noise, b, check=None):
    cfg = {"landscape": {"kind": "fourwell"}, "noise": dict(noise), "run": dict(_FOUR_WELL_RUN, b=b)}
    if check:
        cfg["check"] = check
    return cfg


def _exit(field):
    return {"landscape": {"kind": "fourwell"}, "noise": dict(_LOMAX),
            "run": {"b": 0.5, "box": [-1.6, 1.6], "seed": 0},
            "analysis": {"field": field, "eta_grid": [4e-3, 2e-3, 1e-3], "replicas": 200,
                         "max_steps": 200_000_000, "ks_mc": 1000, "n_boot": 1000, "level": 0.01},
            "check": {"exponent_tol": 0.15}}


PRESETS = {
    "fourwell-heavy": _fourwell_run(_LOMAX, "inf", {"min_fraction_each": 0.02}),
    "fourwell-heavy-clipped": _fourwell_run(_LOMAX, 0.5, {"min_fraction_widest": 0.95}),
    "fourwell-gauss": _fourwell_run(_GAUSS, "inf", {"stay_field": 3}),
    "fourwell-gauss-clipped": _fourwell_run(_GAUSS, 0.5, {"stay_field": 3}),
    "threewell": {"landscape": {"kind": "threewell"}, "graph": {"b": 0.5, "method": "auto"}},
    "fourwell-graph": {"landscape": {"kind": "fourwell"}, "graph": {"b": 0.5, "method": "auto"}},
    "fourwell-limit": {"landscape": {"kind": "fourwell"}, "noise": dict(_LOMAX),
                    "limit": {"b": 0.5, "i0": 3, "horizon": 100.0, "n_paths": 5,
                              "box": [-1.6, 1.6], "mc_tol": 0.05},
                    "analysis": {"mc": {"n_samples": 1_000_000, "seed": 0}},
                    "run": {"seed": 0}},
    "exit-field1": _exit(1),
    "exit-field2": _exit(2),
    "train-toy": {
        "landscape": {"kind": "fourwell"},
        "run": {"seed": 0},
        "train": {
            "oracle": {"kind": "landscape", "noise": 1.0, "sb_size": 1, "lb_size": 64},
            "heavy": {"eta": 1e-3, "b": 0.5, "c": 0.1, "alpha": 1.2, "steps": 100_000,
                      "cooldown": 2000, "box": [-1.6, 1.6], "method": "heavy"},
            "baseline": {"eta": 1e-3, "b": 0.5, "c": 0.1, "alpha": 1.2, "steps": 100_000,
                         "cooldown": 2000, "box": [-1.6, 1.6], "method": "sb"},
            "theta0": [0.3],
            "runs": 50,
            "good_fields": [2, 4],
            "sharpness": {"delta": 0.01, "n_samples": 100, "loss_cap": 5.0},
        },
        "check": {"heavy_min": 0.9, "baseline_max": 0.6},
    },
}


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(cfg: dict) -> dict:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    return cfg


def load(path=None, preset=None, overrides=None, env=os.environ) -> dict:
    """Preset, then config file, then overrides; HTMETA_SEED replaces run.seed."""
    cfg = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = copy.deepcopy(PRESETS[preset])
    if path is not None:
        try:
            with open(path) as fh:
                cfg = deep_merge(cfg, json.load(fh))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if overrides:
        cfg = deep_merge(cfg, overrides)
    seed = env.get("HTMETA_SEED")
    if seed is not None:
        try:
            cfg.setdefault("run", {})["seed"] = int(seed)
        except ValueError:
            raise ConfigError(f"HTMETA_SEED must be an integer, got {seed!r}") from None
    return validate(cfg)


def as_float(v) -> float:
    """Config numbers with ``"inf"`` for an infinite threshold."""
    if isinstance(v, str):
        return math.inf
    return float(v)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
