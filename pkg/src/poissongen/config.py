"""Experiment configuration: JSON schema, defaults and diagnostics."""

from __future__ import annotations

import copy
import hashlib
import json

from jsonschema import Draft202012Validator

KINDS = (
    "flow-check",
    "lsi-estimate",
    "lsi-decay",
    "sgld-bound",
    "noisy-bound",
    "second-order-bound",
    "pacbayes-coverage",
    "depoisson-gap",
    "poisson-transform",
)

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_prob = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}
_count = {"type": "integer", "minimum": 1}
_vector = {"type": "array", "items": _nonneg, "minItems": 1}
_real_vector = {"type": "array", "items": _num, "minItems": 1}
_matrix = {"type": "array", "items": _vector, "minItems": 1}
_times = {"type": "array", "items": _nonneg, "minItems": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_random_instance = _obj({"n": {"type": "integer", "minimum": 2, "maximum": 10}, "count": _count,
                         "concentration": _pos})

PROBLEM = _obj({
    "loss": {"enum": ["quadratic", "logistic", "bounded", "zero"]},
    "d": {"type": "integer", "minimum": 1, "maximum": 2},
    "n": _count,
    "w_star": _real_vector,
    "noise_std": _nonneg,
    "B": _pos,
    "s": _pos,
    "holdout_seed": {"type": "integer", "minimum": 0},
})

ALGORITHM = _obj({
    "eta": _pos,
    "lambda": _nonneg,
    "noise": {"enum": ["none", "gaussian", "laplace"]},
    "noise_scale": _pos,
    "batch_size": _count,
    "prior_sigma": _pos,
})

GAUSSIAN_START = _obj({"mean": _num, "var": _pos}, required=("var",))

PARAMS = {
    "flow-check": _obj({"P": _matrix, "P_S": _matrix, "p0": _vector, "prior0": _vector, "t_grid": _times,
                        "random": _random_instance}),
    "lsi-estimate": _obj({"P": _matrix, "pi": _vector, "restarts": _count, "grid": {"type": "boolean"},
                          "ou": _obj({"gamma": _prob, "sigma": _pos}, required=("gamma", "sigma"))}),
    "lsi-decay": _obj({"gamma": _prob, "sigma": _pos, "p0": GAUSSIAN_START, "t_grid": _times}),
    "sgld-bound": _obj({"problem": PROBLEM, "algorithm": ALGORITHM, "T_values": {"type": "array", "items": _pos,
                                                                                  "minItems": 1},
                        "grid_points": {"type": "integer", "minimum": 3}, "zeta": _prob,
                        "ensemble_paths": _count}),
    "noisy-bound": _obj({"P": _matrix, "P_S": _matrix, "p0": _vector, "prior0": _vector,
                         "T_values": {"type": "array", "items": _pos, "minItems": 1},
                         "grid_points": {"type": "integer", "minimum": 3}, "random": _random_instance}),
    "second-order-bound": _obj({"problem": PROBLEM, "algorithm": ALGORITHM, "p0": GAUSSIAN_START,
                                "T_values": {"type": "array", "items": _pos, "minItems": 1},
                                "grid_points": {"type": "integer", "minimum": 3}, "zeta": _prob,
                                "grid_step": _pos}),
    "pacbayes-coverage": _obj({"problem": PROBLEM, "algorithm": ALGORITHM, "t": _pos, "datasets": _count,
                               "zetas": {"type": "array", "items": _prob, "minItems": 1}}),
    "depoisson-gap": _obj({"P": _matrix, "gap": _real_vector, "p0": _vector, "coords": _real_vector,
                           "mode": {"enum": ["bounded", "lipschitz"]}, "B": _pos, "L": _pos,
                           "k_max": {"type": "integer", "minimum": 0}}),
    "poisson-transform": _obj({
        "sequence": _obj({"kind": {"enum": ["constant", "linear", "geometric", "harmonic", "csv"]},
                          "value": _num, "a": _num, "path": {"type": "string"}}, required=("kind",)),
        "growth": _obj({"A": _pos, "r": _nonneg, "p": _nonneg}),
        "n_values": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "fit_range": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2},
        "quad_points": _count,
    }),
}

TOLERANCES = _obj({"tail_tol": _pos, "quad_tol": _pos, "flow_residual": _pos, "fd_residual": _pos,
                   "imag_tol": _pos})

SCHEMA = {
    "type": "object",
    "properties": {
        "experiment": {"enum": list(KINDS)},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "tolerances": TOLERANCES,
        "params": {"type": "object"},
    },
    "required": ["experiment"],
    "additionalProperties": False,
    "allOf": [
        {"if": {"properties": {"experiment": {"const": k}}, "required": ["experiment"]},
         "then": {"properties": {"params": PARAMS[k]}}}
        for k in KINDS
    ],
}

DEFAULT_TOLERANCES = {"tail_tol": 1e-12, "quad_tol": 1e-9, "flow_residual": 1e-8, "fd_residual": 1e-4,
                      "imag_tol": 1e-8}

_PROBLEM_DEFAULTS = {"loss": "quadratic", "d": 1, "n": 50, "w_star": [1.0], "noise_std": 0.5, "B": 1.0,
                     "s": 1.0, "holdout_seed": 12345}
_ALGO_DEFAULTS = {"eta": 0.1, "lambda": 1.0, "noise": "gaussian", "noise_scale": 0.3}

DEFAULTS = {
    "flow-check": {"t_grid": [0.5, 1.0, 2.0]},
    "lsi-estimate": {"restarts": 32, "grid": True},
    "lsi-decay": {"gamma": 0.5, "sigma": 1.0, "p0": {"mean": 2.0, "var": 0.5}, "t_grid": [0.5, 1.0, 2.0, 4.0]},
    "sgld-bound": {"problem": _PROBLEM_DEFAULTS, "algorithm": _ALGO_DEFAULTS, "T_values": [1.0, 2.0, 5.0],
                   "grid_points": 65, "zeta": 0.1, "ensemble_paths": 2000},
    "noisy-bound": {"T_values": [1.0, 2.0, 5.0], "grid_points": 65},
    "second-order-bound": {"problem": _PROBLEM_DEFAULTS,
                           "algorithm": {"eta": 0.02, "lambda": 1.0, "noise": "none", "noise_scale": 0.5},
                           "p0": {"mean": 0.0, "var": 16.0}, "T_values": [1.0, 2.0], "grid_points": 33,
                           "zeta": 0.1},
    "pacbayes-coverage": {"problem": _PROBLEM_DEFAULTS, "algorithm": _ALGO_DEFAULTS, "t": 2.0, "datasets": 500,
                          "zetas": [0.05, 0.1]},
    "depoisson-gap": {"mode": "bounded", "B": 1.0, "L": 1.0, "k_max": 50},
    "poisson-transform": {"sequence": {"kind": "harmonic"}, "n_values": list(range(1, 21)),
                          "fit_range": [10, 60]},
}

_validator = Draft202012Validator(SCHEMA)


def _path(err) -> str:
    out = "$"
    for p in err.absolute_path:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def schema_errors(cfg) -> list:
    """['<json path>: <message>', ...] sorted by path."""
    errs = sorted(_validator.iter_errors(cfg), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    return [f"{_path(e)}: {e.message}" for e in errs]


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve(cfg: dict, seed_override=None):
    """(resolved config, warnings). Assumes the config passed schema validation."""
    warnings = []
    out = copy.deepcopy(cfg)
    if seed_override is not None:
        out["seed"] = int(seed_override)
    elif "seed" not in out:
        out["seed"] = 0
        warnings.append("seed defaulted to 0")
    out["tolerances"] = _merge(DEFAULT_TOLERANCES, out.get("tolerances", {}))
    out["params"] = _merge(DEFAULTS[out["experiment"]], out.get("params", {}))
    if out["experiment"] == "noisy-bound" and "P" not in out["params"] and "random" not in out["params"]:
        out["params"]["random"] = {"n": 3, "count": 50}
    if out["experiment"] == "flow-check" and "P" not in out["params"] and "random" not in out["params"]:
        out["params"]["random"] = {"n": 4, "count": 10}
    return out, warnings


def precondition_warnings(cfg: dict) -> list:
    """Cheap checks that predict a refusal at run time."""
    kind = cfg["experiment"]
    p = cfg.get("params", {})
    out = []
    algo = p.get("algorithm")
    if algo and kind in ("sgld-bound", "second-order-bound", "pacbayes-coverage"):
        g = algo.get("eta", 0) * algo.get("lambda", 0)
        if not 0 < g < 1:
            out.append(f"lambda*eta = {g:g} violates 0 < lambda*eta < 1; the run will be refused")
    if kind == "depoisson-gap":
        if p.get("P") is None or p.get("gap") is None or p.get("p0") is None:
            out.append("depoisson-gap needs P, gap and p0")
    return out


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]
