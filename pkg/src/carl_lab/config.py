"""Run configuration for the command line: defaults, JSON files, flag overrides, validation.

A run config is a nested dict with the sections ``data``, ``model``, ``hrl``,
``eval`` and ``sweep`` plus the top-level ``env``, ``seed`` and ``out``.
Values resolve as flags > config file > defaults, and every field is checked
before any work starts.
"""

from __future__ import annotations

import copy
import json

from .carl import VARIANT_ALIASES, VARIANTS, CarlConfig
from .data import direction_predicate, region_predicate
from .envs import NAMED_ENVS, env_from_descriptor
from .evalkit import SWEEP_AXES, ExperimentConfig
from .hrl import ALGOS, MODES, CoTrainConfig

DEFAULTS = {
    "env": "rooms5",
    "seed": 0,
    "out": "runs/default",
    "data": {
        "path": None,
        "episodes": 500,
        "noise": 0.2,
        "horizon": 200,
        "coverage_region": "left",
        "coverage_keep": 1.0,
        "imbalance_dir": "down",
        "imbalance_remove": 0.0,
    },
    "model": {
        "variant": "carl",
        "k": 3,
        "tau": 0.1,
        "d": 16,
        "stride": 1,
        "goal_mode": "interior",
        "batch_size": 256,
        "lr": 3e-4,
        "steps": 3000,
        "phi_hidden": [64, 64, 64],
        "psi_hidden": [32, 32],
        "xi_hidden": [64],
    },
    "hrl": {
        "algo": "hiql",
        "mode": "cotrain",
        "lambda_aux": 0.3,
        "kappa": 0.7,
        "beta": 3.0,
        "gamma": 0.99,
        "steps": 3000,
        "batch_size": 256,
        "lr": 3e-4,
        "hidden": [64, 64, 64],
        "state_input": True,
        "train_rooms": None,
        "encoder": None,
    },
    "eval": {"episodes": 20, "horizon": 50, "rooms": None},
    "sweep": {"axis": "k", "values": [1, 2, 3, 5], "seeds": [0, 1, 2], "methods": ["carl", "baseline"]},
}

# named agent presets a sweep can compare
METHOD_PRESETS = {
    "carl": {"mode": "cotrain"},
    "carl-pretrain": {"mode": "pretrain"},
    "baseline": {"mode": "none"},
    "hgcbc": {"algo": "hgcbc", "mode": "cotrain"},
    "hgcbc-baseline": {"algo": "hgcbc", "mode": "none"},
}


class ValidationError(ValueError):
    """A config field failed validation; ``field`` is its dotted path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def merge(base: dict, override: dict, prefix: str = "") -> dict:
    """Deep-merge ``override`` into a copy of ``base``, rejecting keys ``base`` does not have."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ValidationError(path, "unknown key")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ValidationError(path, "expected an object")
            out[key] = merge(base[key], value, path + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            d = json.load(f)
    except json.JSONDecodeError as e:
        raise ValidationError("config", f"{path} is not valid JSON ({e.msg})") from None
    if not isinstance(d, dict):
        raise ValidationError("config", "top level must be an object")
    return d


def set_path(d: dict, path: str, value) -> None:
    keys = path.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def resolve(file_config: dict | None, flag_values: dict) -> dict:
    """Defaults, then the config file, then flags (``{dotted path: value}``); validated."""
    cfg = merge(DEFAULTS, file_config or {})
    overrides = {}
    for path, value in flag_values.items():
        set_path(overrides, path, value)
    cfg = merge(cfg, overrides)
    validate(cfg)
    return cfg


# -- validation ----------------------------------------------------------------------

def _int(cfg, path, lo=None, hi=None):
    v = _get(cfg, path)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValidationError(path, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ValidationError(path, f"must be >= {lo} (got {v})")
    if hi is not None and v > hi:
        raise ValidationError(path, f"must be <= {hi} (got {v})")


def _num(cfg, path, lo=None, hi=None, lo_open=False, hi_open=False):
    v = _get(cfg, path)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(path, f"expected a number, got {v!r}")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ValidationError(path, f"must be {'>' if lo_open else '>='} {lo} (got {v})")
    if hi is not None and (v >= hi if hi_open else v > hi):
        raise ValidationError(path, f"must be {'<' if hi_open else '<='} {hi} (got {v})")


def _choice(cfg, path, choices):
    v = _get(cfg, path)
    if v not in choices:
        raise ValidationError(path, f"must be one of {sorted(choices)} (got {v!r})")


def _int_list(cfg, path, allow_none=True, lo=0):
    v = _get(cfg, path)
    if v is None and allow_none:
        return
    if not isinstance(v, list) or not v:
        raise ValidationError(path, "expected a non-empty list of integers")
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, int) or x < lo:
            raise ValidationError(f"{path}[{i}]", f"expected an integer >= {lo}, got {x!r}")


def _get(cfg, path):
    d = cfg
    for k in path.split("."):
        d = d[k]
    return d


def validate(cfg: dict) -> None:
    """Raise ValidationError naming the first offending field."""
    env = cfg["env"]
    if isinstance(env, str) and env not in NAMED_ENVS:
        try:
            env_from_descriptor(env)
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise ValidationError("env", f"not a known environment name or layout file ({e})") from None
    elif isinstance(env, dict):
        try:
            env_from_descriptor(env)
        except (ValueError, KeyError, TypeError) as e:
            raise ValidationError("env", f"invalid layout descriptor ({e})") from None
    _int(cfg, "seed", 0)
    if not isinstance(cfg["out"], str) or not cfg["out"]:
        raise ValidationError("out", "expected a non-empty path")

    _int(cfg, "data.episodes", 1)
    _num(cfg, "data.noise", 0.0, 1.0)
    _int(cfg, "data.horizon", 1)
    _num(cfg, "data.coverage_keep", 0.0, 1.0)
    _num(cfg, "data.imbalance_remove", 0.0, 1.0)
    for path, check in (("data.coverage_region", region_predicate), ("data.imbalance_dir", direction_predicate)):
        try:
            check(_get(cfg, path))
        except (ValueError, KeyError, TypeError):
            raise ValidationError(path, f"unknown value {_get(cfg, path)!r}") from None

    _choice(cfg, "model.variant", set(VARIANTS) | set(VARIANT_ALIASES))
    _int(cfg, "model.k", 1)
    _num(cfg, "model.tau", 0.0, lo_open=True)
    _int(cfg, "model.d", 1)
    _int(cfg, "model.stride", 1)
    _choice(cfg, "model.goal_mode", {"interior", "surface"})
    _int(cfg, "model.batch_size", 1)
    _num(cfg, "model.lr", 0.0, lo_open=True)
    _int(cfg, "model.steps", 0)
    for name in ("phi_hidden", "psi_hidden", "xi_hidden"):
        _int_list(cfg, f"model.{name}", allow_none=False, lo=1)

    _choice(cfg, "hrl.algo", set(ALGOS))
    _choice(cfg, "hrl.mode", set(MODES))
    _num(cfg, "hrl.lambda_aux", 0.0, 1.0)
    _num(cfg, "hrl.kappa", 0.0, 1.0, lo_open=True, hi_open=True)
    _num(cfg, "hrl.beta", 0.0, lo_open=True)
    _num(cfg, "hrl.gamma", 0.0, 1.0, lo_open=True, hi_open=True)
    _int(cfg, "hrl.steps", 0)
    _int(cfg, "hrl.batch_size", 1)
    _num(cfg, "hrl.lr", 0.0, lo_open=True)
    _int_list(cfg, "hrl.hidden", allow_none=False, lo=1)
    if not isinstance(cfg["hrl"]["state_input"], bool):
        raise ValidationError("hrl.state_input", "expected true or false")
    _int_list(cfg, "hrl.train_rooms")

    _int(cfg, "eval.episodes", 1)
    _int(cfg, "eval.horizon", 1)
    _int_list(cfg, "eval.rooms")

    _choice(cfg, "sweep.axis", set(SWEEP_AXES))
    if not isinstance(cfg["sweep"]["values"], list) or not cfg["sweep"]["values"]:
        raise ValidationError("sweep.values", "expected a non-empty list")
    _int_list(cfg, "sweep.seeds", allow_none=False)
    methods = cfg["sweep"]["methods"]
    if not isinstance(methods, list) or not methods:
        raise ValidationError("sweep.methods", "expected a non-empty list")
    for i, m in enumerate(methods):
        if m not in METHOD_PRESETS:
            raise ValidationError(f"sweep.methods[{i}]", f"must be one of {sorted(METHOD_PRESETS)} (got {m!r})")


# -- conversion to module configs -------------------------------------------------------

def carl_config(cfg: dict) -> CarlConfig:
    m = cfg["model"]
    return CarlConfig(
        variant=m["variant"],
        horizon_k=m["k"],
        tau=float(m["tau"]),
        embed_dim=m["d"],
        phi_hidden=tuple(m["phi_hidden"]),
        psi_hidden=tuple(m["psi_hidden"]),
        xi_hidden=tuple(m["xi_hidden"]),
        action_stride=m["stride"],
        goal_mode=m["goal_mode"],
        batch_size=m["batch_size"],
        lr=float(m["lr"]),
    )


def _hrl_fields(cfg: dict) -> dict:
    h = cfg["hrl"]
    return {
        "algo": h["algo"],
        "mode": h["mode"],
        "lambda_aux": float(h["lambda_aux"]),
        "gamma": float(h["gamma"]),
        "kappa": float(h["kappa"]),
        "beta": float(h["beta"]),
        "horizon_k": cfg["model"]["k"],
        "hidden": tuple(h["hidden"]),
        "batch_size": h["batch_size"],
        "lr": float(h["lr"]),
        "state_input": h["state_input"],
    }


def hrl_config(cfg: dict) -> CoTrainConfig:
    return CoTrainConfig(**_hrl_fields(cfg), carl=carl_config(cfg))


def experiment_config(cfg: dict) -> ExperimentConfig:
    d, e = cfg["data"], cfg["eval"]
    carl = {k: v for k, v in vars(carl_config(cfg)).items()}
    return ExperimentConfig(
        env=cfg["env"],
        episodes=d["episodes"],
        noise=float(d["noise"]),
        data_horizon=d["horizon"],
        train_rooms=cfg["hrl"]["train_rooms"],
        eval_rooms=e["rooms"],
        eval_episodes=e["episodes"],
        eval_horizon=e["horizon"],
        steps=cfg["hrl"]["steps"],
        pretrain_steps=cfg["model"]["steps"],
        coverage_region=d["coverage_region"],
        coverage_keep=float(d["coverage_keep"]),
        imbalance_dir=d["imbalance_dir"],
        imbalance_remove=float(d["imbalance_remove"]),
        hrl={k: v for k, v in _hrl_fields(cfg).items() if k != "horizon_k"} | {"horizon_k": cfg["model"]["k"]},
        carl=carl,
    )
