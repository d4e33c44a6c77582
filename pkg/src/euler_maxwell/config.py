"""Experiment configuration: YAML file, defaults, validation with line numbers."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import yaml

SUBCOMMANDS = ("roots", "propagate", "verify-linear", "lyapunov", "decay-fit", "simulate")

DEFAULTS = {
    "seed": 0,
    "gamma": 5.0 / 3.0,
    "output_dir": "out",
    "roots": {"kmin": 1e-3, "kmax": 1e3, "n": 1000},
    "propagate": {
        "k": [0.3, -0.2, 0.5],
        "times": [0.0, 0.5, 1.0, 2.0, 5.0, 10.0],
        "state": "random",
    },
    "verify-linear": {
        "n_cases": 100,
        "kmin": 1e-3,
        "kmax": 1e2,
        "t_max": 10.0,
        "tol": 1e-10,
        "gammas": [1.4, 5.0 / 3.0, 2.0],
    },
    "lyapunov": {
        "kappa": [0.1, 0.01, 0.005],
        "n_equivalence": 10000,
        "kmin": 1e-3,
        "kmax": 1e3,
        "n_modes": 200,
        "n_train": 200,
        "n_validate": 200,
    },
    "decay-fit": {
        "width": 3.0,
        "magnetic": "projected",
        "window": [10.0, 500.0],
        "n_times": 40,
        "n_radial": 2000,
    },
    "simulate": {
        "n_grid": 32,
        "box_len": 62.83185307179586,
        "amplitude": 1e-2,
        "n_steps": 1000,
        "cfl": 0.5,
        "N": 2,
        "kappa": [0.1, 0.01, 0.005],
        "every": 1,
        "snapshot_every": 0,
        "linear_amplitude": 1e-8,
        "linear_steps": 100,
        "order_steps": 10,
    },
}


def _positive(x):
    return x > 0


# (key, type, predicate, description) per block
_RULES = {
    "roots": {
        "kmin": (float, _positive, "> 0"),
        "kmax": (float, _positive, "> 0"),
        "n": (int, lambda x: 2 <= x <= 10**7, "in [2, 1e7]"),
    },
    "propagate": {
        "k": (list, lambda v: len(v) == 3, "a 3-vector"),
        "times": (list, lambda v: len(v) >= 1 and all(t >= 0 for t in v), "non-negative times"),
        "state": ((str, list), lambda v: v == "random" or len(v) == 10,
                  "'random' or 10 [re, im] pairs"),
    },
    "verify-linear": {
        "n_cases": (int, _positive, "> 0"),
        "kmin": (float, _positive, "> 0"),
        "kmax": (float, _positive, "> 0"),
        "t_max": (float, _positive, "> 0"),
        "tol": (float, lambda x: 1e-13 <= x <= 1e-6, "in [1e-13, 1e-6]"),
        "gammas": (list, lambda v: len(v) > 0 and all(g > 1 for g in v), "values > 1"),
    },
    "lyapunov": {
        "kappa": (list, lambda v: len(v) == 3 and all(x >= 0 for x in v), "three weights >= 0"),
        "n_equivalence": (int, _positive, "> 0"),
        "kmin": (float, _positive, "> 0"),
        "kmax": (float, _positive, "> 0"),
        "n_modes": (int, _positive, "> 0"),
        "n_train": (int, _positive, "> 0"),
        "n_validate": (int, _positive, "> 0"),
    },
    "decay-fit": {
        "width": (float, _positive, "> 0"),
        "magnetic": (str, lambda v: v in ("projected", "curl"), "'projected' or 'curl'"),
        "window": (list, lambda v: len(v) == 2 and 0 <= v[0] < v[1], "[t_min, t_max]"),
        "n_times": (int, lambda x: x >= 10, ">= 10"),
        "n_radial": (int, lambda x: x >= 100, ">= 100"),
    },
    "simulate": {
        "n_grid": (int, lambda x: 8 <= x <= 256 and x % 2 == 0, "even, in [8, 256]"),
        "box_len": (float, _positive, "> 0"),
        "amplitude": (float, lambda x: 0 < x <= 1, "in (0, 1]"),
        "n_steps": (int, _positive, "> 0"),
        "cfl": (float, lambda x: 0 < x <= 1, "in (0, 1]"),
        "N": (int, lambda x: 1 <= x <= 8, "in [1, 8]"),
        "kappa": (list, lambda v: len(v) == 3 and all(x >= 0 for x in v), "three weights >= 0"),
        "every": (int, _positive, "> 0"),
        "snapshot_every": (int, lambda x: x >= 0, ">= 0"),
        "linear_amplitude": (float, _positive, "> 0"),
        "linear_steps": (int, _positive, "> 0"),
        "order_steps": (int, _positive, "> 0"),
    },
}


class ConfigError(ValueError):
    """Bad configuration; the message names the file, line and field."""


@dataclass
class ExperimentConfig:
    subcommand: str
    seed: int
    gamma: float
    output_dir: Path
    params: dict

    def resolved(self) -> dict:
        """Plain dict of everything that influences the outputs."""
        return {"subcommand": self.subcommand, "seed": self.seed, "gamma": self.gamma,
                "params": self.params}

    def digest(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _key_lines(node, prefix=()):
    """Map key paths to 1-based line numbers from a composed YAML node."""
    lines = {}
    if isinstance(node, yaml.MappingNode):
        for knode, vnode in node.value:
            path = prefix + (str(knode.value),)
            lines[path] = knode.start_mark.line + 1
            lines.update(_key_lines(vnode, path))
    return lines


def _to_float(value):
    # YAML 1.1 reads "1e-3" (no decimal point) as a string
    if isinstance(value, bool):
        raise ValueError
    return float(value)


def _coerce(value, typ, where):
    if typ is float:
        try:
            return _to_float(value)
        except (TypeError, ValueError):
            pass
    if typ is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if isinstance(typ, tuple) and isinstance(value, typ):
        return value
    if typ in (str, list) and isinstance(value, typ):
        return value
    raise ConfigError(f"{where}: expected {getattr(typ, '__name__', typ)}, got {value!r}")


def _numeric_list(value, where):
    try:
        return [_to_float(x) for x in value]
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a list of numbers, got {value!r}") from None


def parse_config(text: str | None, subcommand: str, *, source: str = "<config>",
                 seed: int | None = None, output_dir: str | None = None) -> ExperimentConfig:
    """Merge YAML text over the defaults and validate the block for ``subcommand``."""
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    raw, lines = {}, {}
    if text is not None:
        try:
            node = yaml.compose(text)
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            loc = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
            raise ConfigError(f"{loc}: {getattr(exc, 'problem', None) or exc}") from None
        raw = raw or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{source}: top level must be a mapping")
        lines = _key_lines(node)

    def where(*path):
        line = lines.get(tuple(path))
        return f"{source}:{line}: {'.'.join(path)}" if line else f"{source}: {'.'.join(path)}"

    allowed_top = {"subcommand", "seed", "gamma", "output_dir", *SUBCOMMANDS}
    for key in raw:
        if key not in allowed_top:
            raise ConfigError(f"{where(str(key))}: unknown key")
    if "subcommand" in raw and raw["subcommand"] != subcommand:
        raise ConfigError(f"{where('subcommand')}: file is for {raw['subcommand']!r}, "
                          f"command line asked for {subcommand!r}")

    seed_val = raw.get("seed", DEFAULTS["seed"]) if seed is None else seed
    if isinstance(seed_val, bool) or not isinstance(seed_val, int) or seed_val < 0:
        raise ConfigError(f"{where('seed')}: expected a non-negative integer, got {seed_val!r}")
    gamma = _coerce(raw.get("gamma", DEFAULTS["gamma"]), float, where("gamma"))
    if not math.isfinite(gamma):
        raise ConfigError(f"{where('gamma')}: must be finite")
    if not gamma > 1:
        raise ConfigError(f"{where('gamma')}: must be > 1, got {gamma}")
    out = output_dir if output_dir is not None else raw.get("output_dir", DEFAULTS["output_dir"])
    if not isinstance(out, str):
        raise ConfigError(f"{where('output_dir')}: expected a path string")

    params = copy.deepcopy(DEFAULTS[subcommand])
    block = raw.get(subcommand, {}) or {}
    if not isinstance(block, dict):
        raise ConfigError(f"{where(subcommand)}: expected a mapping")
    rules = _RULES[subcommand]
    for key, value in block.items():
        if key not in rules:
            raise ConfigError(f"{where(subcommand, str(key))}: unknown key")
        typ, ok, desc = rules[key]
        w = where(subcommand, key)
        value = _coerce(value, typ, w)
        if key in ("k", "times", "gammas", "kappa", "window"):
            value = _numeric_list(value, w)
        if not ok(value):
            raise ConfigError(f"{w}: must be {desc}, got {value!r}")
        params[key] = value
    if "kmin" in params and params["kmin"] >= params["kmax"]:
        raise ConfigError(f"{where(subcommand, 'kmin')}: kmin must be below kmax")
    return ExperimentConfig(subcommand, int(seed_val), gamma, Path(out), params)


def load_config(path, subcommand: str, **overrides) -> ExperimentConfig:
    if path is None:
        return parse_config(None, subcommand, **overrides)
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{p}: {exc.strerror}") from None
    return parse_config(text, subcommand, source=str(p), **overrides)
