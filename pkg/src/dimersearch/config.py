"""Run and sweep configuration files.

The format is INI (parsed with ``configparser``) with the sections
``[problem]``, ``[solver]``, ``[run]`` and, for sweeps, ``[sweep]``::

    [problem]
    name = quartic2d
    x0 = 0.2, 1.0

    [solver]
    algorithm = linesearch
    metric = identity

    [sweep]
    axis = alpha, beta
    values = 0.5, 0.1, 0.01

Unknown sections or keys are errors; every error carries the line number
of the offending entry when there is one.
"""

import configparser
import copy
import re
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError
from .problems import (
    AsymmetricWell1D,
    DoubleWell1D,
    Quartic2D,
    build_morse_vacancy,
    build_phase_field,
)
from .solvers import SolverConfig

__all__ = ["RunConfig", "SweepConfig", "read_config", "parse_config", "build_problem"]


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _vector(text):
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    if not parts:
        raise ValueError("empty vector")
    return np.array([float(p) for p in parts])


def _int(text):
    value = float(text)
    if value != int(value):
        raise ValueError(f"not an integer: {text!r}")
    return int(value)


def _list(text):
    return [p.strip() for p in text.split(",") if p.strip()]


PROBLEM_PARAMS = {
    "quartic2d": {},
    "doublewell1d": {},
    "asymwell1d": {"c": float},
    "morse_vacancy": {
        "a": float,
        "r_free": float,
        "r_total": float,
        "n_free": _int,
        "displaced_fraction": float,
    },
    "phase_field": {
        "n": _int,
        "epsilon": float,
        "free_corners": _bool,
        "scaling": str,
        "delta": float,
        "minimum": _int,
    },
}

_SOLVER_TYPES = {bool: _bool, int: _int, float: float}

KEYS = {
    "problem": {"name": str, "x0": _vector, "v0": _vector},
    "solver": {
        "algorithm": str,
        "metric": str,
        "metric_refresh": str,
        "alpha": float,
        "beta": float,
        **{f.name: _SOLVER_TYPES[type(f.default)] for f in fields(SolverConfig)},
    },
    "run": {"seed": _int, "output": str},
    "sweep": {"axis": _list, "values": _list, "jobs": _int},
}
for _params in PROBLEM_PARAMS.values():
    KEYS["problem"].update(_params)

ALGORITHMS = ("simple", "exact_rotation", "linesearch")
METRICS = ("identity", "connectivity", "stabilized_laplacian")


@dataclass
class RunConfig:
    problem: str = "quartic2d"
    params: dict = field(default_factory=dict)
    x0: np.ndarray = None
    v0: np.ndarray = None
    algorithm: str = "linesearch"
    metric: str = "identity"
    metric_refresh: str = "fixed_at_start"
    alpha: float = 0.1
    beta: float = 0.1
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0
    output: str = None


@dataclass
class SweepConfig:
    base: RunConfig
    axis: list
    values: list
    jobs: int = 1
    raw: dict = field(default=None, repr=False)


def _key_lines(text):
    """Map ``(section, key)`` to its line number (1-based)."""
    lines = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", stripped)
        if m:
            section = m.group(1).strip()
            lines[(section, None)] = lineno
            continue
        m = re.match(r"([^=:\s][^=:]*?)\s*[=:]", stripped)
        if m and section is not None and not line[0].isspace():
            lines[(section, m.group(1).strip())] = lineno
    return lines


def _read_raw(text):
    """Parse INI text into ``{section: {key: (value, lineno)}}``."""
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"), empty_lines_in_values=False
    )
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        msg = exc.message if hasattr(exc, "message") else str(exc)
        raise ConfigError(msg.splitlines()[0], lineno) from None
    lines = _key_lines(text)
    raw = {}
    for section in parser.sections():
        if section not in KEYS:
            raise ConfigError(f"unknown section [{section}]", lines.get((section, None)))
        raw[section] = {}
        for key, value in parser.items(section):
            lineno = lines.get((section, key))
            if key not in KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", lineno)
            raw[section][key] = (value, lineno)
    return raw


def _convert(raw, section, key):
    value, lineno = raw[section][key]
    try:
        return KEYS[section][key](value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {section}.{key}: {exc}", lineno) from None


def build_run(raw):
    cfg = RunConfig()
    problem = raw.get("problem", {})
    if "name" not in problem:
        raise ConfigError("[problem] needs a name")
    name, name_line = problem["name"]
    if name not in PROBLEM_PARAMS:
        raise ConfigError(
            f"unknown problem {name!r}; choose from {', '.join(PROBLEM_PARAMS)}", name_line
        )
    cfg.problem = name
    for key, (_, lineno) in problem.items():
        if key == "name":
            continue
        if key in ("x0", "v0"):
            setattr(cfg, key, _convert(raw, "problem", key))
        elif key in PROBLEM_PARAMS[name]:
            cfg.params[key] = _convert(raw, "problem", key)
        else:
            raise ConfigError(f"key {key!r} does not apply to problem {name}", lineno)

    solver = raw.get("solver", {})
    solver_kwargs = {}
    for key in solver:
        value = _convert(raw, "solver", key)
        if key in ("algorithm", "metric", "metric_refresh", "alpha", "beta"):
            setattr(cfg, key, value)
        else:
            solver_kwargs[key] = value
    if cfg.algorithm not in ALGORITHMS:
        raise ConfigError(
            f"unknown algorithm {cfg.algorithm!r}; choose from {', '.join(ALGORITHMS)}",
            solver["algorithm"][1],
        )
    if cfg.metric not in METRICS:
        raise ConfigError(
            f"unknown metric {cfg.metric!r}; choose from {', '.join(METRICS)}",
            solver["metric"][1],
        )
    compatible = {"connectivity": "morse_vacancy", "stabilized_laplacian": "phase_field"}
    if cfg.metric in compatible and compatible[cfg.metric] != cfg.problem:
        raise ConfigError(
            f"metric {cfg.metric} requires problem {compatible[cfg.metric]}", solver["metric"][1]
        )
    if cfg.metric_refresh not in ("fixed_at_start", "every_iteration"):
        raise ConfigError(
            f"unknown metric_refresh {cfg.metric_refresh!r}", solver["metric_refresh"][1]
        )
    if cfg.metric_refresh == "every_iteration" and cfg.metric != "connectivity":
        raise ConfigError("every_iteration refresh needs the connectivity metric",
                          solver["metric_refresh"][1])
    if min(cfg.alpha, cfg.beta) <= 0:
        raise ConfigError("alpha and beta must be positive")
    try:
        cfg.solver = SolverConfig(**solver_kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid solver settings: {exc}") from None

    run = raw.get("run", {})
    if "seed" in run:
        cfg.seed = _convert(raw, "run", "seed")
    if "output" in run:
        cfg.output = _convert(raw, "run", "output")
    return cfg


def _resolve_axis(raw, name, lineno):
    if "." in name:
        section, key = name.split(".", 1)
        if section in KEYS and key in KEYS[section] and section != "sweep":
            return section, key
        raise ConfigError(f"unknown sweep axis {name!r}", lineno)
    owners = [s for s in ("problem", "solver", "run") if name in KEYS[s]]
    if len(owners) != 1:
        raise ConfigError(f"unknown sweep axis {name!r}", lineno)
    if name == "name":
        raise ConfigError("the problem name cannot be swept", lineno)
    return owners[0], name


def with_value(raw, axis, value, lineno=None):
    """Copy of ``raw`` with every axis key set to ``value``."""
    out = copy.deepcopy(raw)
    for section, key in axis:
        out.setdefault(section, {})[key] = (value, lineno)
    return out


def parse_config(text, sweep=False):
    """Parse configuration text into a RunConfig, or a SweepConfig if ``sweep``."""
    raw = _read_raw(text)
    if not sweep:
        if "sweep" in raw:
            raise ConfigError("[sweep] section in a run config; use the sweep command",
                              None)
        return build_run(raw)
    section = raw.pop("sweep", None)
    if section is None:
        raise ConfigError("sweep config needs a [sweep] section")
    for key in ("axis", "values"):
        if key not in section:
            raise ConfigError(f"[sweep] needs {key!r}")
    axis_names = _convert({"sweep": section}, "sweep", "axis")
    values = _convert({"sweep": section}, "sweep", "values")
    if not axis_names:
        raise ConfigError("empty sweep axis", section["axis"][1])
    if not values:
        raise ConfigError("empty sweep values list", section["values"][1])
    axis = [_resolve_axis(raw, a, section["axis"][1]) for a in axis_names]
    jobs = _convert({"sweep": section}, "sweep", "jobs") if "jobs" in section else 1
    if jobs < 1:
        raise ConfigError("jobs must be at least 1", section["jobs"][1])
    # validate every value up front so a typo fails before any run starts
    for value in values:
        build_run(with_value(raw, axis, value, section["values"][1]))
    base = build_run(raw)
    return SweepConfig(base, axis, values, jobs, raw)


def read_config(path, sweep=False):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, sweep=sweep)


def build_problem(cfg):
    """Instantiate the model of a RunConfig and its starting ``(x0, v0)``."""
    p = dict(cfg.params)
    if cfg.problem == "quartic2d":
        model = Quartic2D()
    elif cfg.problem == "doublewell1d":
        model = DoubleWell1D()
    elif cfg.problem == "asymwell1d":
        model = AsymmetricWell1D(**p)
    elif cfg.problem == "morse_vacancy":
        model = build_morse_vacancy(**p)
    else:
        delta = p.pop("delta", 1e-2)
        sign = p.pop("minimum", 1)
        model = build_phase_field(**p)
        x0, v0 = model.initial_state(seed=cfg.seed, delta=delta, sign=sign)
    if cfg.problem != "phase_field":
        x0, v0 = model.default_start()
    if cfg.x0 is not None:
        x0 = cfg.x0
    if cfg.v0 is not None:
        v0 = cfg.v0
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    if x0.shape != (model.dim,) or v0.shape != (model.dim,):
        raise ConfigError(f"x0 and v0 must have {model.dim} components")
    return model, x0, v0
