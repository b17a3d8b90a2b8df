"""Sectioned ``key = value`` experiment configuration.

Every key has a typed default; unknown sections or keys are errors naming the
offending ``section.key``.  Times accept a ``T_L`` suffix (``2 T_L`` is two
cyclotron periods of the configured field).
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional

EXPERIMENTS = ("scatter", "micro", "kinetic", "converge", "pathology", "compare")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _float_list(text: str) -> tuple:
    parts = [p for p in text.replace(";", ",").split(",") if p.strip()]
    return tuple(float(p) for p in parts)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _time(text: str) -> str:
    """Validated but kept symbolic until the field is known."""
    t = text.strip().replace(" ", "")
    body = t[: -len("T_L")] if t.endswith("T_L") else t
    if body in ("", "*"):
        return t
    float(body.rstrip("*"))
    return t


def resolve_time(text: str, T_L: float) -> float:
    t = str(text).strip().replace(" ", "")
    if t.endswith("T_L"):
        body = t[: -len("T_L")].rstrip("*")
        return (float(body) if body else 1.0) * T_L
    return float(t)


def _time_list(text: str) -> tuple:
    return tuple(_time(p) for p in text.split(",") if p.strip())


def _choice(*options) -> Callable[[str], str]:
    def parse(text: str) -> str:
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return t

    return parse


def _opt_float(text: str):
    t = text.strip().lower()
    return None if t in ("", "auto", "none") else float(t)


_xi = lambda text: text.strip() if text.strip() in ("grazing", "explicit") else float(text)

# section -> key -> (parser, default)
SCHEMA: Dict[str, Dict[str, tuple]] = {
    "run": {
        "experiment": (_choice(*EXPERIMENTS), "scatter"),
        "seed": (int, 1),
        "workers": (int, 1),
        "out": (str, "out"),
    },
    "regime": {
        "kind": (_choice("weak", "intermediate", "boltzmann-grad", "long-range"), "boltzmann-grad"),
        "mu": (float, 1.0),
        "B": (float, 1.0),
        "alpha": (float, 0.1),
        "gamma": (float, 0.9),
        "s": (float, 3.0),
        "eps": (float, 1e-3),
        "eps_list": (_float_list, (1e-1, 1e-2, 1e-3)),
    },
    "scatter": {
        "nodes": (int, 1024),
        "table_nodes": (int, 2049),
        "theta_points": (int, 256),
        "with_field": (_bool, True),
    },
    "micro": {
        "n_seeds": (int, 32),
        "t_end": (_time, "1T_L"),
        "n_angles": (int, 64),
        "n_positions": (int, 1),
        "spacing": (float, 3.0),
        "method": (_choice("table", "ode"), "table"),
        "amplitude": (float, 0.5),
        "nu": (_opt_float, None),
    },
    "kinetic": {
        "kernel": (_choice("boltzmann-eps", "landau", "gbe", "markov-hard", "truncated", "uncut"), "boltzmann-eps"),
        "mode": (_choice("homogeneous", "gridded"), "homogeneous"),
        "nphi": (int, 64),
        "nx": (int, 32),
        "ny": (int, 32),
        "box": (float, 2.0),
        "boundary": (_choice("periodic", "absorbing"), "periodic"),
        "interpolation": (_choice("bilinear", "spectral"), "bilinear"),
        "steps_per_period": (int, 64),
        "t_end": (_time, "1"),
        "checkpoints": (_time_list, ()),
        "amplitude": (float, 0.5),
        "xi": (_xi, "grazing"),
        "theta_min": (float, 0.05),
        "lag_factor": (_choice("argument", "lagged"), "argument"),
        "gbe_theta": (_choice("varying", "fixed"), "varying"),
        "gbe_fixed_angle": (float, math.pi),
        "dsmc_particles": (int, 0),
    },
    "converge": {
        "t_end": (_time, "1"),
        "n_seeds": (int, 16),
        "n_angles": (int, 32),
        "nphi": (int, 64),
        "theta_min": (float, 0.05),
        "amplitude": (float, 0.5),
    },
    "pathology": {
        "n_seeds": (int, 200),
        "t_end": (_time, "2T_L"),
        "nu": (_opt_float, None),
        "method": (_choice("table", "ode"), "table"),
    },
    "compare": {
        "mu_hard": (float, 0.1),
        "eps_hard": (float, 1e-3),
        "mu_smooth": (float, 0.1),
        "eps_smooth": (float, 1e-3),
        "alpha_smooth": (float, 0.1),
        "n_seeds": (int, 200),
        "n_angles": (int, 64),
        "n_positions": (int, 1),
        "t_end": (_time, "2T_L"),
        "n_times": (int, 8),
        "amplitude": (float, 0.5),
        "nphi": (int, 64),
    },
}


@dataclass
class ExperimentConfig:
    values: Dict[str, Dict[str, Any]]

    def __getitem__(self, dotted: str):
        sec, key = dotted.split(".", 1)
        return self.values[sec][key]

    def section(self, name: str) -> Dict[str, Any]:
        return self.values[name]

    @property
    def experiment(self) -> str:
        return self.values["run"]["experiment"]

    def manifest(self) -> str:
        """Full resolved configuration in the input syntax."""
        lines = []
        for sec in SCHEMA:
            lines.append(f"[{sec}]")
            for key in SCHEMA[sec]:
                lines.append(f"{key} = {_render(self.values[sec][key])}")
            lines.append("")
        return "\n".join(lines)


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_render(x) for x in v)
    if v is None:
        return "auto"
    return str(v)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    r = cfg.values["regime"]
    checks = [
        ("regime.mu", r["mu"] >= 0, "mu must be >= 0"),
        ("regime.B", r["B"] > 0, "B must be > 0"),
        ("regime.alpha", 0.0 < r["alpha"] < 0.125, "alpha must lie in (0, 1/8)"),
        ("regime.gamma", 6.0 / 7.0 < r["gamma"] < 1.0, "gamma must lie in (6/7, 1)"),
        ("regime.s", r["s"] > 2.0, "s must exceed 2"),
        ("regime.eps", r["eps"] > 0, "eps must be positive"),
        ("regime.eps_list", len(r["eps_list"]) > 0 and all(e > 0 for e in r["eps_list"]), "eps values must be positive"),
        ("compare.alpha_smooth", 0.0 < cfg["compare.alpha_smooth"] < 0.125, "alpha must lie in (0, 1/8)"),
        ("compare.mu_hard", cfg["compare.mu_hard"] >= 0, "mu must be >= 0"),
        ("compare.mu_smooth", cfg["compare.mu_smooth"] >= 0, "mu must be >= 0"),
        ("run.workers", cfg["run.workers"] >= 1, "workers must be >= 1"),
        ("run.seed", 0 <= cfg["run.seed"] < 2**64, "seed must be an unsigned 64-bit integer"),
    ]
    for key, ok, msg in checks:
        if not ok:
            raise ConfigError(key, msg)
    for key in ("kinetic.nphi", "converge.nphi", "compare.nphi"):
        n = cfg[key]
        if n < 2 or n & (n - 1):
            raise ConfigError(key, "must be a power of two")
    for sec in ("micro", "converge", "pathology", "compare"):
        if "n_seeds" in cfg.values[sec] and cfg.values[sec]["n_seeds"] < 2:
            raise ConfigError(f"{sec}.n_seeds", "need at least two seeds")
    return cfg


def parse_config(text: str = "", overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc).splitlines()[0]) from exc
    values = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(sec, "unknown section")
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{sec}.{key}", "unknown key")
            parser = SCHEMA[sec][key][0]
            try:
                values[sec][key] = parser(raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{sec}.{key}", f"bad value {raw!r} ({exc})") from exc
    for dotted, v in (overrides or {}).items():
        sec, key = dotted.split(".", 1)
        if sec not in SCHEMA or key not in SCHEMA[sec]:
            raise ConfigError(dotted, "unknown key")
        values[sec][key] = v
    return validate(ExperimentConfig(values))


def load_config(path: Optional[str], overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    text = ""
    if path:
        with open(path) as fh:
            text = fh.read()
    return parse_config(text, overrides)
