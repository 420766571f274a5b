"""Experiment configuration.

A configuration file is a flat INI file with an ``[experiment]`` section for
the run settings and an optional ``[problem]`` section whose keys are passed
to the problem constructor::

    [experiment]
    problem = helmholtz_indefinite
    formulation = L
    levels = 2-5
    tol = 1e-10

    [problem]
    c = -25

Precedence, lowest to highest: built-in defaults, the file, command-line
flags. Unknown sections or keys are rejected before any work is done.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from ..assembly import FORMULATIONS
from ..problems import BUILTINS, builtin

__all__ = ["ConfigError", "ExperimentConfig", "parse_levels", "load_config"]


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


def parse_levels(text: str) -> tuple[int, ...]:
    """``"3-6"`` or ``"2,3,5"`` (or a mix) into a sorted tuple of levels."""
    levels: set[int] = set()
    try:
        for part in str(text).replace(" ", "").split(","):
            if not part:
                continue
            if "-" in part:
                lo, hi = (int(s) for s in part.split("-", 1))
                if hi < lo:
                    raise ConfigError(f"empty level range {part!r}")
                levels.update(range(lo, hi + 1))
            else:
                levels.add(int(part))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"cannot parse levels {text!r}") from exc
    if not levels or min(levels) < 0:
        raise ConfigError(f"levels must be non-negative integers, got {text!r}")
    return tuple(sorted(levels))


@dataclass
class ExperimentConfig:
    problem: str = "poisson_sine"
    formulation: str = "M"
    levels: tuple[int, ...] = (2, 3, 4, 5)
    initial_level: int = 1
    theta: float = 0.5
    max_dofs: int = 20000
    tol: float = 1e-10
    adapt_tol: float = 1e-8
    eig_tol: float = 1e-6
    seed: int = 0
    trials: int = 10
    spectral: bool = True
    self_test: bool = False
    out_dir: str = "results"
    problem_args: dict[str, float] = field(default_factory=dict)

    def validate(self) -> "ExperimentConfig":
        if self.problem not in BUILTINS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {sorted(BUILTINS)}")
        self.formulation = str(self.formulation).upper()
        if self.formulation not in FORMULATIONS:
            raise ConfigError(f"formulation must be one of {FORMULATIONS}, got {self.formulation!r}")
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError(f"theta must lie in (0, 1], got {self.theta}")
        if self.max_dofs <= 0 or self.trials <= 0:
            raise ConfigError("max_dofs and trials must be positive")
        if not all(0.0 < t < 1.0 for t in (self.tol, self.adapt_tol, self.eig_tol)):
            raise ConfigError("tolerances must lie in (0, 1)")
        if self.initial_level < 0:
            raise ConfigError("initial_level must be non-negative")
        try:
            builtin(self.problem, **self.problem_args)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def make_problem(self):
        return builtin(self.problem, **self.problem_args)

    def as_dict(self) -> dict[str, object]:
        out = dataclasses.asdict(self)
        out["levels"] = ",".join(str(v) for v in self.levels)
        args = out.pop("problem_args")
        out.update({f"problem.{k}": v for k, v in args.items()})
        return out


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig) if f.name != "problem_args"}


def _coerce(name: str, raw):
    kind = type(getattr(ExperimentConfig(), name))
    try:
        if name == "levels":
            return parse_levels(raw) if isinstance(raw, str) else tuple(sorted(int(v) for v in raw))
        if kind is bool:
            if isinstance(raw, bool):
                return raw
            low = str(raw).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid value {raw!r} for {name}") from exc


def _problem_value(raw: str):
    text = raw.strip()
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Build a validated configuration from an optional file and overrides.

    ``overrides`` holds command-line values; ``None`` entries are ignored so
    unspecified flags never mask file values.
    """
    values: dict[str, object] = {}
    problem_args: dict[str, object] = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(Path(path)) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config file {path}: {exc}") from exc
        for section in parser.sections():
            if section not in ("experiment", "problem"):
                raise ConfigError(f"unknown section [{section}] in {path}")
        if parser.has_section("experiment"):
            for key, raw in parser.items("experiment"):
                if key not in _FIELDS:
                    raise ConfigError(f"unknown key {key!r} in [experiment] of {path}")
                values[key] = _coerce(key, raw)
        if parser.has_section("problem"):
            problem_args = {k: _problem_value(v) for k, v in parser.items("problem")}
    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown option {key!r}")
        values[key] = _coerce(key, raw)
    return ExperimentConfig(**values, problem_args=problem_args).validate()
