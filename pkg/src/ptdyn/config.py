"""Experiment configuration read from TOML files with dotted section keys.

Example::

    model.kind = "linear"
    model.L = 4
    model.m = 64
    model.omega = "16pi"
    init.beta = 1.453
    init.n_electrons = 20
    init.rank = 64
    run.scheme = "pt"
    run.h = 0.01
    run.t_final = 4.0

Numbers may be written as plain TOML numbers or as strings with a ``pi``
factor (``"16pi"``, ``"pi/2"``, ``"2*pi"``).
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .anderson import SolverConfig
from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_PI_RE = re.compile(r"^\s*([-+]?[0-9.eE+-]*)\s*\*?\s*pi\s*(?:/\s*([0-9.eE+-]+))?\s*$")


def parse_number(value, name="value"):
    """Accept ints, floats and strings such as ``"16pi"`` or ``"pi/2"``."""
    if isinstance(value, bool):
        raise ConfigError(f"{name}: expected a number, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = _PI_RE.match(value)
        if m:
            coef = m.group(1)
            coef = 1.0 if coef in ("", "+") else -1.0 if coef == "-" else float(coef)
            div = float(m.group(2)) if m.group(2) else 1.0
            return coef * np.pi / div
        try:
            return float(value)
        except ValueError:
            pass
    raise ConfigError(f"{name}: cannot read {value!r} as a number")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "linear"
    L: int = 4
    m: int = 64
    omega: float = 16 * np.pi
    amplitude: float = 10.0
    potential: str | None = None
    kappa: float = 0.01
    eps0: float = 100.0
    laplacian: str = "fd"


@dataclass(frozen=True)
class InitConfig:
    beta: float = 1.453
    n_electrons: float | None = 20
    mu: float | None = None
    rank: int = 64
    self_consistent: bool = True


@dataclass(frozen=True)
class RunConfig:
    scheme: str = "pt"
    h: float = 0.01
    h_list: tuple = ()
    t_final: float = 1.0
    sample_dt: float = 0.01
    norm: str = "2"


@dataclass(frozen=True)
class ReferenceConfig:
    scheme: str = "same"
    h: float = 1e-4
    file: str | None = None


@dataclass(frozen=True)
class SweepConfig:
    n_electrons: tuple = ()
    rank_offset: int = 20


@dataclass(frozen=True)
class DipoleConfig:
    h_coarse: float = 0.02


@dataclass(frozen=True)
class ScanConfig:
    """Two-level avoided-crossing scan used by the ``bounds`` command.

    H(t) = ([[-detuning, coupling], [coupling, detuning]] + sin(omega t) diag(1, -1)) / eps
    """

    eps: tuple = (1.0, 0.5, 0.25, 0.125)
    coupling: float = 0.5
    detuning: float = 0.5
    omega: float = 0.25
    h: float = 1e-3
    t_final: float = 12.5
    sample_every: int = 10


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    init: InitConfig = field(default_factory=InitConfig)
    run: RunConfig = field(default_factory=RunConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    dipole: DipoleConfig = field(default_factory=DipoleConfig)
    scan: ScanConfig = field(default_factory=ScanConfig)

    def with_overrides(self, **sections):
        """Copy with some fields replaced, e.g. ``run={"h": 0.02}``."""
        updates = {}
        for name, values in sections.items():
            updates[name] = replace(getattr(self, name), **values)
        return replace(self, **updates)


_NUMERIC = {
    "model": {"omega", "amplitude", "kappa", "eps0"},
    "init": {"beta", "n_electrons", "mu"},
    "run": {"h", "t_final", "sample_dt"},
    "solver": {"damping", "tol", "reg"},
    "reference": {"h"},
    "dipole": {"h_coarse"},
    "scan": {"coupling", "detuning", "omega", "h", "t_final"},
}
_INTEGER = {
    "model": {"L", "m"},
    "init": {"rank"},
    "solver": {"mixing_dim", "max_iter"},
    "sweep": {"rank_offset"},
    "scan": {"sample_every"},
}
_LISTS = {("run", "h_list"), ("sweep", "n_electrons"), ("scan", "eps")}
_SECTIONS = {f.name: f.default_factory for f in fields(ExperimentConfig)}


def _convert(section, key, value):
    label = f"{section}.{key}"
    if (section, key) in _LISTS:
        if not isinstance(value, list):
            value = [value]
        return tuple(parse_number(v, label) for v in value)
    if key in _NUMERIC.get(section, ()):
        return parse_number(value, label)
    if key in _INTEGER.get(section, ()):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{label}: expected an integer, got {value!r}")
        return value
    return value


def config_from_dict(data: dict) -> ExperimentConfig:
    sections = {}
    for name, body in data.items():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown config section {name!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"section {name!r} must be a table")
        cls = type(_SECTIONS[name]())
        known = {f.name for f in fields(cls)}
        values = {}
        for key, value in body.items():
            if key not in known:
                raise ConfigError(f"unknown key {name}.{key}")
            values[key] = _convert(name, key, value)
        try:
            sections[name] = cls(**values)
        except TypeError as exc:
            raise ConfigError(f"section {name!r}: {exc}") from exc
    cfg = ExperimentConfig(**sections)
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data)


def validate(cfg: ExperimentConfig):
    m, i, r = cfg.model, cfg.init, cfg.run
    if m.kind not in ("linear", "yukawa"):
        raise ConfigError(f"model.kind must be 'linear' or 'yukawa', got {m.kind!r}")
    for name in ("omega", "kappa", "eps0"):
        if getattr(m, name) <= 0:
            raise ConfigError(f"model.{name} must be positive")
    if i.beta <= 0:
        raise ConfigError("init.beta must be positive")
    if i.rank < 1:
        raise ConfigError("init.rank must be positive")
    if r.scheme not in ("pt", "sd", "dense"):
        raise ConfigError(f"run.scheme must be pt, sd or dense, got {r.scheme!r}")
    if r.h <= 0 or r.t_final < 0 or r.sample_dt <= 0:
        raise ConfigError("run.h and run.sample_dt must be positive, run.t_final nonnegative")
    if r.norm not in ("2", "fro"):
        raise ConfigError("run.norm must be '2' or 'fro'")
    hs = r.h_list
    if any(h <= 0 for h in hs) or any(a <= b for a, b in zip(hs, hs[1:])):
        raise ConfigError("run.h_list must be positive and strictly decreasing")
    if cfg.reference.scheme not in ("same", "pt", "sd", "dense"):
        raise ConfigError("reference.scheme must be same, pt, sd or dense")
    if cfg.reference.h <= 0:
        raise ConfigError("reference.h must be positive")
    if any(n <= 0 for n in cfg.sweep.n_electrons) or cfg.sweep.rank_offset < 0:
        raise ConfigError("sweep electron counts must be positive and rank_offset nonnegative")
    if any(e <= 0 for e in cfg.scan.eps) or cfg.scan.h <= 0 or cfg.scan.sample_every < 1:
        raise ConfigError("scan.eps and scan.h must be positive, scan.sample_every at least 1")


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Plain-dict view used for cache keys and the run manifest."""
    out = {}
    for f in fields(cfg):
        section = getattr(cfg, f.name)
        out[f.name] = {g.name: getattr(section, g.name) for g in fields(section)}
    return out
