"""Run configuration: flat ``section.key = value`` text with ``#`` comments.

A config may start from a built-in preset (``preset = set1``) and override
any field.  Unknown keys are rejected with their line number.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError

TABLES = ("dynamics", "rates", "measures", "bloch", "summary")


@dataclass(frozen=True)
class SystemConfig:
    omega: float = 1.0
    eps: float = 0.0


@dataclass(frozen=True)
class BathConfig:
    xi: float = 0.1
    omega_c: float = 7.5
    beta: float = 5.0


@dataclass(frozen=True)
class GridConfig:
    dt: float = 0.05
    n_steps: int = 200


@dataclass(frozen=True)
class QuapiConfig:
    # memory of 80 steps (4 time units at dt = 0.05); see README for the convergence study
    kmax: int = 80
    convergence_check: bool = False
    # None selects the exact dense sum, which only fits small kmax
    svd_cutoff: float | None = 1e-8
    memory_budget: int = 2**22


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    tables: tuple = TABLES


@dataclass(frozen=True)
class Tolerances:
    convergence: float = 5e-4
    cp: float = 1e-8
    trace: float = 1e-10
    hermiticity: float = 1e-10


@dataclass(frozen=True)
class RunConfig:
    name: str = "custom"
    system: SystemConfig = field(default_factory=SystemConfig)
    bath: BathConfig = field(default_factory=BathConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    backend: str = "quapi"
    quapi: QuapiConfig = field(default_factory=QuapiConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)
    tolerances: Tolerances = field(default_factory=Tolerances)

    @property
    def map_file(self) -> str | None:
        return self.backend[5:] if self.backend.startswith("file:") else None


PRESETS = {
    "set1": RunConfig(name="set1", system=SystemConfig(1.0, 0.0), bath=BathConfig(0.1, 7.5, 5.0)),
    "set2": RunConfig(name="set2", system=SystemConfig(1.0, 1.0), bath=BathConfig(0.1, 7.5, 5.0)),
    "set3": RunConfig(name="set3", system=SystemConfig(1.0, 1.0), bath=BathConfig(0.5, 7.5, 5.0)),
}


def preset(name: str) -> RunConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}") from None


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_optional_float(text):
    if text.strip().lower() in ("none", ""):
        return None
    return float(text)


def _parse_tables(text):
    names = tuple(t.strip() for t in text.split(",") if t.strip())
    bad = [t for t in names if t not in TABLES]
    if bad:
        raise ValueError(f"unknown table(s) {', '.join(bad)}; choose from {', '.join(TABLES)}")
    return names


_SECTIONS = ("system", "bath", "grid", "quapi", "outputs", "tolerances")
# field annotations are strings under postponed evaluation
_PARSERS = {
    "float": float,
    "int": int,
    "bool": _parse_bool,
    "str": str,
    "float | None": _parse_optional_float,
    "tuple": _parse_tables,
}


def _field_parser(cls, key):
    for f in fields(cls):
        if f.name == key:
            return _PARSERS[f.type]
    raise KeyError(key)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse config text; raises ConfigError with field and line."""
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", line=lineno)
        entries.append((lineno, key, value))

    cfg = RunConfig(name=source)
    seen = {}
    for lineno, key, value in entries:
        if key in seen:
            raise ConfigError(f"duplicate key (first set on line {seen[key]})", line=lineno, field=key)
        seen[key] = lineno
    # the preset is applied first so that other lines override it
    for lineno, key, value in entries:
        if key == "preset":
            try:
                cfg = replace(preset(value), name=value)
            except ConfigError as exc:
                raise ConfigError(str(exc), line=lineno, field=key) from None

    for lineno, key, value in entries:
        if key == "preset":
            continue
        if key == "backend":
            cfg = replace(cfg, backend=value)
            continue
        if key == "name":
            cfg = replace(cfg, name=value)
            continue
        section, _, sub = key.partition(".")
        if section not in _SECTIONS or not sub:
            raise ConfigError("unknown key", line=lineno, field=key)
        part = getattr(cfg, section)
        try:
            parser = _field_parser(type(part), sub)
        except KeyError:
            raise ConfigError("unknown key", line=lineno, field=key) from None
        try:
            parsed = parser(value)
        except ValueError as exc:
            raise ConfigError(f"invalid value {value!r}: {exc}", line=lineno, field=key) from None
        cfg = replace(cfg, **{section: replace(part, **{sub: parsed})})

    validate_config(cfg, lines=seen)
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config(text, source=str(path))


def _check(cond, message, key, lines):
    if not cond:
        raise ConfigError(message, line=lines.get(key), field=key)


def validate_config(cfg: RunConfig, lines=None) -> None:
    lines = lines or {}
    finite = math.isfinite
    _check(finite(cfg.system.omega), "must be finite", "system.omega", lines)
    _check(finite(cfg.system.eps), "must be finite", "system.eps", lines)
    _check(finite(cfg.bath.xi) and cfg.bath.xi >= 0, "must be >= 0", "bath.xi", lines)
    _check(finite(cfg.bath.omega_c) and cfg.bath.omega_c > 0, "must be > 0", "bath.omega_c", lines)
    _check(finite(cfg.bath.beta) and cfg.bath.beta > 0, "must be > 0", "bath.beta", lines)
    _check(finite(cfg.grid.dt) and cfg.grid.dt > 0, "must be > 0", "grid.dt", lines)
    _check(cfg.grid.n_steps >= 4, "must be >= 4 (derivative stencil)", "grid.n_steps", lines)
    _check(cfg.quapi.kmax >= 1, "must be >= 1", "quapi.kmax", lines)
    cut = cfg.quapi.svd_cutoff
    _check(cut is None or (finite(cut) and 0 <= cut < 1), "must be in [0, 1) or none", "quapi.svd_cutoff", lines)
    _check(cfg.quapi.memory_budget > 0, "must be > 0", "quapi.memory_budget", lines)
    backend = cfg.backend
    ok = backend in ("quapi", "dephasing") or (backend.startswith("file:") and len(backend) > 5)
    _check(ok, "must be quapi, dephasing or file:<path>", "backend", lines)
    for name in ("convergence", "cp", "trace", "hermiticity"):
        value = getattr(cfg.tolerances, name)
        _check(finite(value) and value > 0, "must be > 0", f"tolerances.{name}", lines)


def format_config(cfg: RunConfig) -> str:
    """Inverse of :func:`parse_config` (up to comments and ordering)."""
    out = [f"name = {cfg.name}", f"backend = {cfg.backend}"]
    for section in _SECTIONS:
        part = getattr(cfg, section)
        for f in fields(part):
            value = getattr(part, f.name)
            if isinstance(value, tuple):
                value = ", ".join(value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            elif value is None:
                value = "none"
            out.append(f"{section}.{f.name} = {value}")
    return "\n".join(out) + "\n"
