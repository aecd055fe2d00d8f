"""Run configuration: JSON schema, validation and the stable config hash."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any

from .errors import ConfigError

SCHEMA_VERSION = 1


@dataclass
class GridConfig:
    nx: int = 128
    ny: int = 128
    Lx: float = 4.0
    Ly: float = 4.0
    mu: float = 0.003
    rho_f: float = 1.0
    sponge_width: int = 8
    sponge_rate: float = 10.0
    solver: str = "fft"


@dataclass
class BodyConfig:
    template: str = "fish"
    n_nodes: int = 40
    length: float = 1.0
    width: float = 0.08
    k_stretch: float = 20.0
    k_bend: float = 0.05
    damping: float = 20.0
    density: float = 1.0


@dataclass
class ActuationConfig:
    amplitude: float = 0.15
    period: float = 1.0
    wavenumber: float = 1.0
    pattern: str = "traveling"


@dataclass
class StepperConfig:
    dt: float = 2.5e-4
    k_penalty: float | None = None


@dataclass
class CycleConfig:
    tol: float = 1e-6
    max_iters: int = 200
    accel: str = "anderson"
    anderson_m: int = 3
    probe_step: float = 1e-5
    probe_dim: int | None = None
    mode: str = "exact"
    n_snapshots: int = 32
    weights: list | None = None
    floquet: bool = True
    lift_tol: float = 1e-8


@dataclass
class RunSection:
    initial: str = "perturbed"
    perturbation: float = 0.01
    horizon: float = 16.0
    periods: int = 5


@dataclass
class OutputConfig:
    directory: str = "out"
    ledger_every: int = 1
    trajectory_every: int = 100
    snapshot_every: int = 0
    seed: int = 0


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    grid: GridConfig = field(default_factory=GridConfig)
    body: BodyConfig = field(default_factory=BodyConfig)
    actuation: ActuationConfig = field(default_factory=ActuationConfig)
    stepper: StepperConfig = field(default_factory=StepperConfig)
    cycle: CycleConfig = field(default_factory=CycleConfig)
    run: RunSection = field(default_factory=RunSection)
    outputs: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        return config_hash(self.to_dict())


_SECTIONS = {
    "grid": GridConfig, "body": BodyConfig, "actuation": ActuationConfig, "stepper": StepperConfig,
    "cycle": CycleConfig, "run": RunSection, "outputs": OutputConfig,
}


def config_hash(d: dict) -> str:
    """SHA-256 of the canonical JSON serialization (sorted keys, no whitespace)."""
    text = json.dumps(d, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _coerce(key: str, value: Any, default: Any, annotation: str):
    optional = "None" in annotation
    if value is None:
        if optional:
            return None
        raise ConfigError(key, "must not be null")
    if "bool" in annotation:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if "int" in annotation and "float" not in annotation:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if "float" in annotation:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(key, "must be finite")
        return float(value)
    if "str" in annotation:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    if "list" in annotation:
        if not isinstance(value, list):
            raise ConfigError(key, f"expected a list, got {value!r}")
        return value
    return value


def _section(name: str, cls, data) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(name, "expected an object")
    known = {f.name: f for f in fields(cls)}
    for k in data:
        if k not in known:
            raise ConfigError(f"{name}.{k}", "unknown key")
    kwargs = {}
    for k, f in known.items():
        if k in data:
            default = f.default
            kwargs[k] = _coerce(f"{name}.{k}", data[k], default, str(f.type))
    return cls(**kwargs)


def _require(cond: bool, key: str, message: str):
    if not cond:
        raise ConfigError(key, message)


def validate(cfg: RunConfig) -> RunConfig:
    """Cross-field checks; raises :class:`ConfigError` naming the offending key."""
    g, b, a, s, c, r, o = cfg.grid, cfg.body, cfg.actuation, cfg.stepper, cfg.cycle, cfg.run, cfg.outputs
    _require(cfg.schema_version == SCHEMA_VERSION, "schema_version",
             f"unsupported version {cfg.schema_version} (expected {SCHEMA_VERSION})")
    _require(g.nx >= 16 and g.nx % 2 == 0, "grid.nx", "must be even and >= 16")
    _require(g.ny >= 16 and g.ny % 2 == 0, "grid.ny", "must be even and >= 16")
    _require(g.Lx > 0, "grid.Lx", "must be > 0")
    _require(g.Ly > 0, "grid.Ly", "must be > 0")
    _require(math.isclose(g.Lx / g.nx, g.Ly / g.ny, rel_tol=1e-12), "grid.Ly", "cells must be square (Lx/nx == Ly/ny)")
    _require(g.mu >= 0, "grid.mu", "must be >= 0")
    _require(g.rho_f > 0, "grid.rho_f", "must be > 0")
    _require(g.sponge_width >= 0 and 2 * g.sponge_width < min(g.nx, g.ny), "grid.sponge_width",
             "must be >= 0 and leave an interior")
    _require(g.sponge_rate >= 0, "grid.sponge_rate", "must be >= 0")
    _require(g.solver in ("fft", "cg"), "grid.solver", "must be 'fft' or 'cg'")
    _require(b.template == "fish", "body.template", "only 'fish' is available")
    _require(b.n_nodes >= 6 and b.n_nodes % 2 == 0, "body.n_nodes", "must be even and >= 6")
    for k in ("length", "width", "k_stretch", "k_bend", "density"):
        _require(getattr(b, k) > 0, f"body.{k}", "must be > 0")
    _require(b.damping >= 0, "body.damping", "must be >= 0")
    _require(a.amplitude >= 0, "actuation.amplitude", "must be >= 0")
    _require(a.period > 0, "actuation.period", "must be > 0")
    _require(a.pattern in ("traveling", "standing"), "actuation.pattern", "must be 'traveling' or 'standing'")
    _require(s.dt > 0, "stepper.dt", "must be > 0")
    _require(s.k_penalty is None or s.k_penalty >= 0, "stepper.k_penalty", "must be >= 0 or null")
    n = a.period / s.dt
    _require(abs(n - round(n)) <= 1e-9 * n, "stepper.dt", "must divide actuation.period")
    _require(c.tol > 0, "cycle.tol", "must be > 0")
    _require(c.max_iters >= 1, "cycle.max_iters", "must be >= 1")
    _require(c.accel in ("none", "anderson"), "cycle.accel", "must be 'none' or 'anderson'")
    _require(c.anderson_m >= 1, "cycle.anderson_m", "must be >= 1")
    _require(c.probe_step > 0, "cycle.probe_step", "must be > 0")
    _require(c.probe_dim is None or c.probe_dim >= 1, "cycle.probe_dim", "must be >= 1 or null")
    _require(c.mode in ("exact", "stencil"), "cycle.mode", "must be 'exact' or 'stencil'")
    _require(c.n_snapshots >= 1 and round(n) % c.n_snapshots == 0, "cycle.n_snapshots",
             "must divide the number of steps per period")
    _require(c.weights is None or (len(c.weights) == 3 and all(isinstance(w, (int, float)) and w >= 0
                                                             for w in c.weights)),
             "cycle.weights", "must be null or three non-negative numbers")
    _require(c.lift_tol > 0, "cycle.lift_tol", "must be > 0")
    _require(r.initial in ("rest", "perturbed"), "run.initial", "must be 'rest' or 'perturbed'")
    _require(r.perturbation >= 0, "run.perturbation", "must be >= 0")
    _require(r.horizon > 0, "run.horizon", "must be > 0")
    _require(r.periods >= 1, "run.periods", "must be >= 1")
    _require(isinstance(o.directory, str) and o.directory != "", "outputs.directory", "must be a non-empty path")
    for k in ("ledger_every", "trajectory_every"):
        _require(getattr(o, k) >= 1, f"outputs.{k}", "must be >= 1")
    _require(o.snapshot_every >= 0, "outputs.snapshot_every", "must be >= 0")
    _require(0 <= o.seed < 2 ** 64, "outputs.seed", "must be an unsigned 64-bit integer")
    # the body must fit inside the sponge-free interior
    half = 0.5 * b.length + b.width
    inner = min(g.Lx, g.Ly) * 0.5 - g.sponge_width * g.Lx / g.nx
    _require(half < inner, "body.length", "body does not fit inside the sponge-free interior")
    return cfg


def from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("<root>", "expected a JSON object")
    for k in d:
        if k != "schema_version" and k not in _SECTIONS:
            raise ConfigError(k, "unknown key")
    if "schema_version" not in d:
        raise ConfigError("schema_version", "missing")
    version = d["schema_version"]
    if isinstance(version, bool) or not isinstance(version, int):
        raise ConfigError("schema_version", f"expected an integer, got {version!r}")
    parts = {name: _section(name, cls, d.get(name, {})) for name, cls in _SECTIONS.items()}
    return validate(RunConfig(schema_version=version, **parts))


def load(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError("--config", f"cannot read {path}: {e.strerror}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("--config", f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from None
    return from_dict(d)


def dumps(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
