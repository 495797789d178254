"""Experiment configuration stored as TOML.

Sections: ``[domain]``, ``[model]``, ``[stepping]`` and ``[outputs]`` plus a
top-level ``seed``. Parsing validates everything up front; ``to_toml``
writes a canonical form so that parse/serialise round-trips are stable.
"""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

from .mesh import AnnulusSpec, ChannelSpec

DOMAINS = ("channel", "annulus", "msh-file")
MODELS = ("nse", "smagorinsky")
DELTA_RULES = ("equal-h", "h-pow", "fixed")


class ConfigError(ValueError):
    pass


@dataclass
class DomainConfig:
    kind: str = "annulus"
    # channel
    L: float = 1.0
    nz: int = 10
    nx: int = 10
    # annulus
    outer_radius: float = 1.0
    inner_radius: float = 0.25
    inner_center: tuple[float, float] = (0.3, 0.0)
    m: int = 60
    n: int = 30
    refinement: int = 1
    # external mesh
    path: str = ""

    def channel_spec(self) -> ChannelSpec:
        return ChannelSpec(L=self.L, nz=self.nz, nx=self.nx)

    def annulus_spec(self) -> AnnulusSpec:
        return AnnulusSpec(self.outer_radius, self.inner_radius, tuple(self.inner_center), self.m, self.n)


@dataclass
class ModelConfig:
    kind: str = "smagorinsky"
    re: float = 1000.0
    U: float = 1.0
    L: float = 1.0
    cs: float = 0.17
    delta_rule: str = "equal-h"
    delta_value: float = 1.0  # exponent for h-pow, width for fixed
    C: float = 1.0


@dataclass
class SteppingConfig:
    dt: float = 0.01
    t_final: float = 10.0
    picard_tol: float = 1e-8
    picard_max: int = 50
    output_every: int = 1
    burn_in: float | None = None


@dataclass
class OutputConfig:
    directory: str = "out"
    vtk_every: int = 0
    checkpoint_every: int = 0
    svg: bool = False


@dataclass
class ExperimentConfig:
    domain: DomainConfig = field(default_factory=DomainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    stepping: SteppingConfig = field(default_factory=SteppingConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        d, m, s = self.domain, self.model, self.stepping
        if d.kind not in DOMAINS:
            raise ConfigError(f"domain.kind must be one of {DOMAINS}")
        if m.kind not in MODELS:
            raise ConfigError(f"model.kind must be one of {MODELS}")
        if m.delta_rule not in DELTA_RULES:
            raise ConfigError(f"model.delta_rule must be one of {DELTA_RULES}")
        if m.kind == "nse":
            m.cs = 0.0
        for name, v in (("model.re", m.re), ("model.U", m.U), ("model.L", m.L), ("model.C", m.C)):
            if not v > 0:
                raise ConfigError(f"{name} must be positive")
        if m.cs < 0 or m.delta_value < 0:
            raise ConfigError("model.cs and model.delta_value must be non-negative")
        if not (s.dt > 0 and s.t_final >= s.dt and 0 < s.picard_tol < 1 and s.picard_max >= 1 and s.output_every >= 1):
            raise ConfigError("invalid [stepping] values")
        if s.burn_in is not None and not 0 <= s.burn_in < s.t_final:
            raise ConfigError("stepping.burn_in must lie in [0, t_final)")
        if d.kind == "msh-file" and not d.path:
            raise ConfigError("domain.path is required for msh-file domains")
        if d.refinement < 1:
            raise ConfigError("domain.refinement must be a positive integer")
        try:
            if d.kind == "channel":
                d.channel_spec()
            elif d.kind == "annulus":
                d.annulus_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def nu(self) -> float:
        return self.model.U * self.model.L / self.model.re

    def delta(self, h: float) -> float:
        """Filter width for mesh size ``h``."""
        m = self.model
        if m.delta_rule == "equal-h":
            return h
        if m.delta_rule == "h-pow":
            return m.L * (h / m.L) ** m.delta_value
        return m.delta_value

    @property
    def burn_in(self) -> float:
        b = self.stepping.burn_in
        return 0.5 * self.stepping.t_final if b is None else b

    def to_dict(self) -> dict:
        out = {}
        for name in ("domain", "model", "stepping", "outputs"):
            out[name] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(getattr(self, name)).items()
                         if v is not None}
        out["seed"] = self.seed
        return out

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        return self if seed is None else replace(self, seed=seed)


_SECTIONS = {"domain": DomainConfig, "model": ModelConfig, "stepping": SteppingConfig, "outputs": OutputConfig}


def _coerce(key: str, value, default):
    """Check ``value`` against the type of the field default; ints widen to float."""
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float) or default is None:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and len(value) == len(default) and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        )
        value = tuple(float(v) for v in value) if ok else value
    else:
        ok = isinstance(value, str)
    if not ok:
        raise ConfigError(f"{key}: unexpected value {value!r}")
    return value


def config_from_dict(data: dict) -> ExperimentConfig:
    unknown = set(data) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    parts = {}
    for name, cls in _SECTIONS.items():
        section = data.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"[{name}] must be a table")
        known = set(cls.__dataclass_fields__)
        extra = set(section) - known
        if extra:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
        defaults = cls()
        kwargs = {k: _coerce(f"{name}.{k}", v, getattr(defaults, k)) for k, v in section.items()}
        parts[name] = cls(**kwargs)
    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    return ExperimentConfig(seed=seed, **parts)


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return config_from_dict(data)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text)
