"""Run configuration: a TOML-compatible subset with full defaults.

The grammar covers exactly what the tool needs: [section] headers, and
key = value lines where the value is a quoted string, a number, a boolean,
or an array of numbers.  Every key has a documented default, unknown keys
are rejected with a nearest-match suggestion, and parse(serialize(c))
returns c so artifacts can embed their fully resolved configuration.
"""

from __future__ import annotations

import difflib
import os
import re
from dataclasses import asdict, dataclass, field, fields

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    """FitzHugh-Nagumo family parameters; ratio_i = sigma_i^2/k_i.

    ratio2 never enters the closed-form reduced drift; it is free and is
    echoed in artifact metadata.  cutoff_epsilon = 0 disables the radial
    cutoff of the drift.
    """

    a: float = 1.0 / 3.0
    b: float = 1.0
    c: float = 10.0
    ratio1: float = 0.2
    ratio2: float = 0.2
    k: list = field(default_factory=lambda: [1.0, 1.0])
    sigma: list = field(default_factory=list)  # set to override the ratios directly
    delta: float = 0.05
    cutoff_epsilon: float = 0.0


@dataclass
class SolverSection:
    dt: float = 0.05
    trunc: int = 16
    quad_order: int = 0  # 0 selects the dealiasing bound automatically
    theta: float = 1.0
    r_norm: float = 2.0
    sample_stride: int = 1


@dataclass
class ParticlesSection:
    n: int = 1000
    h: float = 0.01
    seed: int = 1
    horizon: float = 20.0


@dataclass
class OrbitSection:
    z0: list = field(default_factory=lambda: [0.0, 1.0])
    dt: float = 0.002
    quad_order: int = 8
    transient: float = 200.0
    probe: float = 80.0
    tol_reduced: float = 1e-10
    tol_pde: float = 1e-6
    samples_reduced: int = 256
    samples_pde: int = 64


@dataclass
class IsochronSection:
    match_tol_reduced: float = 1e-7
    match_tol_pde: float = 1e-3
    grid_nx: int = 41
    grid_ny: int = 41


@dataclass
class OutputSection:
    directory: str = ""  # empty: MFOSC_OUT environment variable, else cwd
    emit_plots: bool = True


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    solver: SolverSection = field(default_factory=SolverSection)
    particles: ParticlesSection = field(default_factory=ParticlesSection)
    orbit: OrbitSection = field(default_factory=OrbitSection)
    isochron: IsochronSection = field(default_factory=IsochronSection)
    output: OutputSection = field(default_factory=OutputSection)

    def validate(self) -> "RunConfig":
        m = self.model
        if m.delta < 0:
            raise ConfigError("model.delta must be nonnegative")
        if m.ratio1 < 0 or m.ratio2 < 0:
            raise ConfigError("model ratios must be nonnegative")
        if m.c == 0:
            raise ConfigError("model.c must be nonzero")
        if len(m.k) != 2 or any(v <= 0 for v in m.k):
            raise ConfigError("model.k must be two positive rates")
        if m.sigma and (len(m.sigma) != 2 or any(v < 0 for v in m.sigma)):
            raise ConfigError("model.sigma must be two nonnegative intensities")
        if m.cutoff_epsilon < 0:
            raise ConfigError("model.cutoff_epsilon must be nonnegative")
        if self.solver.dt <= 0 or self.orbit.dt <= 0 or self.particles.h <= 0:
            raise ConfigError("time steps must be positive")
        if self.solver.trunc < 1:
            raise ConfigError("solver.trunc must be >= 1")
        if self.particles.n < 1:
            raise ConfigError("particles.n must be >= 1")
        return self

    def to_model(self):
        from .model import cutoff_drift, fhn_model

        m = self.model
        if m.sigma:
            r1 = m.sigma[0] ** 2 / m.k[0]
            r2 = m.sigma[1] ** 2 / m.k[1]
        else:
            r1, r2 = m.ratio1, m.ratio2
        spec = fhn_model(a=m.a, b=m.b, c=m.c, ratio1=r1, ratio2=r2, k=tuple(m.k), delta=m.delta)
        if m.cutoff_epsilon > 0:
            spec.drift = cutoff_drift(spec.drift, m.cutoff_epsilon)
        return spec

    def to_solver_config(self):
        from .pde import SolverConfig

        s = self.solver
        return SolverConfig(
            dt=s.dt,
            trunc=s.trunc,
            quad_order=s.quad_order or None,
            theta=s.theta,
            r_norm=s.r_norm,
            sample_stride=s.sample_stride,
        )

    def output_dir(self) -> str:
        return self.output.directory or os.environ.get("MFOSC_OUT", ".")


_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_INT = re.compile(r"^[+-]?\d+$")


def _parse_value(raw: str, path: str):
    raw = raw.strip()
    if raw.startswith("[") and raw.endswith("]"):
        inner = raw[1:-1].strip()
        if not inner:
            return []
        return [_parse_value(part, path) for part in inner.split(",")]
    if raw.startswith('"') and raw.endswith('"') and len(raw) >= 2:
        return raw[1:-1]
    if raw in ("true", "false"):
        return raw == "true"
    if _INT.match(raw):
        return int(raw)
    if _NUMBER.match(raw):
        return float(raw)
    raise ConfigError(f"{path}: cannot parse value {raw!r} (expected string, number, boolean or array)")


def _coerce(value, default, path: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or any(isinstance(v, (str, bool, list)) for v in value):
            raise ConfigError(f"{path}: expected an array of numbers, got {value!r}")
        return [float(v) for v in value]
    raise ConfigError(f"{path}: unsupported field type")


def _suggest(name: str, options) -> str:
    close = difflib.get_close_matches(name, list(options), n=1)
    return f"; did you mean {close[0]!r}?" if close else ""


def parse_config(text_or_path: str) -> RunConfig:
    """Parse a configuration from inline text or a file path.

    An empty input yields the full default configuration.  Unknown sections
    and keys are rejected, naming the nearest valid candidate.
    """
    if "\n" not in text_or_path and os.path.exists(text_or_path):
        with open(text_or_path, encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = text_or_path
    cfg = RunConfig()
    sections = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    current = None
    current_name = ""
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in sections:
                raise ConfigError(f"line {lineno}: unknown section [{name}]{_suggest(name, sections)}")
            current = sections[name]
            current_name = name
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw_line.strip()!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: key outside of any [section]")
        key, _, raw_val = line.partition("=")
        key = key.strip()
        valid = {f.name for f in fields(current)}
        if key not in valid:
            raise ConfigError(
                f"line {lineno}: unknown key {key!r} in [{current_name}]{_suggest(key, valid)}"
            )
        default = getattr(type(current)(), key)
        value = _parse_value(raw_val, f"[{current_name}].{key}")
        setattr(current, key, _coerce(value, default, f"[{current_name}].{key}"))
    return cfg.validate()


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, list):
        return "[" + ", ".join(_format_value(float(x)) for x in v) + "]"
    raise ConfigError(f"cannot serialize {v!r}")


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        section = getattr(cfg, f.name)
        lines.append(f"[{f.name}]")
        for sf in fields(section):
            lines.append(f"{sf.name} = {_format_value(getattr(section, sf.name))}")
        lines.append("")
    return "\n".join(lines)


def config_echo(cfg: RunConfig) -> str:
    """Comment-safe single-line digest for artifact headers."""
    flat = []
    for f in fields(cfg):
        section = asdict(getattr(cfg, f.name))
        for k, v in section.items():
            flat.append(f"{f.name}.{k}={v}")
    return " ".join(flat)
