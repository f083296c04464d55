"""Vehicle and tire parameter sets plus the flat ``key = value`` config format."""

from __future__ import annotations

import dataclasses
import enum
import math
from pathlib import Path
from typing import Dict, Iterable, Tuple


class ShapeConvention(str, enum.Enum):
    """Trigonometric shape function used by the magic formula."""

    SIN = "SIN"
    COS_AS_PRINTED = "COS_AS_PRINTED"


class ConfigError(ValueError):
    """Raised for unreadable or inconsistent configuration files."""


@dataclasses.dataclass(frozen=True)
class VehicleParams:
    """Physical constants of the singletrack model (SI units)."""

    m_v: float = 1300.0
    J_zz: float = 2000.0
    J_R: float = 1.2
    r: float = 0.31
    l_v: float = 1.2
    l_h: float = 1.4
    c_w: float = 0.3
    rho_air: float = 1.225
    A_w: float = 2.2

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"vehicle parameter {f.name} must be finite and > 0, got {value}")

    @property
    def drag_factor(self) -> float:
        """``0.5 * c_w * rho * A_w``, the quadratic drag gain."""
        return 0.5 * self.c_w * self.rho_air * self.A_w


@dataclasses.dataclass(frozen=True)
class TireParams:
    """Magic-formula coefficients ``(B, C, D, E)`` per axis.

    ``D`` is the peak force of one tire in newtons; the other three are
    dimensionless.
    """

    longitudinal: Tuple[float, float, float, float] = (10.0, 1.9, 3200.0, 0.97)
    lateral: Tuple[float, float, float, float] = (8.0, 1.3, 3200.0, -0.5)
    shape_convention: ShapeConvention = ShapeConvention.SIN

    def __post_init__(self):
        object.__setattr__(self, "longitudinal", tuple(float(v) for v in self.longitudinal))
        object.__setattr__(self, "lateral", tuple(float(v) for v in self.lateral))
        object.__setattr__(self, "shape_convention", ShapeConvention(self.shape_convention))
        for name in ("longitudinal", "lateral"):
            coeffs = getattr(self, name)
            if len(coeffs) != 4 or not all(math.isfinite(c) for c in coeffs):
                raise ConfigError(f"{name} needs four finite coefficients (B, C, D, E)")
            B, C, D, _ = coeffs
            if not (B > 0 and C > 0 and D > 0):
                raise ConfigError(f"{name}: B, C and D must be > 0")


def _format_value(value) -> str:
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    return repr(float(value))


def parse_kv_text(text: str, source: str = "<string>") -> Dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _parse_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: not a number: {value!r}") from None


def params_from_mapping(mapping: Dict[str, str]) -> Tuple[VehicleParams, TireParams]:
    """Build parameter objects from string values, ignoring unrelated keys."""
    vp_kwargs = {}
    for f in dataclasses.fields(VehicleParams):
        if f.name in mapping:
            vp_kwargs[f.name] = _parse_float(f.name, mapping[f.name])
    tp_kwargs = {}
    for name in ("longitudinal", "lateral"):
        if name in mapping:
            parts = [p for p in mapping[name].replace(",", " ").split() if p]
            tp_kwargs[name] = tuple(_parse_float(name, p) for p in parts)
    if "shape_convention" in mapping:
        try:
            tp_kwargs["shape_convention"] = ShapeConvention(mapping["shape_convention"].upper())
        except ValueError:
            raise ConfigError(f"shape_convention: unknown value {mapping['shape_convention']!r}") from None
    return VehicleParams(**vp_kwargs), TireParams(**tp_kwargs)


def load_params(path) -> Tuple[VehicleParams, TireParams]:
    """Read a parameter file. Unknown keys are rejected."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read parameter file {path}: {exc}") from None
    mapping = parse_kv_text(text, str(path))
    known = set(_param_keys())
    unknown = sorted(set(mapping) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown parameter keys {unknown}")
    return params_from_mapping(mapping)


def _param_keys() -> Iterable[str]:
    yield from (f.name for f in dataclasses.fields(VehicleParams))
    yield from (f.name for f in dataclasses.fields(TireParams))


def dump_params(vp: VehicleParams, tp: TireParams) -> str:
    lines = [f"{f.name} = {_format_value(getattr(vp, f.name))}" for f in dataclasses.fields(vp)]
    lines += [f"{f.name} = {_format_value(getattr(tp, f.name))}" for f in dataclasses.fields(tp)]
    return "\n".join(lines) + "\n"


def save_params(path, vp: VehicleParams, tp: TireParams) -> None:
    Path(path).write_text(dump_params(vp, tp))
