"""Run configuration: one flat ``key = value`` file, overridable from the command line."""

from __future__ import annotations

import dataclasses
import hashlib
import os
from pathlib import Path
from typing import Dict, Optional, Tuple

from .dynamics import MODEL_VARIANTS
from .params import ConfigError, TireParams, VehicleParams, _param_keys, load_params, params_from_mapping, parse_kv_text

OUT_DIR_ENV = "KOOPVD_OUT_DIR"

# keys that do not influence any numeric artifact
_NON_SEMANTIC = {"out_dir", "threads", "workflow", "dataset", "predictor", "bank"}


def _tuple(cast):
    def conv(v):
        if isinstance(v, str):
            return tuple(cast(p) for p in v.replace(",", " ").split())
        return tuple(cast(p) for p in v)
    return conv


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _str(v):
    return str(v)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Every setting a workflow reads. Defaults reproduce the reference protocols."""

    workflow: str = ""
    model: str = "3state"
    params: str = ""
    out_dir: str = ""
    seed: int = 0
    threads: int = 1
    Ts: float = 0.01
    rmse_convention: str = "SUM_OF_NORMS"
    # simulate
    x0: Tuple[float, ...] = ()
    inputs: Tuple[float, ...] = ()
    n_steps: int = 100
    # snapshot grid
    grid_counts: Tuple[int, ...] = (15, 15, 15)
    vx_range: Tuple[float, ...] = (-30.0, 30.0)
    vy_range: Tuple[float, ...] = (-30.0, 30.0)
    psidot_range: Tuple[float, ...] = (-10.0, 10.0)
    force_levels: Tuple[float, ...] = (1.0, 5.0, 10.0, 100.0)
    n_force: int = 15
    force_mode: str = "columns"
    # EDMD
    order: int = 7
    dataset: str = ""
    predictor: str = ""
    # sweep
    orders: Tuple[int, ...] = tuple(range(1, 11))
    sweep_n_test: int = 3375
    sweep_horizon: int = 30
    sweep_input_max: float = 100.0
    # restart prediction
    restart_x0: Tuple[float, ...] = (20.8533, -0.7222, -4.3479)
    restart_steps: int = 300
    restart_every: int = 50
    restart_input_max: float = 10000.0
    # eigenfunctions
    energy: float = 500e3
    n_theta: int = 21
    n_phi: int = 21
    bank_T: float = 1.0
    bank_inputs: Tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    lattice_order: int = 5
    lattice_cap: float = 0.5
    n_centers: int = 100
    output_rcond: float = 1e-3
    bank: str = ""
    n_test: int = 2000
    horizon: float = 0.5

    def __post_init__(self):
        if self.model not in MODEL_VARIANTS:
            raise ConfigError(f"model: unknown variant {self.model!r}, expected one of {MODEL_VARIANTS}")
        if not self.Ts > 0:
            raise ConfigError("Ts must be > 0")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.force_mode not in ("columns", "cartesian"):
            raise ConfigError(f"force_mode: unknown value {self.force_mode!r}")
        if self.rmse_convention not in ("SUM_OF_NORMS", "AS_PRINTED"):
            raise ConfigError(f"rmse_convention: unknown value {self.rmse_convention!r}")
        for name in ("vx_range", "vy_range", "psidot_range"):
            lo, hi = getattr(self, name) if len(getattr(self, name)) == 2 else (0, -1)
            if not lo < hi:
                raise ConfigError(f"{name} needs 'lo, hi' with lo < hi")
        if len(self.grid_counts) != 3:
            raise ConfigError("grid_counts needs three entries")

    @property
    def ranges(self):
        return (self.vx_range, self.vy_range, self.psidot_range)

    def output_dir(self) -> Path:
        return Path(self.out_dir or os.environ.get(OUT_DIR_ENV, "") or "koopvd_out")


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _converter(name):
    default = _FIELDS[name].default
    if isinstance(default, bool):
        return _bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, tuple):
        return _tuple(int if default and isinstance(default[0], int) else float)
    return _str


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_from_mapping(mapping: Dict[str, str], base: Optional[RunConfig] = None, source: str = "config"):
    """Apply string values onto ``base``; also returns the vehicle/tire keys found."""
    base = base or RunConfig()
    kwargs, param_keys = {}, {}
    known_params = set(_param_keys())
    for key, raw in mapping.items():
        if key in _FIELDS:
            try:
                kwargs[key] = _converter(key)(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for {key}: {exc}") from None
        elif key in known_params:
            param_keys[key] = raw
        else:
            raise ConfigError(f"{source}: unknown key {key!r}")
    return dataclasses.replace(base, **kwargs), param_keys


def load_config(path) -> Tuple[RunConfig, Dict[str, str]]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg, param_keys = config_from_mapping(parse_kv_text(text, str(path)), source=str(path))
    if cfg.params and not Path(cfg.params).is_absolute():
        cfg = dataclasses.replace(cfg, params=str(path.parent / cfg.params))
    return cfg, param_keys


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{name} = {_format(getattr(cfg, name))}\n" for name in _FIELDS)


def resolve_params(cfg: RunConfig, inline: Optional[Dict[str, str]] = None) -> Tuple[VehicleParams, TireParams]:
    """Parameter file first, inline config keys on top."""
    mapping: Dict[str, str] = {}
    if cfg.params:
        vp, tp = load_params(cfg.params)
        from .params import dump_params

        mapping = parse_kv_text(dump_params(vp, tp))
    mapping.update(inline or {})
    return params_from_mapping(mapping)


def fingerprint(cfg: RunConfig, vp: VehicleParams, tp: TireParams, keys=None) -> str:
    """sha256 over the numeric settings (and parameters) that shape an artifact.

    ``keys`` restricts the config fields hashed; paths, thread counts and
    the workflow name never enter.
    """
    from .params import dump_params

    names = [n for n in _FIELDS if n not in _NON_SEMANTIC and n != "params" and (keys is None or n in keys)]
    text = "".join(f"{n} = {_format(getattr(cfg, n))}\n" for n in names) + dump_params(vp, tp)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


DATASET_KEYS = ("Ts", "grid_counts", "vx_range", "vy_range", "psidot_range", "force_levels", "n_force",
                "force_mode", "seed")
BANK_KEYS = ("Ts", "energy", "n_theta", "n_phi", "bank_T", "bank_inputs", "lattice_order", "lattice_cap",
             "n_centers", "seed")
