"""Run configuration.

A config file is a flat list of ``key = value`` lines (``#`` starts a
comment).  Keys are the long CLI option names, with either dashes or
underscores.  Values given on the command line win over the file.  Every
field is checked, and every derived object (kernel, weight schedule,
predictive family) is built, before any computation starts.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .copula import DEFAULT_RHO_GRID, CopulaFamily, WeightSchedule
from .kernels import KernelSpec, parse_kernel
from .meanvar import MODES, MeanVarFamily
from .resampler import ESTIMANDS, ResamplingPlan

__all__ = ["ConfigError", "RunConfig", "read_config_file", "parse_rho_grid", "parse_weights", "parse_int_list"]

FAMILIES = ("meanvar", "copula")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Every CLI-exposed parameter.  ``None`` means "use the default"."""

    data: str | None = None
    out: str | None = None
    family: str = "meanvar"
    kernel: str = "gaussian"
    mode: str = "empirical"
    rho: float | None = None
    rho_grid: str | None = None
    weights: str = "a"
    grid_min: float = -10.0
    grid_max: float = 10.0
    grid_size: int = 2001
    s: int | None = None
    N: int = 100
    B: int = 1000
    estimand: str = "mean"
    seed: int = 0
    workers: int = 1
    coordinate: int = 0
    allow_degenerate: bool = False
    kde: bool = False
    n_max: int = 10000
    reps: int = 50
    n_list: str = "100,1000,10000"
    gamma: str = "0.4,0.5"
    delta: float = 0.05
    copula_bound: float | None = None
    draws: int = 100000
    bench_s: str = "100,500"
    bench_N: str = "100,500"

    # ---- construction -------------------------------------------------

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_sources(cls, file_values: dict | None = None, cli_values: dict | None = None) -> "RunConfig":
        merged: dict = {}
        for source in (file_values or {}, {k: v for k, v in (cli_values or {}).items() if v is not None}):
            for key, val in source.items():
                name = _canonical(key)
                if name not in cls.field_names():
                    raise ConfigError(f"unknown configuration key {key!r}")
                merged[name] = val
        cfg = cls()
        for f in fields(cls):
            if f.name in merged:
                setattr(cfg, f.name, _coerce(f.name, merged[f.name], f.type))
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def record(self) -> dict:
        """Fields that can change results; ``workers`` only changes wall-clock time."""
        d = self.to_dict()
        d.pop("workers")
        return d

    def to_file_text(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if v is None:
                continue
            lines.append(f"{k} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    # ---- validation and derived objects -------------------------------

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.estimand not in ESTIMANDS:
            raise ConfigError(f"estimand must be one of {ESTIMANDS}")
        for name in ("N", "coordinate"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        for name in ("B", "workers", "reps", "draws"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.n_max < 0:
            raise ConfigError("n_max must be nonnegative")
        if self.s is not None and self.s < 1:
            raise ConfigError("s must be at least 1")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if not (self.grid_max > self.grid_min) or self.grid_size < 3:
            raise ConfigError("grid needs grid_max > grid_min and grid_size >= 3")
        if self.rho is not None and not (0 <= self.rho < 1):
            raise ConfigError("rho must lie in [0, 1)")
        if not (self.delta > 0):
            raise ConfigError("delta must be positive")
        if self.copula_bound is not None and not (self.copula_bound > 0):
            raise ConfigError("copula_bound must be positive")
        # building the derived objects surfaces every remaining error now
        self.rho_values()
        self.schedule()
        self.kernel_spec(None)
        for name in ("n_list", "bench_s", "bench_N"):
            parse_int_list(getattr(self, name), name)
        self.gammas()

    def rho_values(self) -> tuple:
        return DEFAULT_RHO_GRID if self.rho_grid is None else parse_rho_grid(self.rho_grid)

    def schedule(self) -> WeightSchedule:
        return parse_weights(self.weights)

    def kernel_spec(self, dim: int | None = 1) -> KernelSpec:
        try:
            k = parse_kernel(self.kernel, dim)
        except (ValueError, OSError) as exc:
            raise ConfigError(f"kernel: {exc}") from exc
        return k

    def gammas(self) -> list[float]:
        try:
            return [float(t) for t in str(self.gamma).split(",") if t.strip()]
        except ValueError as exc:
            raise ConfigError(f"gamma: {exc}") from exc

    def predictive_family(self, dim: int = 1) -> MeanVarFamily | CopulaFamily:
        if self.family == "meanvar":
            return MeanVarFamily(self.kernel_spec(dim), self.mode)
        return CopulaFamily(self.rho, self.rho_values(), self.schedule(), self.grid_min, self.grid_max,
                            self.grid_size)

    def plan(self, data: np.ndarray) -> ResamplingPlan:
        s, p = data.shape
        if self.s is not None and self.s != s:
            raise ConfigError(f"s={self.s} but the dataset has {s} rows")
        return ResamplingPlan(s, self.N, self.B, self.estimand, self.predictive_family(p), self.seed,
                              self.coordinate, self.allow_degenerate)


# --------------------------------------------------------------------------
# parsing helpers


def _canonical(key: str) -> str:
    return key.strip().lstrip("-").replace("-", "_")


def _coerce(name: str, value, typ):
    if not isinstance(value, str):
        return value
    text = value.strip()
    typ = str(typ)
    try:
        if "bool" in typ:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if text.lower() in ("none", "") and "None" in typ:
            return None
        if typ.startswith("int"):
            return int(text)
        if typ.startswith("float"):
            v = float(text)
            if not math.isfinite(v):
                raise ValueError("must be finite")
            return v
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc
    return text


def read_config_file(path) -> dict:
    """Parse a ``key = value`` file into a dict of strings."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such config file")
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {lineno}: expected key = value")
        key, val = (t.strip() for t in line.split("=", 1))
        if _canonical(key) not in RunConfig.field_names():
            raise ConfigError(f"{path}: line {lineno}: unknown configuration key {key!r}")
        out[_canonical(key)] = val
    return out


def parse_rho_grid(text: str) -> tuple:
    """``lo:hi:step`` (inclusive of ``hi``) or a comma-separated list."""
    try:
        if ":" in text:
            lo, hi, step = (float(t) for t in text.split(":"))
            if step <= 0 or hi < lo:
                raise ValueError("need lo <= hi and step > 0")
            k = int(math.floor((hi - lo) / step + 1e-9))
            vals = tuple(round(lo + i * step, 12) for i in range(k + 1))
        else:
            vals = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise ConfigError(f"rho_grid: {exc}") from exc
    if not vals or any(not (0 < v < 1) for v in vals):
        raise ConfigError("rho_grid values must lie in (0, 1)")
    return vals


def parse_weights(text: str) -> WeightSchedule:
    """``a``, ``b``, ``const:<r>`` or ``file:<path>`` (one weight per line)."""
    text = str(text).strip()
    try:
        if text.lower() == "a":
            return WeightSchedule.a()
        if text.lower() == "b":
            return WeightSchedule.b()
        if text.startswith("const:"):
            return WeightSchedule.constant(float(text[6:]))
        if text.startswith("file:"):
            from .io import load_vector

            return WeightSchedule.custom(load_vector(text[5:]))
    except ValueError as exc:
        raise ConfigError(f"weights: {exc}") from exc
    raise ConfigError(f"weights must be a, b, const:<r> or file:<path>, got {text!r}")


def parse_int_list(text, name: str = "list") -> list[int]:
    try:
        vals = [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc
    if not vals or any(v < 0 for v in vals):
        raise ConfigError(f"{name} needs nonnegative integers")
    return vals
