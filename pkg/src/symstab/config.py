"""Analysis settings: one layer of defaults, overridable by a JSON file and then flags."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from typing import Any, Mapping

__all__ = ["AnalysisConfig", "ConfigError"]

# fields that only say where output goes; they never affect results
_OUTPUT_FIELDS = ("output", "csv_dir")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AnalysisConfig:
    conservation_tol: float = 1e-10
    bracket_tol: float = 1e-8
    rank_rtol: float = 1e-8
    sample_count: int = 1000
    sample_half_width: float = 2.0
    scales: tuple[float, ...] = (2.0, 8.0, 32.0)
    resolution: int | None = None
    budget: int = 10**8
    horizon: float | None = None
    seeds: tuple[tuple[float, ...], ...] | None = None
    escape_radii: tuple[float, ...] = (1e2, 1e3, 1e4)
    rtol: float = 1e-9
    atol: float = 1e-12
    ghost_scales: tuple[float, ...] = (1.0, 10.0, 100.0, 1000.0)
    ghost_threshold: float = 1e6
    ghost_steps: int = 200
    ghost_samples: int = 512
    transient: float = 0.1
    output: str | None = None
    csv_dir: str | None = None

    def __post_init__(self):
        for name in ("conservation_tol", "bracket_tol", "rank_rtol", "rtol", "atol",
                     "sample_half_width", "ghost_threshold"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("scales", "escape_radii", "ghost_scales"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals or any(v <= 0 for v in vals) or any(b <= a for a, b in zip(vals, vals[1:])):
                raise ConfigError(f"{name} must be a non-empty increasing list of positive numbers")
            object.__setattr__(self, name, vals)
        if self.seeds is not None:
            object.__setattr__(self, "seeds", tuple(tuple(float(v) for v in s) for s in self.seeds))
        if self.horizon is not None and not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        if not 0 <= self.transient < 1:
            raise ConfigError("transient must lie in [0, 1)")
        if self.sample_count < 1 or self.ghost_steps < 1 or self.ghost_samples < 1:
            raise ConfigError("counts must be positive")

    @classmethod
    def from_sources(cls, file_values: Mapping[str, Any] | None = None,
                     flag_values: Mapping[str, Any] | None = None) -> "AnalysisConfig":
        """Defaults, then ``file_values``, then ``flag_values`` (None flags are ignored)."""
        known = {f.name for f in dataclasses.fields(cls)}
        merged: dict[str, Any] = {}
        for src in (file_values or {}, flag_values or {}):
            for k, v in src.items():
                if k not in known:
                    raise ConfigError(f"unknown config key {k!r}")
                if v is not None:
                    merged[k] = v
        try:
            return cls(**merged)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str, flag_values: Mapping[str, Any] | None = None) -> "AnalysisConfig":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_sources(doc, flag_values)

    def replace(self, **changes) -> "AnalysisConfig":
        return dataclasses.replace(self, **changes)

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = [list(x) if isinstance(x, tuple) else x for x in v]
        return out

    def digest(self) -> str:
        doc = {k: v for k, v in self.to_json().items() if k not in _OUTPUT_FIELDS}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()
