"""Run configuration shared by the command line and the experiment scripts."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .fiber import DEFAULT_MARGIN_D1, DEFAULT_MARGIN_DELTA
from .invariants import FORMAT_VERSION, required_quadrature_order
from .sphharm import DEGREE_CAP

CACHE_ENV = "SE3INV_CACHE_DIR"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str = ""
    input: str | None = None
    output: str | None = None
    caps_d: int = 6
    caps_dprime: int = 4
    quad_order: int = 2          # triangle rule for surface sampling
    rank_tol: float = 1e-3
    margin_d1: float = DEFAULT_MARGIN_D1
    margin_delta: float = DEFAULT_MARGIN_DELTA
    eps: float | None = None
    fibers: int = 1
    seed: int = 0
    format: str = "binary"
    format_version: int = FORMAT_VERSION

    def validate(self) -> "RunConfig":
        if not (0 <= self.caps_d <= DEGREE_CAP and 0 <= self.caps_dprime <= DEGREE_CAP):
            raise ConfigError(f"caps must lie in [0, {DEGREE_CAP}]")
        if self.quad_order not in (1, 2, 3, 4, 5):
            raise ConfigError("quad_order must be 1..5")
        if not 0 < self.rank_tol < 1:
            raise ConfigError("rank_tol must lie in (0, 1)")
        for name in ("margin_d1", "margin_delta"):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if self.eps is not None and self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.fibers < 1:
            raise ConfigError("fibers must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.format not in ("binary", "text"):
            raise ConfigError("format must be binary or text")
        return self

    @property
    def so3_order(self) -> int:
        return required_quadrature_order(self.caps_d, self.caps_dprime)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_sources(cls, flags: dict, config_file: str | None = None) -> "RunConfig":
        """Merge with precedence flags > config file > defaults.  ``None`` flags count as unset."""
        known = {f.name for f in fields(cls)}
        cfg = cls()
        if config_file:
            data = json.loads(Path(config_file).read_text())
            unknown = set(data) - known
            if unknown:
                raise ConfigError(f"unknown config keys: {sorted(unknown)}")
            cfg = replace(cfg, **data)
        cfg = replace(cfg, **{k: v for k, v in flags.items() if k in known and v is not None})
        return cfg.validate()


def cache_dir() -> Path | None:
    p = os.environ.get(CACHE_ENV)
    return Path(p) if p else None
