# config.py
"""Runtime configuration: defaults < TOML config file < environment < CLI flags."""

from __future__ import annotations

import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from bitrev.exceptions import BitrevError

JOBS_ENV = "BITREV_JOBS"


def _default_jobs() -> int:
    value = os.environ.get(JOBS_ENV)
    if value is None:
        return 1
    try:
        return max(1, int(value))
    except ValueError:
        return 1


class Config(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # --- Fabric ---
    device_id: str = "xbr6-desk"
    grid_width: int = Field(16, ge=1)
    grid_height: int = Field(16, ge=1)
    # (pip_count, sink_count, bit_budget) per switch-matrix type
    sm_type_specs: list[tuple[int, int, int]] = [(200, 40, 256), (200, 40, 320)]
    default_fraction: float = Field(0.01, ge=0.0, le=1.0)
    overprovision_rate: float = Field(0.25, ge=0.25, le=1.0)
    slices_per_tile: int = Field(2, ge=1)
    luts_per_slice: int = Field(2, ge=1)
    lut_arity: int = Field(4, ge=2, le=6)
    ffs_per_slice: int = Field(2, ge=1)

    # --- Pipeline ---
    seed: int = 0
    jobs: int = Field(default_factory=_default_jobs, ge=1)

    # --- Trojan case study ---
    shift_register_threshold: int = Field(4, ge=2)
    trials: int = Field(20, ge=1)

    @field_validator("sm_type_specs")
    @classmethod
    def _check_specs(cls, specs: list[tuple[int, int, int]]) -> list[tuple[int, int, int]]:
        if not specs:
            raise ValueError("at least one switch-matrix type is required")
        for pip_count, sink_count, budget in specs:
            if not pip_count >= sink_count >= 1 or budget < 1:
                raise ValueError(f"invalid type spec ({pip_count}, {sink_count}, {budget})")
        return specs

    @property
    def grid(self) -> tuple[int, int]:
        return (self.grid_width, self.grid_height)


def load_config(path: str | Path | None = None, **overrides) -> Config:
    """Build a Config from an optional TOML file plus explicit overrides.

    Overrides whose value is None are ignored so that unset CLI flags keep the
    file or environment value.
    """
    values: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                values.update(tomllib.load(fh))
        except (OSError, tomllib.TOMLDecodeError) as e:
            raise BitrevError(f"cannot read config file {path}: {e}") from e
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return Config(**values)
    except ValidationError as e:
        raise BitrevError(f"invalid configuration: {e}") from e
