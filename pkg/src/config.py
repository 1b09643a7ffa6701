"""
Configuration

Environment settings (cache directory, dense-solve limit, worker count) and the
validated ExperimentConfig shared by the CLI and the HTTP API.
"""

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Subcommands that draw random numbers and therefore require an explicit seed
STOCHASTIC_COMMANDS = {"sample", "compare", "tails", "second-moment"}

SUBCOMMANDS = ("profile", "sample", "cov-check", "compare", "tails", "second-moment")

FIELD_KINDS = ("dgff", "psi", "ibrw", "mibrw", "tmibrw")


@dataclass(frozen=True)
class Settings:
    """Process-wide settings read from the environment."""

    cache_dir: Path | None = None
    max_dense_side: int = 64
    threads: int = 1
    data_dir: Path = Path("/app/data")

    @classmethod
    def from_env(cls) -> "Settings":
        cache = os.environ.get("DGFF_CACHE_DIR")
        return cls(
            cache_dir=Path(cache) if cache else None,
            max_dense_side=int(os.environ.get("DGFF_MAX_DENSE_SIDE", "64")),
            threads=max(1, int(os.environ.get("DGFF_THREADS", "1"))),
            data_dir=Path(os.environ.get("DGFF_DATA_DIR", "/app/data")),
        )


_settings: Settings | None = None


def get_settings() -> Settings:
    """Return the cached settings, reading the environment on first use."""
    global _settings
    if _settings is None:
        _settings = Settings.from_env()
    return _settings


def reset_settings(settings: Settings | None = None) -> None:
    """Replace (or clear) the cached settings; used by tests and the CLI."""
    global _settings
    _settings = settings


def parse_int_list(value: str | int | list[int]) -> list[int]:
    """
    Parse "3..6", "3,4,5" or a single integer into a list of integers.

    Args:
        value: Range or list spec

    Returns:
        Ascending list of integers

    Raises:
        ValueError: If the spec is malformed or empty
    """
    if isinstance(value, int):
        return [value]
    if isinstance(value, list):
        return [int(v) for v in value]
    text = str(value).strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo_i, hi_i = int(lo), int(hi)
        if hi_i < lo_i:
            raise ValueError(f"empty range '{text}'")
        return list(range(lo_i, hi_i + 1))
    items = [int(part) for part in text.split(",") if part.strip()]
    if not items:
        raise ValueError(f"empty list '{text}'")
    return items


def parse_float_list(value: str | float | list[float]) -> list[float]:
    """Parse "0,0.5,1", "0:2:0.25" (start:stop:step, inclusive) or a number."""
    if isinstance(value, (int, float)):
        return [float(value)]
    if isinstance(value, list):
        return [float(v) for v in value]
    text = str(value).strip()
    if text.count(":") == 2:
        start, stop, step = (float(p) for p in text.split(":"))
        if step <= 0:
            raise ValueError("grid step must be positive")
        count = int(round((stop - start) / step)) + 1
        return [round(start + i * step, 12) for i in range(max(count, 0))]
    return [float(part) for part in text.split(",") if part.strip()]


class ExperimentConfig(BaseModel):
    """Resolved configuration of one experiment run."""

    model_config = ConfigDict(extra="forbid")

    command: Literal["profile", "sample", "cov-check", "compare", "tails", "second-moment"]
    profile: str | dict[str, list[float]] = "flat"
    n_list: list[int] = Field(default_factory=lambda: [4])
    seed: int | None = None
    replicates: int = Field(default=2000, ge=1)
    kind: Literal["dgff", "psi", "ibrw", "mibrw", "tmibrw"] = "mibrw"
    k0: int = Field(default=0, ge=0)
    kappa: int | Literal["auto"] = "auto"
    cf: float | None = Field(default=None, gt=0)
    y_grid: list[float] = Field(default_factory=lambda: [0.0, 1.0, 2.0])
    x_grid: list[float] | None = None
    lambda_grid: list[float] | None = None
    lemma: Literal["cov_comp", "increment"] = "cov_comp"
    items: list[str] = Field(default_factory=lambda: ["i", "ii", "iii", "iv"])
    delta: float = Field(default=0.3, gt=0, lt=0.5)
    direction: Literal["upper", "lower", "mean-upper", "mean-lower"] = "upper"
    method: Literal["monte-carlo", "semi-analytic"] = "monte-carlo"
    recentre: bool = False
    tightness: bool = False
    slope_tolerance: float = Field(default=0.05, gt=0)
    threads: int = Field(default=1, ge=1)
    output: str | None = None
    format: Literal["csv", "json"] = "json"
    checkpoint: str | None = None

    @field_validator("n_list")
    @classmethod
    def _check_n_list(cls, value: list[int]) -> list[int]:
        if not value:
            raise ValueError("n_list must not be empty")
        if any(n < 1 or n > 20 for n in value):
            raise ValueError("every n must lie in [1, 20]")
        if value != sorted(value):
            raise ValueError("n_list must be ascending")
        return value

    @field_validator("items")
    @classmethod
    def _check_items(cls, value: list[str]) -> list[str]:
        unknown = set(value) - {"i", "ii", "iii", "iv"}
        if unknown:
            raise ValueError(f"unknown cov_comp items: {sorted(unknown)}")
        return value

    @field_validator("kappa")
    @classmethod
    def _check_kappa(cls, value: int | str) -> int | str:
        if isinstance(value, int) and value < 0:
            raise ValueError("kappa must be non-negative")
        return value

    @model_validator(mode="after")
    def _check_seed(self) -> "ExperimentConfig":
        if self.command in STOCHASTIC_COMMANDS and self.seed is None:
            raise ValueError(f"'{self.command}' requires an explicit --seed")
        if self.seed is not None and self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.kind == "tmibrw" and any(self.k0 > n for n in self.n_list):
            raise ValueError("k0 must not exceed n")
        return self

    @property
    def n(self) -> int:
        """The (last) grid exponent for single-n experiments."""
        return self.n_list[-1]

    def resolved(self) -> dict[str, Any]:
        """JSON-safe dict of every field, sorted for deterministic output."""
        return json.loads(self.model_dump_json())

    def digest(self) -> str:
        """Short hash of the resolved config (checkpoint key)."""
        # output location and worker count do not change results
        keyed = {k: v for k, v in self.resolved().items()
                 if k not in {"output", "format", "threads", "checkpoint"}}
        payload = json.dumps(keyed, sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]
