"""
config.py — environment defaults and the validated run configuration.

Environment variables (optionally from a .env file) provide machine-level
defaults; a RunConfig is what every command actually runs from and what the
manifest records.
"""

import os
from pathlib import Path
from typing import Literal

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from errors import UsageError

load_dotenv()

TOOL_VERSION = "0.3.0"

DEFAULT_OUT_DIR = Path(os.environ.get("DHL_OUT_DIR", "./runs"))
DEFAULT_THREADS = int(os.environ.get("DHL_THREADS", 1))
DEFAULT_CHUNKS = int(os.environ.get("DHL_CHUNKS", 8))
LOG_LEVEL = os.environ.get("DHL_LOG_LEVEL", "INFO")

# |Γ_n| is kept as an exact integer up to this generation, log-space only beyond
EXACT_GENERATION = int(os.environ.get("DHL_EXACT_GENERATION", 6))
# Largest cylinder vector (|Γ_n|) any enumeration or MeasureSample may allocate
MAX_CYLINDERS = int(os.environ.get("DHL_MAX_CYLINDERS", 1 << 16))

COMMANDS = ("rfunc", "correlation", "simulate", "gmc", "fixed-point")
GMC_CHECKS = ("shift", "kahane", "conditional", "renormalization", "strong-disorder", "semigroup", "all")


class RunConfig(BaseModel):
    """Flat, fully serialisable description of one command run."""

    model_config = ConfigDict(extra="forbid")

    command: Literal["rfunc", "correlation", "simulate", "gmc", "fixed-point"] = "rfunc"
    b: int = Field(2, ge=2)
    s: int | None = Field(None, ge=2)
    r: float = 0.0
    a: float = 1.0
    n: int = Field(2, ge=0)
    n_max: int = Field(10, ge=1)
    depth: int = Field(24, ge=1)
    size: int = Field(1_000_000, ge=1)
    seed: int = Field(20240601, ge=0)
    seed_spec: Literal["two-point", "lognormal", "deterministic-one"] = "two-point"
    # None leaves each experiment on its own kernel mode
    mode: Literal["exact-discrete", "asymptotic"] | None = None
    stabilization: Literal["mean-variance", "mean", "none"] = "mean-variance"
    grid: str = "-8:1:8"
    r_grid: str = "1,4,9,16"
    check: Literal["shift", "kahane", "conditional", "renormalization", "strong-disorder", "semigroup", "all"] = "all"
    realizations: int = Field(1000, ge=1)
    draws: int = Field(1000, ge=1)
    kmax: int = Field(6, ge=2)
    out: Path = DEFAULT_OUT_DIR
    threads: int = Field(DEFAULT_THREADS, ge=1)
    chunks: int = Field(DEFAULT_CHUNKS, ge=1)
    allow_flagged: bool = False
    progress: bool = False

    @field_validator("grid")
    @classmethod
    def _grid_parses(cls, value: str) -> str:
        parse_grid(value)
        return value

    @field_validator("r_grid")
    @classmethod
    def _r_grid_parses(cls, value: str) -> str:
        parse_grid(value)
        return value

    @model_validator(mode="after")
    def _default_segmenting(self):
        if self.s is None:
            self.s = self.b
        return self

    # ── Flat text format ────────────────────────────────────────────────────

    def to_text(self) -> str:
        lines = []
        for key, value in self.model_dump(mode="json").items():
            if value is None:
                continue
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, **overrides) -> "RunConfig":
        """Parse `key = value` lines (# comments allowed); overrides win over file keys."""
        values = parse_config_text(text)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


def parse_config_text(text: str) -> dict:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key in values:
            raise UsageError(f"config line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def parse_grid(text: str) -> list[float]:
    """
    Parse an r-grid: either `lo:step:hi` (inclusive) or a comma list.
      "-8:1:8"  → 17 points
      "0:1:0"   → [0.0]
      "1,4,9"   → [1.0, 4.0, 9.0]
    """
    text = text.strip()
    try:
        if ":" in text:
            lo, step, hi = (float(part) for part in text.split(":"))
            if step <= 0 or hi < lo:
                raise UsageError(f"grid {text!r}: need step > 0 and hi >= lo")
            count = int(round((hi - lo) / step)) + 1
            return [lo + step * i for i in range(count)]
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        if isinstance(exc, UsageError):
            raise
        raise UsageError(f"grid {text!r} is not 'lo:step:hi' or a comma list") from exc
