"""
reporting.py — check verdicts, run manifests and table emission.

Every experiment reduces to a list of CheckResult rows (target, estimate,
standard error, tolerance, verdict). Verdicts are three-valued:

  pass     estimate inside the tolerance band
  fail     estimate outside the band, or not finite
  flagged  the estimate is statistically unreliable (relative SE > 10%) or the
           check was declared soft, so it neither passes nor fails outright
"""

import json
import logging
import math
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Literal

import pandas as pd
from pydantic import BaseModel, Field

from config import TOOL_VERSION

logger = logging.getLogger(__name__)

RELATIVE_SE_FLAG = 0.10

SEEDING_BIAS_NOTE = (
    "systematic: finite-level seed laws are a surrogate for the continuum law of M_r; "
    "seeding bias is bounded only empirically by the seed-insensitivity comparison"
)

Verdict = Literal["pass", "fail", "flagged"]


# ── Check results ─────────────────────────────────────────────────────────────

class CheckResult(BaseModel):
    name: str
    target: float | None = None
    estimate: float | None = None
    se: float | None = None
    tolerance: float | None = None
    verdict: Verdict
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


def _finite(*values) -> bool:
    return all(v is None or math.isfinite(v) for v in values)


def _unreliable(estimate: float, se: float | None) -> bool:
    if se is None or estimate == 0:
        return False
    return se / abs(estimate) > RELATIVE_SE_FLAG


def check_close(name: str, target: float, estimate: float, tolerance: float,
                relative: bool = False, detail: str = "") -> CheckResult:
    """Deterministic comparison: |estimate - target| <= tolerance (times |target| if relative)."""
    if not _finite(target, estimate):
        return CheckResult(name=name, target=target, estimate=estimate, tolerance=tolerance,
                           verdict="fail", detail=detail or "non-finite value")
    band = tolerance * abs(target) if relative else tolerance
    verdict = "pass" if abs(estimate - target) <= band else "fail"
    return CheckResult(name=name, target=target, estimate=estimate, tolerance=band,
                       verdict=verdict, detail=detail)


def check_statistical(name: str, target: float, estimate: float, se: float,
                      n_sigma: float = 4.0, soft: bool = False, detail: str = "") -> CheckResult:
    """
    Monte Carlo comparison within n_sigma standard errors.
    A soft check reports a miss as flagged instead of fail.
    """
    if not _finite(target, estimate, se):
        return CheckResult(name=name, target=target, estimate=estimate, se=se,
                           verdict="fail", detail=detail or "non-finite value")
    tolerance = n_sigma * se
    if _unreliable(estimate, se):
        verdict = "flagged"
    elif abs(estimate - target) <= tolerance:
        verdict = "pass"
    else:
        verdict = "flagged" if soft else "fail"
    return CheckResult(name=name, target=target, estimate=estimate, se=se,
                       tolerance=tolerance, verdict=verdict, detail=detail)


def check_at_most(name: str, estimate: float, bound: float, se: float = 0.0,
                  n_sigma: float = 4.0, detail: str = "") -> CheckResult:
    """One-sided: estimate <= bound + n_sigma * se."""
    if not _finite(estimate, bound, se):
        return CheckResult(name=name, target=bound, estimate=estimate, se=se,
                           verdict="fail", detail=detail or "non-finite value")
    tolerance = n_sigma * se
    verdict = "pass" if estimate <= bound + tolerance else "fail"
    return CheckResult(name=name, target=bound, estimate=estimate, se=se,
                       tolerance=tolerance, verdict=verdict, detail=detail)


def check_decrease(name: str, first: float, first_se: float, second: float, second_se: float,
                   n_sigma: float = 4.0, detail: str = "") -> CheckResult:
    """Strict decrease: first - second > n_sigma * hypot(first_se, second_se)."""
    se = math.hypot(first_se, second_se)
    if not _finite(first, second, se):
        return CheckResult(name=name, target=first, estimate=second, se=se,
                           verdict="fail", detail=detail or "non-finite value")
    tolerance = n_sigma * se
    verdict = "pass" if first - second > tolerance else "fail"
    return CheckResult(name=name, target=first, estimate=second, se=se,
                       tolerance=tolerance, verdict=verdict, detail=detail)


def check_flag(name: str, ok: bool, detail: str = "", soft: bool = False) -> CheckResult:
    verdict = "pass" if ok else ("flagged" if soft else "fail")
    return CheckResult(name=name, verdict=verdict, detail=detail)


def failure(name: str, exc: Exception) -> CheckResult:
    return CheckResult(name=name, verdict="fail", detail=f"{type(exc).__name__}: {exc}")


# ── Manifest ──────────────────────────────────────────────────────────────────

def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class RunManifest(BaseModel):
    command: str
    config: dict
    tool_version: str = TOOL_VERSION
    started_at: str = Field(default_factory=_now)
    finished_at: str | None = None
    wall_seconds: float | None = None
    checks: list[CheckResult] = Field(default_factory=list)
    notes: list[str] = Field(default_factory=list)
    outputs: list[str] = Field(default_factory=list)
    started_clock: float = Field(default_factory=time.perf_counter, exclude=True)

    def add(self, *checks: CheckResult) -> None:
        for check in checks:
            if check.verdict != "pass":
                logger.warning("check %s: %s (%s)", check.name, check.verdict, check.detail)
            self.checks.append(check)

    def counts(self) -> dict[str, int]:
        tally = {"pass": 0, "fail": 0, "flagged": 0}
        for check in self.checks:
            tally[check.verdict] += 1
        return tally

    def exit_code(self, allow_flagged: bool = False) -> int:
        tally = self.counts()
        if tally["fail"]:
            return 1
        if tally["flagged"] and not allow_flagged:
            return 1
        return 0

    def finish(self) -> None:
        self.finished_at = _now()
        self.wall_seconds = time.perf_counter() - self.started_clock


# ── Emission ──────────────────────────────────────────────────────────────────

def write_table(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    logger.info("wrote %s (%d rows)", path, len(frame))
    return path


def write_json(payload: dict, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")
    return path


def write_manifest(manifest: RunManifest, out_dir: Path) -> Path:
    path = out_dir / f"{manifest.command}-manifest.json"
    write_json(manifest.model_dump(mode="json"), path)
    logger.info("manifest %s: %s", path, manifest.counts())
    return path


def checks_frame(checks: list[CheckResult]) -> pd.DataFrame:
    return pd.DataFrame([c.model_dump() for c in checks],
                        columns=["name", "target", "estimate", "se", "tolerance", "verdict", "detail"])
