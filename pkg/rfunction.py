"""
rfunction.py — the total-mass variance profile R(r), its derivative and the moment ladder.

R is defined by the recursion R(r+1) = ψ_b(R(r)), ψ_b(x) = ((1+x)^b - 1)/b,
together with its r → -∞ behaviour

    R(r) = κ²/(-r) + κ²η log(-r)/r² + O(log²(-r)/(-r)^3),   κ² = 2/(b-1), η = (b+1)/(3(b-1)).

Evaluation seeds far below r and iterates forward. The seed solves Φ(x) = r₀
for the Abel function of ψ_b,

    Φ(ψ_b(x)) = Φ(x) + 1,    Φ(x) = -κ²/x + η log(x/κ²) + Σ_k d_k x^k,

whose coefficients are exact rationals; the constant term is the one that
reproduces the two-term expansion above with no 1/r² correction.

R' follows by differentiating the recursion: R'(r+1) = (1+R(r))^(b-1) R'(r).
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
import pandas as pd
from scipy import optimize

from errors import BudgetError, ConvergenceError, DomainError, OverflowGuardError, UsageError

logger = logging.getLogger(__name__)

LOG_DOUBLE_MAX = 709.0
SERIES_CUTOFF = 1e-6
MAX_COMPOSITIONS = 200_000
MOMENT_TOLERANCE = 1e-9


# ── ψ_b ───────────────────────────────────────────────────────────────────────

def psi(b: int, x: float) -> float:
    """
    ((1+x)^b - 1)/b.
      psi(2, 1) → 1.5
      psi(3, 1) → 7/3
    """
    if x < 0:
        raise DomainError(f"psi needs x >= 0, got {x}")
    if x < SERIES_CUTOFF:
        return x + 0.5 * (b - 1) * x * x + (b - 1) * (b - 2) / 6.0 * x ** 3
    exponent = b * math.log1p(x)
    if exponent > LOG_DOUBLE_MAX:
        raise OverflowGuardError(f"psi_{b}({x:.6g}) exceeds double precision")
    return math.expm1(exponent) / b


def kappa_sq(b: int) -> float:
    return 2.0 / (b - 1)


def eta(b: int) -> float:
    return (b + 1) / (3.0 * (b - 1))


def asymptotic_R(b: int, r: float) -> float:
    if r >= 0:
        raise DomainError(f"the r → -∞ expansion needs r < 0, got {r}")
    u = -r
    return kappa_sq(b) / u + kappa_sq(b) * eta(b) * math.log(u) / u ** 2


def asymptotic_R_prime(b: int, r: float) -> float:
    if r >= 0:
        raise DomainError(f"the r → -∞ expansion needs r < 0, got {r}")
    u = -r
    return kappa_sq(b) / u ** 2 + kappa_sq(b) * eta(b) * (2.0 * math.log(u) - 1.0) / u ** 3


# ── Abel function of ψ_b ──────────────────────────────────────────────────────

def _series_mul(a: list, c: list, size: int) -> list:
    out = [Fraction(0)] * size
    for i, ai in enumerate(a[:size]):
        if ai:
            for j, cj in enumerate(c[: size - i]):
                out[i + j] += ai * cj
    return out


def _series_inv(a: list, size: int) -> list:
    out = [Fraction(0)] * size
    out[0] = 1 / a[0]
    for k in range(1, size):
        out[k] = -sum(a[j] * out[k - j] for j in range(1, min(k, len(a) - 1) + 1)) / a[0]
    return out


def _series_log(a: list, size: int) -> list:
    """log a for a[0] == 1, via (log a)' = a'/a."""
    derivative = [k * a[k] for k in range(1, len(a))] + [Fraction(0)]
    quotient = _series_mul(derivative, _series_inv(a, size), size)
    return [Fraction(0)] + [quotient[k - 1] / k for k in range(1, size)]


@dataclass(frozen=True)
class AbelSeries:
    b: int
    leading: Fraction             # -κ²
    log_coeff: Fraction           # η
    coefficients: tuple[Fraction, ...]   # d_1 .. d_K

    @property
    def constant(self) -> float:
        return -float(self.log_coeff) * math.log(-float(self.leading))

    def value(self, x: float) -> float:
        poly = 0.0
        for d in reversed(self.coefficients):
            poly = poly * x + float(d)
        return float(self.leading) / x + float(self.log_coeff) * math.log(x) + self.constant + poly * x

    def derivative(self, x: float) -> float:
        poly = 0.0
        for k in range(len(self.coefficients), 0, -1):
            poly = poly * x + k * float(self.coefficients[k - 1])
        return -float(self.leading) / x ** 2 + float(self.log_coeff) / x + poly


@lru_cache(maxsize=None)
def abel_coefficients(b: int, order: int = 8) -> AbelSeries:
    """
    Exact coefficients of Φ with Φ(ψ_b(x)) = Φ(x) + 1.

    Writing ψ_b(x) = x·u(x), matching powers of x gives
      x^0:  A v_1 = 1
      x^1:  A v_2 + B ℓ_1 = 0
      x^j:  A v_{j+1} + B ℓ_j + Σ_{k<j} d_k [x^{j-k}](u^k - 1) = 0
    with v = 1/u and ℓ = log u; the x^j equation is linear in d_{j-1}.
    For b = 2: A = -2, B = 1, d_1 = -1/4.
    """
    if b < 2:
        raise UsageError(f"b must be >= 2, got {b}")
    size = order + 3
    u = [Fraction(math.comb(b, k + 1), b) for k in range(b)] + [Fraction(0)] * max(0, size - b)
    u = u[:size]
    v = _series_inv(u, size)
    lg = _series_log(u, size)
    c1 = u[1]
    leading = 1 / v[1]
    log_coeff = -leading * v[2] / lg[1]

    powers = [None, u]
    for _ in range(2, order + 1):
        powers.append(_series_mul(powers[-1], u, size))

    d: list[Fraction] = []
    for j in range(2, order + 2):
        acc = leading * v[j + 1] + log_coeff * lg[j]
        for k in range(1, j - 1):
            acc += d[k - 1] * powers[k][j - k]
        d.append(-acc / ((j - 1) * c1))
    return AbelSeries(b=b, leading=leading, log_coeff=log_coeff, coefficients=tuple(d))


# ── Variance profile ──────────────────────────────────────────────────────────

@dataclass(frozen=True)
class VarianceProfile:
    b: int
    seed_depth: int = 64
    tolerance: float = 1e-12
    max_depth: int = 4096
    series_order: int = 8

    def __post_init__(self):
        if self.b < 2:
            raise UsageError(f"b must be >= 2, got {self.b}")
        if self.seed_depth < 1:
            raise UsageError(f"seed_depth must be >= 1, got {self.seed_depth}")

    @property
    def kappa_sq(self) -> float:
        return kappa_sq(self.b)

    @property
    def eta(self) -> float:
        return eta(self.b)


def _abel_seed(profile: VarianceProfile, r0: float) -> tuple[float, float]:
    series = abel_coefficients(profile.b, profile.series_order)
    guess = asymptotic_R(profile.b, r0)
    try:
        x0 = optimize.brentq(lambda x: series.value(x) - r0, 0.5 * guess, 2.0 * guess,
                             xtol=guess * 1e-16, rtol=4 * np.finfo(float).eps, maxiter=200)
    except ValueError as exc:
        raise ConvergenceError(f"no Abel seed bracket at r0={r0}") from exc
    return x0, 1.0 / series.derivative(x0)


def _iterate(profile: VarianceProfile, r: float, depth: int) -> tuple[float, float]:
    """(R, R') at r from a seed `depth + max(0, ceil(r))` steps below."""
    steps = depth + max(0, math.ceil(r))
    x, dx = _abel_seed(profile, r - steps)
    b = profile.b
    for _ in range(steps):
        growth = (b - 1) * math.log1p(x)
        if growth > LOG_DOUBLE_MAX:
            raise OverflowGuardError(f"R'({r}) exceeds double precision")
        dx *= math.exp(growth)
        x = psi(b, x)
    if not math.isfinite(dx):
        raise OverflowGuardError(f"R'({r}) exceeds double precision")
    return x, dx


def _agree(previous: tuple[float, float], current: tuple[float, float], tolerance: float) -> bool:
    # differences are measured relative to R, or as an equivalent shift in r where
    # R grows faster than it can be resolved relatively
    (R0, D0), (R1, D1) = previous, current
    scale = max(1.0, D1 / R1)
    return abs(R1 - R0) <= tolerance * scale * R1 and abs(D1 - D0) <= tolerance * scale * D1


@lru_cache(maxsize=1 << 16)
def _stabilized(profile: VarianceProfile, r: float) -> tuple[float, float]:
    depth = profile.seed_depth
    previous = current = _iterate(profile, r, depth)
    while True:
        depth *= 2
        if depth > profile.max_depth:
            raise ConvergenceError(
                f"R({r}) did not stabilise by depth {profile.max_depth}",
                previous=previous[0], last=current[0],
            )
        current = _iterate(profile, r, depth)
        if _agree(previous, current, profile.tolerance):
            logger.debug("rfunction: R(%g) stable at depth %d", r, depth)
            return current
        previous = current


def evaluate_R(profile: VarianceProfile, r: float) -> float:
    return _stabilized(profile, float(r))[0]


def evaluate_R_prime(profile: VarianceProfile, r: float) -> float:
    return _stabilized(profile, float(r))[1]


def evaluate_grid(profile: VarianceProfile, grid, threads: int = 1) -> list[tuple[float, float]]:
    """(R, R') for each grid point; order follows the grid whatever the thread count."""
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda r: _stabilized(profile, float(r)), grid))


# ── Moment map ────────────────────────────────────────────────────────────────

@lru_cache(maxsize=None)
def _compositions(k: int, parts: int) -> tuple[tuple[int, tuple[int, ...]], ...]:
    """(multinomial, composition) for every way of writing k as `parts` ordered nonnegative parts."""
    total = math.comb(k + parts - 1, parts - 1)
    if total > MAX_COMPOSITIONS:
        raise BudgetError(f"{total} compositions of {k} into {parts} parts exceeds {MAX_COMPOSITIONS}",
                          limit=MAX_COMPOSITIONS)

    def build(remaining: int, slots: int):
        if slots == 1:
            yield (remaining,)
            return
        for head in range(remaining, -1, -1):
            for tail in build(remaining - head, slots - 1):
                yield (head,) + tail

    out = []
    for comp in build(k, parts):
        multinomial = math.factorial(k)
        for part in comp:
            multinomial //= math.factorial(part)
        out.append((multinomial, comp))
    return tuple(out)


def moment_recursion_step(b: int, moments) -> np.ndarray:
    """
    Push raw moments m_0..m_K of M_r(Γ) to r+1.

    M_{r+1}(Γ) = (1/b) Σ_i Y_i with Y_i = Π_j X_{ij}, all X iid copies of M_r(Γ),
    so E[Y_i^k] = m_k^b and, expanding the k-th power of the sum over
    compositions k_1 + ... + k_b = k,

        m_k(r+1) = b^{-k} Σ multinomial(k; k_1..k_b) Π_i m_{k_i}(r)^b.
    """
    moments = np.asarray(moments, dtype=float)
    if moments[0] != 1.0:
        raise UsageError(f"m_0 must be 1, got {moments[0]}")
    powered = moments ** b
    out = np.empty_like(moments)
    for k in range(len(moments)):
        total = 0.0
        for multinomial, comp in _compositions(k, b):
            term = float(multinomial)
            for part in comp:
                term *= powered[part]
            total += term
        out[k] = total / float(b) ** k
    if not np.all(np.isfinite(out)):
        raise OverflowGuardError("moment map left double precision")
    return out


def centered_from_raw(raw) -> np.ndarray:
    """Central moments around mean 1: Σ_j C(k,j) m_j (-1)^{k-j}."""
    raw = np.asarray(raw, dtype=float)
    out = np.empty_like(raw)
    for k in range(len(raw)):
        out[k] = sum(math.comb(k, j) * raw[j] * (-1.0) ** (k - j) for j in range(k + 1))
    return out


def seed_moments(kind: str, variance: float, k_max: int) -> np.ndarray:
    """
    Raw moments of the unit-mean seed laws:
      two-point          1 ± √v with probability 1/2 each
      lognormal          exp(σZ - σ²/2), σ² = log(1 + v)
      deterministic-one  the constant 1
    """
    k = np.arange(k_max + 1, dtype=float)
    if kind == "deterministic-one":
        return np.ones(k_max + 1)
    if kind == "two-point":
        if variance > 1.0:
            raise DomainError(f"two-point seed needs variance <= 1 for nonnegative support, got {variance}")
        sigma = math.sqrt(variance)
        return 0.5 * ((1.0 + sigma) ** k + (1.0 - sigma) ** k)
    if kind == "lognormal":
        sigma_sq = math.log1p(variance)
        return np.exp(k * (k - 1.0) * sigma_sq / 2.0)
    raise UsageError(f"unknown seed kind {kind!r}")


@dataclass(frozen=True)
class MomentTable:
    b: int
    r_grid: np.ndarray
    raw: np.ndarray        # (len(r_grid), K_max + 1)
    centered: np.ndarray   # same shape

    @property
    def k_max(self) -> int:
        return self.raw.shape[1] - 1

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"r": self.r_grid})
        for k in range(2, self.k_max + 1):
            frame[f"m{k}"] = self.raw[:, k]
        for k in range(3, self.k_max + 1):
            frame[f"Rc{k}"] = self.centered[:, k]
        return frame


def _moments_at(profile: VarianceProfile, r: float, k_max: int, seed_kind: str, depth: int) -> np.ndarray:
    steps = depth + max(0, math.ceil(r))
    r0 = r - steps
    moments = seed_moments(seed_kind, evaluate_R(profile, r0), k_max)
    for _ in range(steps):
        moments = moment_recursion_step(profile.b, moments)
    return moments


def _moments_stabilized(profile: VarianceProfile, r: float, k_max: int, seed_kind: str) -> np.ndarray:
    depth = profile.seed_depth
    previous = current = _moments_at(profile, r, k_max, seed_kind, depth)
    while True:
        depth *= 2
        if depth > profile.max_depth:
            raise ConvergenceError(f"moments at r={r} did not stabilise by depth {profile.max_depth}",
                                   previous=float(previous[-1]), last=float(current[-1]))
        current = _moments_at(profile, r, k_max, seed_kind, depth)
        if np.all(np.abs(current - previous) <= MOMENT_TOLERANCE * current):
            return current
        previous = current


def centered_moment_table(profile: VarianceProfile, r_grid, k_max: int = 6,
                          seed_kind: str = "two-point") -> MomentTable:
    """Raw and centered total-mass moments on a grid, iterated from the chosen seed law."""
    if k_max < 2:
        raise UsageError(f"k_max must be >= 2, got {k_max}")
    _compositions(k_max, profile.b)
    grid = np.asarray(list(r_grid), dtype=float)
    raw = np.vstack([_moments_stabilized(profile, float(r), k_max, seed_kind) for r in grid])
    centered = np.vstack([centered_from_raw(row) for row in raw])
    return MomentTable(b=profile.b, r_grid=grid, raw=raw, centered=centered)
