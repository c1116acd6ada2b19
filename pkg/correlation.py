"""
correlation.py — the cylinder correlation measure υ_r and its discrete identities.

On generation-n cylinder pairs υ_r(p × q) = (1 + R(r-n))^{N_n(p,q)} / |Γ_n|², so every
functional of υ_r is a sum over the values of N_n. The pair-count histogram

    h_n(k) = #{(p, q) ∈ Γ_n × Γ_n : N_n(p, q) = k}

is built by the recursion on p = (i; p_1..p_b): pairs with the same top branch add
their sub-pair counts, pairs with different top branches share nothing. Counts are
exact Python ints; weights live in log space, which keeps generation 12 (about
10^2466 pairs at b = 2) cheap.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import pandas as pd
from scipy.special import logsumexp

import lattice
from errors import DomainError, UsageError
from lattice import CylinderPath, LatticeParams
from rfunction import VarianceProfile, evaluate_R, evaluate_R_prime, kappa_sq

logger = logging.getLogger(__name__)


# ── Histograms ────────────────────────────────────────────────────────────────

def _convolve(left: dict[int, int], right: dict[int, int]) -> dict[int, int]:
    out: dict[int, int] = {}
    for i, ci in left.items():
        for j, cj in right.items():
            out[i + j] = out.get(i + j, 0) + ci * cj
    return out


@dataclass(frozen=True)
class PairCountHistogram:
    params: LatticeParams
    n: int
    counts: dict[int, int]

    @property
    def support(self) -> np.ndarray:
        return np.array(sorted(self.counts), dtype=np.int64)

    def total(self) -> int:
        return sum(self.counts.values())

    def moment(self, k: int) -> int:
        return sum(c * N ** k for N, c in self.counts.items())

    def log_counts(self) -> np.ndarray:
        return np.array([math.log(self.counts[N]) for N in sorted(self.counts)])


@lru_cache(maxsize=None)
def _histogram(b: int, n: int) -> tuple[tuple[int, int], ...]:
    if n == 0:
        return ((1, 1),)
    previous = dict(_histogram(b, n - 1))
    same_branch = previous
    for _ in range(b - 1):
        same_branch = _convolve(same_branch, previous)
    sub_count = lattice.exact_path_count(LatticeParams(b, b), n - 1)
    out = {N: b * c for N, c in same_branch.items()}
    out[0] = out.get(0, 0) + b * (b - 1) * sub_count ** (2 * b)
    return tuple(sorted(out.items()))


def pair_count_histogram(params: LatticeParams, n: int) -> PairCountHistogram:
    """
    h_0 = {1: 1}; h_{n+1} = b · (h_n convolved b times) + b(b-1)|Γ_n|^{2b} at N = 0.
      b=2, n=1 → {0: 2, 2: 2}
      b=2, n=2 → {0: 40, 2: 16, 4: 8}
    """
    params.require_critical("pair_count_histogram")
    if n < 0:
        raise UsageError(f"generation must be >= 0, got {n}")
    return PairCountHistogram(params, n, dict(_histogram(params.b, n)))


def enumerated_histogram(params: LatticeParams, n: int) -> PairCountHistogram:
    """Brute-force h_n over all pairs of Γ_n (budgeted by the cylinder enumeration)."""
    matrix = lattice.shared_edge_matrix(lattice.enumerate_paths(params, n), params, n)
    values, counts = np.unique(matrix, return_counts=True)
    return PairCountHistogram(params, n, {int(v): int(c) for v, c in zip(values, counts)})


@lru_cache(maxsize=1 << 14)
def _conditional(b: int, n: int, decisions: tuple[int, ...]) -> tuple[tuple[int, int], ...]:
    if n == 0:
        return ((1, 1),)
    path = CylinderPath(LatticeParams(b, b), n, decisions)
    parts = [dict(_conditional(b, n - 1, sub.decisions)) for sub in path.subpaths()]
    same_branch = parts[0]
    for part in parts[1:]:
        same_branch = _convolve(same_branch, part)
    sub_count = lattice.exact_path_count(LatticeParams(b, b), n - 1)
    out = dict(same_branch)
    out[0] = out.get(0, 0) + (b - 1) * sub_count ** b
    return tuple(sorted(out.items()))


def conditional_histogram(p: CylinderPath) -> PairCountHistogram:
    """Counts of q ∈ Γ_n by N_n(p, q), with p's decisions held fixed."""
    p.params.require_critical("conditional_histogram")
    return PairCountHistogram(p.params, p.generation, dict(_conditional(p.params.b, p.generation, p.decisions)))


# ── Correlation tables ────────────────────────────────────────────────────────

@dataclass(frozen=True)
class CorrelationTable:
    profile: VarianceProfile
    r: float
    histogram: PairCountHistogram

    @property
    def n(self) -> int:
        return self.histogram.n

    @property
    def log_paths(self) -> float:
        return lattice.path_count(self.histogram.params, self.n).log_value

    @property
    def log_step(self) -> float:
        """log(1 + R(r - n)), the log-weight gained per shared edge."""
        return math.log1p(evaluate_R(self.profile, self.r - self.n))

    def log_weight(self, N) -> np.ndarray:
        return np.asarray(N, dtype=float) * self.log_step - 2.0 * self.log_paths


def correlation_table(profile: VarianceProfile, r: float, n: int) -> CorrelationTable:
    params = LatticeParams(profile.b, profile.b)
    return CorrelationTable(profile=profile, r=r, histogram=pair_count_histogram(params, n))


def _log_mass(histogram: PairCountHistogram, log_weights: np.ndarray) -> float:
    return float(logsumexp(histogram.log_counts() + log_weights))


def upsilon_total_mass(table: CorrelationTable) -> float:
    """Σ_k h_n(k) w(k); equals 1 + R(r) whatever the generation."""
    return math.exp(_log_mass(table.histogram, table.log_weight(table.histogram.support)))


def marginal_check(table: CorrelationTable, p: CylinderPath) -> float:
    """Σ_q υ_r(p × q); equals (1 + R(r))/|Γ_n| for every p."""
    if p.generation != table.n or p.params != table.histogram.params:
        raise UsageError(f"path generation {p.generation} does not match table generation {table.n}")
    row = conditional_histogram(p)
    return math.exp(_log_mass(row, table.log_weight(row.support)))


# ── Radon–Nikodym kernels ─────────────────────────────────────────────────────

def rn_log_kernel(profile: VarianceProfile, r: float, a: float, n: int, N) -> np.ndarray | float:
    """
    N · log[(1 + R(r+a-n)) / (1 + R(r-n))]: the exact log-density of υ_{r+a}
    against υ_r on generation-n cylinder pairs.
    """
    if a < 0:
        raise DomainError(f"kernel shift needs a >= 0, got {a}")
    if a == 0:
        return np.zeros_like(np.asarray(N, dtype=float)) if np.ndim(N) else 0.0
    step = math.log1p(evaluate_R(profile, r + a - n)) - math.log1p(evaluate_R(profile, r - n))
    return np.asarray(N, dtype=float) * step if np.ndim(N) else float(N) * step


def asymptotic_log_kernel(b: int, a: float, n: int, N) -> np.ndarray | float:
    """a κ² N / n², the large-n form of rn_log_kernel."""
    if a < 0:
        raise DomainError(f"kernel shift needs a >= 0, got {a}")
    if n < 1:
        raise UsageError("asymptotic kernel needs generation >= 1")
    return a * kappa_sq(b) * np.asarray(N, dtype=float) / n ** 2


def rn_total_mass(table: CorrelationTable, a: float, mode: str = "exact-discrete") -> float:
    """
    Σ_k h(k) w_r(k) exp(K(k)), the second moment of a chaos of strength a over
    M_r on Γ_n. Equals 1 + R(r + a) for the exact-discrete kernel; for the
    asymptotic kernel aκ²N/n² it is the finite-n value.
    """
    support = table.histogram.support
    if mode == "asymptotic":
        log_kernel = asymptotic_log_kernel(table.profile.b, a, table.n, support)
    else:
        log_kernel = rn_log_kernel(table.profile, table.r, a, table.n, support)
    return math.exp(_log_mass(table.histogram, table.log_weight(support) + log_kernel))


# ── Lebesgue decomposition ────────────────────────────────────────────────────

@dataclass(frozen=True)
class LebesgueWeights:
    """υ_r = μ×μ + R(r) ρ_r on cylinder pairs, per value of N, in log space."""

    N: np.ndarray
    log_product: float
    log_rho: np.ndarray     # -inf where N = 0

    def product_weights(self) -> np.ndarray:
        return np.full(len(self.N), math.exp(self.log_product))

    def rho_weights(self) -> np.ndarray:
        return np.exp(self.log_rho)


def lebesgue_decomposition_weights(table: CorrelationTable) -> LebesgueWeights:
    R = evaluate_R(table.profile, table.r)
    if R <= 0:
        raise DomainError(f"decomposition needs R(r) > 0, got {R}")
    support = table.histogram.support
    with np.errstate(divide="ignore"):
        log_excess = np.log(np.expm1(support * table.log_step))
    log_rho = log_excess - math.log(R) - 2.0 * table.log_paths
    return LebesgueWeights(N=support, log_product=-2.0 * table.log_paths, log_rho=log_rho)


def rho_total_mass(table: CorrelationTable) -> float:
    weights = lebesgue_decomposition_weights(table)
    return math.exp(_log_mass(table.histogram, weights.log_rho))


# ── Derivative identities ─────────────────────────────────────────────────────

def _log_derivative_weights(table: CorrelationTable, support: np.ndarray) -> np.ndarray:
    """log of N (1+R(r-n))^{N-1} R'(r-n)/|Γ_n|², -inf at N = 0."""
    log_rprime = math.log(evaluate_R_prime(table.profile, table.r - table.n))
    with np.errstate(divide="ignore"):
        log_N = np.log(support.astype(float))
    return log_N + (support - 1) * table.log_step + log_rprime - 2.0 * table.log_paths


def kernel_marginal_identity_check(profile: VarianceProfile, r: float, n: int, p: CylinderPath,
                                   normalized: bool = False) -> tuple[float, float]:
    """
    (Σ_q N (1+R(r-n))^{N-1} R'(r-n)/|Γ_n|², R'(r)/|Γ_n|).
    With normalized=True both sides are multiplied by |Γ_n|.
    """
    table = correlation_table(profile, r, n)
    if p.generation != n:
        raise UsageError(f"path generation {p.generation} does not match {n}")
    row = conditional_histogram(p)
    log_lhs = _log_mass(row, _log_derivative_weights(table, row.support))
    log_rhs = math.log(evaluate_R_prime(profile, r)) - table.log_paths
    if normalized:
        log_lhs += table.log_paths
        log_rhs += table.log_paths
    return math.exp(log_lhs), math.exp(log_rhs)


def theta_mass_identity_check(profile: VarianceProfile, r: float, n: int) -> tuple[float, float]:
    """(Σ_k h(k) k (1+R(r-n))^{k-1} R'(r-n)/|Γ_n|², R'(r)): the finite form of E[ϑ(D)] = R'(r)."""
    table = correlation_table(profile, r, n)
    support = table.histogram.support
    lhs = math.exp(_log_mass(table.histogram, _log_derivative_weights(table, support)))
    return lhs, evaluate_R_prime(profile, r)


# ── Emission ──────────────────────────────────────────────────────────────────

def histogram_frame(table: CorrelationTable) -> pd.DataFrame:
    support = table.histogram.support
    return pd.DataFrame({
        "N": support,
        "count_log10": table.histogram.log_counts() / math.log(10.0),
        "weight_log": table.log_weight(support),
    })


def identity_row(name: str, lhs: float, rhs: float) -> dict:
    abs_err = abs(lhs - rhs)
    return {"check": name, "lhs": lhs, "rhs": rhs, "abs_err": abs_err,
            "rel_err": abs_err / abs(rhs) if rhs else float("inf")}
