"""
gmc.py — finite-dimensional Gaussian multiplicative chaos over cylinder paths.

Intersection kernels K(p, q) = λ N_n(p, q) factor exactly through generation-n
edges: with F(p, e) = √λ 1{p crosses e}, K = F Fᵀ. A chaos realisation draws one
standard normal per edge and reweights a reference mass vector,

    M(p) = exp((F g)(p) - K(p, p)/2) μ(p),

so edges stand in for the points of the continuum index space and no Cholesky
factorisation is needed (one is kept as a cross-check on small supports).

Two per-edge weights are supported:
  exact-discrete  λ = log(1 + R(r+a-n)) - log(1 + R(r-n)), which makes every
                  finite-n second-moment identity exact
  asymptotic      λ = a κ² / n²
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats
from tqdm import tqdm

import cascade
import correlation
import lattice
from config import DEFAULT_CHUNKS, DEFAULT_THREADS
from errors import BudgetError, DomainError, UsageError
from lattice import LatticeParams
from reporting import CheckResult, check_at_most, check_close, check_decrease, check_flag, check_statistical
from rfunction import VarianceProfile, evaluate_R, psi

logger = logging.getLogger(__name__)

KAHANE_BUDGET = 1 << 22
CHOLESKY_MAX_PATHS = 64
MODES = ("exact-discrete", "asymptotic")

PURPOSE_CONDITIONAL = 1
PURPOSE_SINGLE = 2
PURPOSE_COMPOSITE = 3
PURPOSE_STRONG = 4
PURPOSE_SEMIGROUP = 5


# ── Kernels and factors ───────────────────────────────────────────────────────

@dataclass(frozen=True)
class KernelMatrix:
    params: LatticeParams
    n: int
    support: np.ndarray     # decision matrix, one row per support path
    counts: np.ndarray      # N_n(p, q) on the support
    weight: float           # λ
    mode: str
    r: float | None = None
    a: float | None = None

    @property
    def matrix(self) -> np.ndarray:
        return self.weight * self.counts

    @property
    def diagonal(self) -> np.ndarray:
        return self.weight * np.diag(self.counts).astype(float)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])


@dataclass(frozen=True)
class GramFactor:
    incidence: np.ndarray   # (paths, (bs)^n) 0/1
    weight: float

    @property
    def factor(self) -> np.ndarray:
        return math.sqrt(self.weight) * self.incidence

    @property
    def edge_count(self) -> int:
        return self.incidence.shape[1]

    def field(self, g: np.ndarray) -> np.ndarray:
        """(F g)(p) for g of shape (..., edges)."""
        return math.sqrt(self.weight) * (g @ self.incidence.T)


def edge_weight(profile: VarianceProfile, r: float, a: float, n: int, mode: str = "exact-discrete") -> float:
    if a < 0:
        raise DomainError(f"chaos strength needs a >= 0, got {a}")
    if mode not in MODES:
        raise UsageError(f"mode must be one of {MODES}, got {mode!r}")
    if a == 0:
        return 0.0
    if mode == "asymptotic":
        return float(correlation.asymptotic_log_kernel(profile.b, a, n, 1))
    return math.log1p(evaluate_R(profile, r + a - n)) - math.log1p(evaluate_R(profile, r - n))


def kernel_from_weight(params: LatticeParams, n: int, weight: float, support: np.ndarray | None = None,
                       mode: str = "exact-discrete", r: float | None = None,
                       a: float | None = None) -> tuple[KernelMatrix, GramFactor]:
    params.require_critical("kernel construction")
    if weight < 0:
        raise DomainError(f"edge weight must be >= 0, got {weight}")
    if support is None:
        support = lattice.enumerate_paths(params, n)
    incidence = lattice.incidence_matrix(support, params, n)
    counts = np.rint(incidence @ incidence.T).astype(np.int64)
    kernel = KernelMatrix(params=params, n=n, support=support, counts=counts, weight=weight, mode=mode, r=r, a=a)
    return kernel, GramFactor(incidence=incidence, weight=weight)


def build_kernel(profile: VarianceProfile, r: float, a: float, n: int, support: np.ndarray | None = None,
                 mode: str = "exact-discrete") -> tuple[KernelMatrix, GramFactor]:
    """
    K = λ N_n on the support (all of Γ_n by default) and its edge factor.
      a = 0            → zero matrix
      b=2, n=1, Γ_1    → λ [[2, 0], [0, 2]]
    """
    weight = edge_weight(profile, r, a, n, mode)
    params = LatticeParams(profile.b, profile.b)
    return kernel_from_weight(params, n, weight, support, mode, r, a)


def cholesky_factor(kernel: KernelMatrix, jitter: float = 1e-12) -> np.ndarray:
    size = len(kernel.support)
    if size > CHOLESKY_MAX_PATHS:
        raise BudgetError(f"Cholesky cross-check limited to {CHOLESKY_MAX_PATHS} paths, got {size}",
                          limit=CHOLESKY_MAX_PATHS)
    matrix = kernel.matrix
    scale = max(float(np.max(np.diag(matrix))), 1.0)
    return np.linalg.cholesky(matrix + jitter * scale * np.eye(size))


def kernel_trace(kernel: KernelMatrix, masses: np.ndarray) -> float:
    """Σ_p K(p, p) M(p)."""
    return float(kernel.diagonal @ np.asarray(masses, dtype=float))


# ── Realisations ──────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class GmcRealization:
    reference: np.ndarray   # (paths,) or (draws, paths)
    g: np.ndarray           # (draws, edges)
    weights: np.ndarray     # (draws, paths)
    gram: GramFactor

    @property
    def totals(self) -> np.ndarray:
        return self.weights.sum(axis=-1)


def _weights(reference: np.ndarray, gram: GramFactor, g: np.ndarray) -> np.ndarray:
    diagonal = gram.weight * gram.incidence.sum(axis=1)
    return np.exp(gram.field(g) - 0.5 * diagonal) * reference


def sample_gmc(reference: np.ndarray, gram: GramFactor, rng: np.random.Generator, draws: int = 1) -> GmcRealization:
    reference = np.asarray(reference, dtype=float)
    if reference.shape[-1] != gram.incidence.shape[0]:
        raise UsageError(f"reference has {reference.shape[-1]} paths, factor has {gram.incidence.shape[0]}")
    g = rng.standard_normal((draws, gram.edge_count))
    return GmcRealization(reference=reference, g=g, weights=_weights(reference, gram, g), gram=gram)


def shift_field(realization: GmcRealization, phi: np.ndarray) -> GmcRealization:
    """The realisation rebuilt from g + φ; weights pick up exp((F φ)(p)) exactly."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape[-1] != realization.gram.edge_count:
        raise UsageError(f"shift has {phi.shape[-1]} entries, field has {realization.gram.edge_count} edges")
    g = realization.g + phi
    return GmcRealization(reference=realization.reference, g=g,
                          weights=_weights(realization.reference, realization.gram, g), gram=realization.gram)


def cameron_martin_density(phi: np.ndarray, g: np.ndarray) -> np.ndarray:
    """exp(<g, φ> - |φ|²/2): density of the law of g + φ against that of g, at g."""
    phi = np.asarray(phi, dtype=float)
    return np.exp(np.asarray(g) @ phi - 0.5 * phi @ phi)


def gaussian_likelihood_ratio(phi: np.ndarray, g: np.ndarray) -> np.ndarray:
    g = np.atleast_2d(g)
    return np.exp(stats.norm.logpdf(g - phi).sum(axis=-1) - stats.norm.logpdf(g).sum(axis=-1))


# ── ϑ summaries ───────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ThetaSummary:
    total: float
    t: np.ndarray


def theta_summary(kernel: KernelMatrix, masses: np.ndarray) -> ThetaSummary:
    masses = np.asarray(masses, dtype=float)
    t = kernel.matrix @ masses
    return ThetaSummary(total=float(masses @ t), t=t)


def theta_decomposition_audit(sub_masses: np.ndarray, params: LatticeParams, n: int) -> tuple[float, float]:
    """
    ϑ of the combined measure against its decomposition over the b² copies, with
    kernel N_n:
        ϑ_{ΥM} = b^{-2} Σ_{i,j} (Π_{ℓ≠j} M^{(i,ℓ)}(Γ))² ϑ_{M^{(i,j)}}
    sub_masses has shape (b, b, |Γ_{n-1}|).
    """
    b = params.b
    combined = cascade.combine_cylinders(sub_masses, params, n)
    whole, _ = kernel_from_weight(params, n, 1.0)
    lhs = theta_summary(whole, combined).total

    part, _ = kernel_from_weight(params, n - 1, 1.0)
    totals = sub_masses.sum(axis=-1)
    rhs = 0.0
    for i in range(b):
        for j in range(b):
            others = np.prod(np.delete(totals[i], j)) ** 2
            rhs += others * theta_summary(part, sub_masses[i, j]).total
    return lhs, rhs / b ** 2


def weight_decomposition_audit(sub_masses: np.ndarray, g: np.ndarray, weight: float,
                               params: LatticeParams, n: int) -> float:
    """
    Largest relative difference between single-level chaos weights on the combined
    measure and the combination of per-copy chaos weights, each copy (i, j) reading
    its own block of generation-n edges.
    """
    b = params.b
    combined = cascade.combine_cylinders(sub_masses, params, n)
    _, whole = kernel_from_weight(params, n, weight)
    single = _weights(combined, whole, g[None, :])[0]

    _, part = kernel_from_weight(params, n - 1, weight)
    blocks = g.reshape(b, b, -1)
    copies = np.empty_like(sub_masses, dtype=float)
    for i in range(b):
        for j in range(b):
            copies[i, j] = _weights(sub_masses[i, j], part, blocks[i, j][None, :])[0]
    composite = cascade.combine_cylinders(copies, params, n)
    return float(np.max(np.abs(single - composite) / np.abs(single)))


# ── Kahane moments ────────────────────────────────────────────────────────────

def kahane_moment(kernel: KernelMatrix, reference: np.ndarray, subset, m: int) -> float:
    """Σ over A^m of exp(Σ_{i<j} K(p_i, p_j)) Π μ(p_i), by brute force."""
    subset = np.asarray(list(subset), dtype=np.int64)
    if m < 1:
        raise UsageError(f"moment order must be >= 1, got {m}")
    if len(subset) ** m > KAHANE_BUDGET:
        raise BudgetError(f"|A|^m = {len(subset)}^{m} exceeds {KAHANE_BUDGET}", limit=KAHANE_BUDGET)
    mu = np.asarray(reference, dtype=float)[subset]
    inner = kernel.matrix[np.ix_(subset, subset)]
    size = len(subset)
    exponent = np.zeros((size,) * m)
    log_mu = np.zeros((size,) * m)
    for i in range(m):
        shape = [1] * m
        shape[i] = size
        with np.errstate(divide="ignore"):
            log_mu = log_mu + np.log(mu).reshape(shape)
        for j in range(i + 1, m):
            shape2 = [1] * m
            shape2[i], shape2[j] = size, size
            exponent = exponent + inner.reshape(shape2)
    return float(np.exp(exponent + log_mu).sum())


# ── Experiments ───────────────────────────────────────────────────────────────

@dataclass
class ExperimentReport:
    name: str
    checks: list[CheckResult] = field(default_factory=list)
    tables: dict[str, pd.DataFrame] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "summary": self.summary,
                "checks": [c.model_dump(mode="json") for c in self.checks]}


def chaos_totals(references: np.ndarray, gram: GramFactor, draws: int, master_seed: int, purpose: int,
                 threads: int = DEFAULT_THREADS, progress: bool = False) -> np.ndarray:
    """
    Total masses of `draws` chaos realisations over each reference row; shape
    (rows, draws). Row c uses stream (STREAM_GMC, purpose, c).
    """
    references = np.atleast_2d(references)

    def one(c: int) -> np.ndarray:
        rng = cascade.substream(master_seed, cascade.STREAM_GMC, purpose, c)
        return sample_gmc(references[c], gram, rng, draws).totals

    rows = range(len(references))
    if threads <= 1:
        out = [one(c) for c in tqdm(rows, desc="gmc", disable=not progress)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(tqdm(pool.map(one, rows), total=len(references), desc="gmc", disable=not progress))
    return np.vstack(out)


def clustered_moment(totals: np.ndarray, k: int) -> tuple[float, float]:
    """Pooled k-th raw moment with an SE clustered by row (realisation)."""
    per_row = np.mean(totals ** k, axis=1)
    se = float(per_row.std(ddof=1) / math.sqrt(len(per_row))) if len(per_row) > 1 else 0.0
    return float(per_row.mean()), se


def _raw_moment(values: np.ndarray, k: int) -> tuple[float, float]:
    powered = values ** k
    return float(powered.mean()), float(powered.std(ddof=1) / math.sqrt(len(powered)))


def second_moment_target(profile: VarianceProfile, r: float, a: float, n: int, mode: str = "exact-discrete") -> float:
    """
    E[𝕄(Γ)²] for a chaos of strength a over M_r on Γ_n: 1 + R(r + a) with the
    exact-discrete kernel, the finite-n histogram sum with the asymptotic one.
    """
    if mode == "exact-discrete":
        return 1.0 + evaluate_R(profile, r + a)
    return correlation.rn_total_mass(correlation.correlation_table(profile, r, n), a, mode=mode)


def conditional_gmc_experiment(profile: VarianceProfile, r: float, a: float, n: int, realizations: int,
                               draws: int, master_seed: int, *, m: int = 24, seed_kind: str = "two-point",
                               reference_size: int = 1_000_000, mode: str = "exact-discrete",
                               chunks: int = DEFAULT_CHUNKS, threads: int = DEFAULT_THREADS,
                               progress: bool = False) -> ExperimentReport:
    """
    Chaos of strength a over samples of M_r: pooled total-mass moments against
    their finite-n target and against a directly simulated population of M_{r+a}.
    Only the exact-discrete kernel reproduces M_{r+a} at finite n, so with the
    asymptotic kernel the direct comparisons are soft.
    """
    b = profile.b
    report = ExperimentReport(name="conditional")
    batch = cascade.sample_measure_batch(b, r, n, realizations, m, seed_kind, cascade.derive_seed(master_seed, 1),
                                         chunks=chunks, threads=threads, profile=profile, progress=progress)
    _, gram = build_kernel(profile, r, a, n, mode=mode)
    totals = chaos_totals(batch.masses, gram, draws, master_seed, PURPOSE_CONDITIONAL, threads, progress)
    report.tables["totals"] = pd.DataFrame({
        "realization": np.repeat(np.arange(realizations), draws),
        "draw": np.tile(np.arange(draws), realizations),
        "total": totals.ravel(),
    })

    if a == 0:
        deviation = float(np.max(np.abs(totals - batch.totals[:, None]) / batch.totals[:, None]))
        report.checks.append(check_close("conditional.a0-identity", 0.0, deviation, 1e-12))

    target = second_moment_target(profile, r, a, n, mode)
    second, second_se = clustered_moment(totals, 2)
    report.checks.append(check_statistical("conditional.second-moment", target, second, second_se,
                                           detail=f"{mode} kernel"))

    direct = cascade.simulate_mass_law(b, r + a, seed_kind, m, reference_size, cascade.derive_seed(master_seed, 2),
                                       chunks=chunks, threads=threads, profile=profile).finite_values()
    for k, n_sigma in ((2, 4.0), (3, 5.0)):
        pooled, pooled_se = clustered_moment(totals, k)
        ref, ref_se = _raw_moment(direct, k)
        report.checks.append(check_statistical(f"conditional.moment{k}-vs-direct", ref, pooled,
                                               math.hypot(pooled_se, ref_se), n_sigma=n_sigma,
                                               soft=mode != "exact-discrete"))
    ks = stats.ks_2samp(totals[:, 0], direct)
    report.summary.update({"mode": mode, "weight": gram.weight, "target": target, "second_moment": second,
                           "second_moment_se": second_se, "ks_statistic": float(ks.statistic),
                           "ks_pvalue": float(ks.pvalue), "additivity_audit": batch.audit})
    logger.info("gmc: conditional r=%g a=%g n=%d (%s) second moment %.6g ± %.2g (target %.6g)",
                r, a, n, mode, second, second_se, target)
    return report


def renormalization_consistency(profile: VarianceProfile, r: float, a: float, n: int, samples: int,
                                master_seed: int, *, m: int = 24, seed_kind: str = "two-point",
                                mode: str = "exact-discrete", chunks: int = DEFAULT_CHUNKS,
                                threads: int = DEFAULT_THREADS, progress: bool = False) -> ExperimentReport:
    """
    (A) chaos over M_{r+1} on Γ_n against (B) Υ of b² independent chaoses over
    M_r on Γ_{n-1}. With the exact-discrete kernel the per-edge weights coincide,
    λ(r, a, n-1) = λ(r+1, a, n), and (A) and (B) agree in law; the asymptotic
    weights aκ²/n² and aκ²/(n-1)² differ, so there each side is held to its own
    second-moment target and the cross comparisons are soft.
    """
    if n < 2:
        raise UsageError(f"renormalization needs n >= 2, got {n}")
    b = profile.b
    params = LatticeParams(b, b)
    report = ExperimentReport(name="renormalization")
    exact = mode == "exact-discrete"

    single_batch = cascade.sample_measure_batch(b, r + 1, n, samples, m, seed_kind,
                                                cascade.derive_seed(master_seed, 3), chunks=chunks,
                                                threads=threads, profile=profile, progress=progress)
    _, single_gram = build_kernel(profile, r + 1, a, n, mode=mode)
    single = chaos_totals(single_batch.masses, single_gram, 1, master_seed, PURPOSE_SINGLE, threads)[:, 0]

    copies = cascade.sample_measure_batch(b, r, n - 1, samples * b * b, m, seed_kind,
                                          cascade.derive_seed(master_seed, 4), chunks=chunks,
                                          threads=threads, profile=profile, progress=progress)
    _, part_gram = build_kernel(profile, r, a, n - 1, mode=mode)
    copy_totals = chaos_totals(copies.masses, part_gram, 1, master_seed, PURPOSE_COMPOSITE, threads)[:, 0]
    composite = cascade.combine_totals(copy_totals.reshape(samples, b, b))

    single_target = second_moment_target(profile, r + 1, a, n, mode)
    copy_target = second_moment_target(profile, r, a, n - 1, mode)
    composite_target = 1.0 + psi(b, copy_target - 1.0)
    for label, values, target in (("single", single, single_target), ("composite", composite, composite_target)):
        est, se = _raw_moment(values, 2)
        report.checks.append(check_statistical(f"renormalization.{label}-second-moment", target, est, se,
                                               detail=f"{mode} kernel"))
    for k in (2, 3):
        est_a, se_a = _raw_moment(single, k)
        est_b, se_b = _raw_moment(composite, k)
        report.checks.append(check_statistical(f"renormalization.moment{k}-single-vs-composite", est_a, est_b,
                                               math.hypot(se_a, se_b), n_sigma=4.0 if k == 2 else 5.0,
                                               soft=not exact))

    audit_rng = cascade.substream(master_seed, cascade.STREAM_GMC, PURPOSE_COMPOSITE, 1 << 30)
    sub_masses = copies.masses[: b * b].reshape(b, b, -1)
    g = audit_rng.standard_normal(lattice.edge_count(params, n))
    audit = weight_decomposition_audit(sub_masses, g, single_gram.weight, params, n)
    report.checks.append(check_close("renormalization.weight-decomposition", 0.0, audit, 1e-12))
    lhs, rhs = theta_decomposition_audit(sub_masses, params, n)
    report.checks.append(check_close("renormalization.theta-decomposition", rhs, lhs, 1e-12, relative=True))

    ks = stats.ks_2samp(single, composite)
    report.summary.update({"mode": mode, "single_weight": single_gram.weight, "copy_weight": part_gram.weight,
                           "single_target": single_target, "composite_target": composite_target,
                           "ks_statistic": float(ks.statistic), "ks_pvalue": float(ks.pvalue)})
    report.tables["totals"] = pd.DataFrame({"single": single, "composite": composite})
    return report


def strong_disorder_bound(profile: VarianceProfile, rho_grid, n: int, m: int, samples: int, draws: int,
                          master_seed: int, *, seed_kind: str = "two-point", mode: str = "asymptotic",
                          chunks: int = DEFAULT_CHUNKS, threads: int = DEFAULT_THREADS,
                          progress: bool = False) -> ExperimentReport:
    """
    For M_0 samples at generation n and chaos strength ρ: the conditional
    half-moment E[𝕄(Γ)^{1/2} | M_0] by Monte Carlo against the change-of-measure
    bound

        (Σ_p e^{-c t(p)} M_0(p))^{1/2} e^{ϑ/2},   t = T M_0, ϑ = M_0ᵀ T M_0,

    with T = κ²N/n² (shift φ = -Fᵀ M_0 for the unit factor F of T) and
    c = √(λ_ρ / λ_T), the ratio of the chaos edge weight to that of T. For the
    asymptotic kernel ρκ²N/n² this is c = √ρ.
    """
    rho_grid = [float(rho) for rho in rho_grid]
    if any(rho <= 0 for rho in rho_grid):
        raise DomainError("strong-disorder grid must be positive")
    b = profile.b
    report = ExperimentReport(name="strong-disorder")
    batch = cascade.sample_measure_batch(b, 0.0, n, samples, m, seed_kind, cascade.derive_seed(master_seed, 5),
                                         chunks=chunks, threads=threads, profile=profile, progress=progress)
    unit, _ = build_kernel(profile, 0.0, 1.0, n, mode="asymptotic")

    summaries = [theta_summary(unit, masses) for masses in batch.masses]
    positive = all(np.all(s.t >= unit.diagonal * masses - 1e-15) for s, masses in zip(summaries, batch.masses))
    report.checks.append(check_flag("strong-disorder.t-dominates-diagonal", positive))

    rows, pooled = [], []
    for rho in rho_grid:
        _, gram = build_kernel(profile, 0.0, rho, n, mode=mode)
        scale = math.sqrt(gram.weight / unit.weight)
        totals = chaos_totals(batch.masses, gram, draws, master_seed, PURPOSE_STRONG, threads, progress)
        halves = np.sqrt(totals)
        means = halves.mean(axis=1)
        ses = halves.std(axis=1, ddof=1) / math.sqrt(draws)
        bounds = np.array([math.sqrt(float(np.exp(-scale * s.t) @ masses)) * math.exp(0.5 * s.total)
                           for s, masses in zip(summaries, batch.masses)])
        excess = means - bounds - 4.0 * ses
        violations = int(np.count_nonzero(excess > 0))
        worst = int(np.argmax(excess))
        report.checks.append(check_at_most(f"strong-disorder.bound-rho{rho:g}", float(means[worst]),
                                           float(bounds[worst]), float(ses[worst]),
                                           detail=f"{violations} of {samples} realisations above bound + 4 SE; "
                                                  f"closest is realisation {worst}"))
        estimate = float(means.mean())
        estimate_se = float(means.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
        pooled.append((estimate, estimate_se))
        rows.append({"rho": rho, "weight": gram.weight, "half_moment": estimate, "half_moment_se": estimate_se,
                     "mean_bound": float(bounds.mean()), "violations": violations})

    for (first, first_se), (second, second_se), lo, hi in zip(pooled, pooled[1:], rho_grid, rho_grid[1:]):
        report.checks.append(check_decrease(f"strong-disorder.decay-{lo:g}-to-{hi:g}", first, first_se,
                                            second, second_se, detail=f"{first:.6g} -> {second:.6g}"))
    if len(pooled) > 2:
        (first, first_se), (last, last_se) = pooled[0], pooled[-1]
        report.checks.append(check_decrease("strong-disorder.overall-decay", first, first_se, last, last_se,
                                            detail=f"{first:.6g} -> {last:.6g}"))
    report.tables["half_moments"] = pd.DataFrame(rows)
    report.summary.update({"mode": mode, "theta_mean": float(np.mean([s.total for s in summaries]))})
    return report


def semigroup_check(profile: VarianceProfile, r: float, a: float, a_next: float, n: int, samples: int,
                    master_seed: int, *, m: int = 24, seed_kind: str = "two-point", mode: str = "exact-discrete",
                    chunks: int = DEFAULT_CHUNKS, threads: int = DEFAULT_THREADS) -> ExperimentReport:
    """Chaos a then a' (independent fields) against a single chaos a + a', in second moments."""
    b = profile.b
    report = ExperimentReport(name="semigroup")
    batch = cascade.sample_measure_batch(b, r, n, samples, m, seed_kind, cascade.derive_seed(master_seed, 6),
                                         chunks=chunks, threads=threads, profile=profile)
    _, first = build_kernel(profile, r, a, n, mode=mode)
    _, second = build_kernel(profile, r + a, a_next, n, mode=mode)
    _, direct = build_kernel(profile, r, a + a_next, n, mode=mode)

    two_step = np.empty(samples)
    one_step = np.empty(samples)
    for c in range(samples):
        rng = cascade.substream(master_seed, cascade.STREAM_GMC, PURPOSE_SEMIGROUP, c)
        middle = sample_gmc(batch.masses[c], first, rng).weights[0]
        two_step[c] = sample_gmc(middle, second, rng).totals[0]
        one_step[c] = sample_gmc(batch.masses[c], direct, rng).totals[0]

    target = second_moment_target(profile, r, a + a_next, n, mode)
    est_two, se_two = _raw_moment(two_step, 2)
    est_one, se_one = _raw_moment(one_step, 2)
    report.checks.append(check_statistical("semigroup.two-step-second-moment", target, est_two, se_two,
                                           detail=f"{mode} kernel"))
    report.checks.append(check_statistical("semigroup.two-step-vs-one-step", est_one, est_two,
                                           math.hypot(se_one, se_two)))
    report.checks.append(check_close("semigroup.weights-add", direct.weight, first.weight + second.weight,
                                     1e-12, relative=True))
    report.summary["mode"] = mode
    return report
