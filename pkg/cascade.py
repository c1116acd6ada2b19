"""
cascade.py — Monte Carlo realisations of the polymer measures M_r.

Total masses follow the distributional recursion

    M_{r+1}(Γ) =d (1/b) Σ_i Π_j M_r^{(i,j)}(Γ),

run as population dynamics: every output draws its b² factors uniformly with
replacement from the input population. The empirical mean is an unstable
direction of that map (m̄ → m̄^b), and so is the variance, so after each step
the population is rescaled to mean 1 and, by default, to the variance R(r+1)
through a power map. Third and higher moments are left to the dynamics.

Cylinder-mass vectors use the same identity exactly, level by level, on top
of total-mass leaves drawn from a population.

Randomness is counter-based: stream (domain, stage, chunk) of a master seed is
Philox keyed by SeedSequence(master_seed, spawn_key=(domain, stage, chunk)).
For a fixed chunk count the output does not depend on the thread count.
"""

import json
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import optimize
from tqdm import tqdm

import lattice
from config import DEFAULT_CHUNKS, DEFAULT_THREADS, MAX_CYLINDERS
from errors import BudgetError, DomainError, OverflowGuardError, UsageError
from lattice import LatticeParams
from reporting import RELATIVE_SE_FLAG
from rfunction import VarianceProfile, evaluate_R, seed_moments

logger = logging.getLogger(__name__)

SEED_LEVEL_CEILING = -16.0

STREAM_SEED = 0
STREAM_STEP = 1
STREAM_GMC = 2

POPULATION_MAGIC = b"DHLPOP\x00\x01"
POPULATION_VERSION = 1


# ── Random streams ────────────────────────────────────────────────────────────

def substream(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=tuple(key))))


def derive_seed(master_seed: int, *key: int) -> int:
    """An independent master seed for a sub-experiment."""
    return int(np.random.SeedSequence(master_seed, spawn_key=tuple(key)).generate_state(1, np.uint64)[0])


def chunk_bounds(size: int, chunks: int) -> list[tuple[int, int]]:
    base, extra = divmod(size, chunks)
    bounds, start = [], 0
    for c in range(chunks):
        stop = start + base + (1 if c < extra else 0)
        bounds.append((start, stop))
        start = stop
    return bounds


def _run_chunks(task, bounds: list[tuple[int, int]], threads: int) -> np.ndarray:
    """task(chunk, lo, hi) -> array; results are concatenated in chunk order."""
    if threads <= 1:
        parts = [task(c, lo, hi) for c, (lo, hi) in enumerate(bounds)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda item: task(item[0], *item[1]), enumerate(bounds)))
    return np.concatenate(parts) if parts else np.empty(0)


# ── Seed laws ─────────────────────────────────────────────────────────────────

SEED_KINDS = ("two-point", "lognormal", "deterministic-one")
STABILIZATIONS = ("mean-variance", "mean", "none")


@dataclass(frozen=True)
class SeedSpec:
    """Unit-mean seed law with prescribed variance (and zero skew for two-point)."""

    kind: str
    variance: float

    def __post_init__(self):
        if self.kind not in SEED_KINDS:
            raise UsageError(f"seed kind must be one of {SEED_KINDS}, got {self.kind!r}")
        if self.variance < 0:
            raise DomainError(f"seed variance must be >= 0, got {self.variance}")
        if self.kind == "two-point" and self.variance > 1.0:
            raise DomainError(f"two-point seed needs variance <= 1, got {self.variance}")

    @classmethod
    def at_level(cls, kind: str, profile: VarianceProfile, r0: float) -> "SeedSpec":
        variance = 0.0 if kind == "deterministic-one" else evaluate_R(profile, r0)
        return cls(kind, variance)

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "deterministic-one":
            return np.ones(size)
        if self.kind == "two-point":
            signs = rng.integers(0, 2, size=size) * 2 - 1
            return 1.0 + math.sqrt(self.variance) * signs
        sigma_sq = math.log1p(self.variance)
        return np.exp(math.sqrt(sigma_sq) * rng.standard_normal(size) - 0.5 * sigma_sq)

    def raw_moments(self, k_max: int) -> np.ndarray:
        return seed_moments(self.kind, self.variance, k_max)


@dataclass(frozen=True)
class Provenance:
    b: int
    seed: SeedSpec
    r0: float
    depth: int
    master_seed: int
    chunks: int
    stabilization: str = "mean-variance"

    def to_dict(self) -> dict:
        return asdict(self)


# ── Populations ───────────────────────────────────────────────────────────────

@dataclass
class MassPopulation:
    r: float
    values: np.ndarray
    provenance: Provenance
    trajectory: list[dict] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.values)

    @property
    def nonfinite(self) -> int:
        return int(np.count_nonzero(~np.isfinite(self.values)))

    def finite_values(self) -> np.ndarray:
        return self.values[np.isfinite(self.values)]


def _resample(values: np.ndarray, b: int, rng: np.random.Generator, count: int) -> np.ndarray:
    picks = values[rng.integers(0, len(values), size=(count, b, b))]
    with np.errstate(over="ignore", invalid="ignore"):
        return picks.prod(axis=2).sum(axis=1) / b


def _bracket_exponent(excess, grow: float = 1.25, tries: int = 80) -> tuple[float, float] | None:
    """Exponents (lo, hi) with excess(lo) < 0 < excess(hi), searched outward from 1."""
    at_one = excess(1.0)
    if not math.isfinite(at_one):
        return None
    lo = hi = 1.0
    for _ in range(tries):
        if at_one < 0:
            lo, hi = hi, hi * grow
            value = excess(hi)
            if not math.isfinite(value):
                return None
            if value > 0:
                return lo, hi
        else:
            lo, hi = lo / grow, lo
            if excess(lo) < 0:
                return lo, hi
    return None


def stabilize(values: np.ndarray, target_variance: float | None = None) -> np.ndarray:
    """
    Rescale finite masses to sample mean 1 and, when a target is given, to that
    sample variance via x -> x^γ / mean(x^γ). The power map keeps masses
    nonnegative and order-preserving; non-finite entries are passed through.
    The variance is left alone when its own sample estimate is unreliable
    (relative SE above RELATIVE_SE_FLAG), as happens deep in the heavy-tailed
    regime.
    """
    values = np.asarray(values, dtype=float)
    finite = np.isfinite(values)
    if not finite.any():
        return values
    mean = float(values[finite].mean())
    if mean <= 0:
        return values
    x = values / mean
    if target_variance is None or target_variance <= 0:
        return x
    base = x[finite]
    centered = base - base.mean()
    variance = float(np.mean(centered ** 2))
    if variance == 0:
        return x
    variance_rel_se = math.sqrt(max(float(np.mean(centered ** 4)) / variance ** 2 - 1.0, 0.0) / len(base))
    if variance_rel_se > RELATIVE_SE_FLAG:
        logger.debug("cascade: sample variance has relative SE %.3g; rescaling the mean only", variance_rel_se)
        return x

    def excess(gamma: float) -> float:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            powered = base ** gamma
            return float(powered.var() / powered.mean() ** 2) - target_variance

    bracket = _bracket_exponent(excess)
    if bracket is None:
        logger.warning("cascade: no exponent reaches variance %.6g; keeping mean-only rescaling", target_variance)
        return x
    gamma = optimize.brentq(excess, *bracket, xtol=1e-15, rtol=1e-15)
    powered = x.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        powered[finite] = base ** gamma
    return powered / powered[finite].mean()


def evolve_population(pop: MassPopulation, rng: np.random.Generator | None = None, *,
                      step: int = 0, threads: int = DEFAULT_THREADS,
                      stabilization: str | None = None,
                      target_variance: float | None = None) -> MassPopulation:
    """
    One step r → r+1 of population dynamics; output size equals input size.
    With an explicit rng the step uses that single stream, otherwise chunk c of
    step k uses stream (STREAM_STEP, k, c) of the provenance's master seed.

    stabilization defaults to the provenance's: "none" returns the raw
    resampled masses, "mean" rescales to mean 1, "mean-variance" also pins the
    variance to target_variance when one is given.
    """
    b = pop.provenance.b
    stabilization = stabilization or pop.provenance.stabilization
    if stabilization not in STABILIZATIONS:
        raise UsageError(f"stabilization must be one of {STABILIZATIONS}, got {stabilization!r}")
    if pop.size == 0:
        raise UsageError("cannot evolve an empty population")
    if pop.size < b * b:
        raise UsageError(f"population of {pop.size} is smaller than b² = {b * b}")

    if rng is not None:
        values = _resample(pop.values, b, rng, pop.size)
    else:
        seed = pop.provenance.master_seed

        def task(chunk: int, lo: int, hi: int) -> np.ndarray:
            return _resample(pop.values, b, substream(seed, STREAM_STEP, step, chunk), hi - lo)

        values = _run_chunks(task, chunk_bounds(pop.size, pop.provenance.chunks), threads)
    if stabilization != "none":
        values = stabilize(values, target_variance if stabilization == "mean-variance" else None)
    return MassPopulation(r=pop.r + 1, values=values, provenance=pop.provenance, trajectory=list(pop.trajectory))


def seed_population(seed: SeedSpec, size: int, master_seed: int, chunks: int,
                    threads: int = DEFAULT_THREADS) -> np.ndarray:
    def task(chunk: int, lo: int, hi: int) -> np.ndarray:
        return seed.sample(hi - lo, substream(master_seed, STREAM_SEED, 0, chunk))

    return _run_chunks(task, chunk_bounds(size, chunks), threads)


def _target_variance(profile: VarianceProfile, r: float) -> float | None:
    try:
        return evaluate_R(profile, r)
    except OverflowGuardError:
        logger.warning("cascade: R(%g) is out of range; rescaling the mean only", r)
        return None


def simulate_mass_law(b: int, r: float, seed_kind: str = "two-point", m: int = 24, size: int = 1_000_000,
                      master_seed: int = 0, *, chunks: int = DEFAULT_CHUNKS, threads: int = DEFAULT_THREADS,
                      profile: VarianceProfile | None = None, progress: bool = False,
                      track: bool = False, stabilization: str = "mean-variance") -> MassPopulation:
    """
    Seed `size` masses at r₀ = r - m and apply evolve_population m times.
    The depth is raised so that r₀ <= -16, where the seed variance R(r₀) is in
    the asymptotic regime. With the default stabilization every level, the seed
    level included, is pinned to mean 1 and variance R at that level.
    """
    if m < 1:
        raise UsageError(f"depth m must be >= 1, got {m}")
    if stabilization not in STABILIZATIONS:
        raise UsageError(f"stabilization must be one of {STABILIZATIONS}, got {stabilization!r}")
    profile = profile or VarianceProfile(b)
    if r - m > SEED_LEVEL_CEILING:
        raised = math.ceil(r - SEED_LEVEL_CEILING)
        logger.warning("cascade: depth %d puts the seed at r0=%g > %g; using depth %d",
                       m, r - m, SEED_LEVEL_CEILING, raised)
        m = raised
    r0 = r - m
    seed = SeedSpec.at_level(seed_kind, profile, r0)
    provenance = Provenance(b=b, seed=seed, r0=r0, depth=m, master_seed=master_seed, chunks=chunks,
                            stabilization=stabilization)
    values = seed_population(seed, size, master_seed, chunks, threads)
    if stabilization != "none":
        values = stabilize(values, seed.variance if stabilization == "mean-variance" else None)
    pop = MassPopulation(r=r0, values=values, provenance=provenance)
    logger.info("cascade: %d %s seeds at r0=%g (variance %.6g), %d steps, %s stabilization",
                size, seed_kind, r0, seed.variance, m, stabilization)

    for step in tqdm(range(m), desc="cascade", disable=not progress):
        if track:
            pop.trajectory.append(_trajectory_row(pop))
        target = _target_variance(profile, pop.r + 1) if stabilization == "mean-variance" else None
        pop = evolve_population(pop, step=step, threads=threads, target_variance=target)
    if track:
        pop.trajectory.append(_trajectory_row(pop))
    if pop.nonfinite:
        logger.warning("cascade: %d of %d masses at r=%g are not finite", pop.nonfinite, pop.size, r)
    return pop


def _trajectory_row(pop: MassPopulation) -> dict:
    values = pop.finite_values()
    centered = values - values.mean()
    var = float(np.mean(centered ** 2))
    var_se = float(math.sqrt(max(np.mean(centered ** 4) - var ** 2, 0.0) / len(values)))
    return {"r": pop.r, "mean": float(values.mean()), "mean_se": float(values.std(ddof=1) / math.sqrt(len(values))),
            "variance": var, "variance_se": var_se}


# ── Measure samples ───────────────────────────────────────────────────────────

@dataclass(frozen=True)
class MeasureSample:
    r: float
    n: int
    masses: np.ndarray
    total: float
    provenance: Provenance


@dataclass
class MeasureBatch:
    """Independent cylinder-mass vectors over Γ_n, one row per realisation."""

    r: float
    n: int
    masses: np.ndarray      # (realizations, |Γ_n|)
    totals: np.ndarray      # tracked totals
    provenance: Provenance
    audit: float = 0.0      # worst relative |Σ_p M(p) - total|

    def __len__(self) -> int:
        return len(self.masses)

    def sample(self, index: int) -> MeasureSample:
        return MeasureSample(self.r, self.n, self.masses[index], float(self.totals[index]), self.provenance)


def combine_cylinders(sub: np.ndarray, params: LatticeParams, k: int) -> np.ndarray:
    """
    sub: (..., b, b, |Γ_{k-1}|) cylinder masses of the copies M^{(i,j)}.
    Returns (..., |Γ_k|) with M(i; p_1..p_b) = (1/b) Π_j M^{(i,j)}(p_j).
    """
    top, index = lattice.decomposition_map(params, k)
    combined = np.ones(sub.shape[:-3] + (len(top),))
    for j in range(params.b):
        combined *= sub[..., top, j, index[:, j]]
    return combined / params.b


def combine_totals(sub_totals: np.ndarray) -> np.ndarray:
    """(..., b, b) copy totals -> (...) total (1/b) Σ_i Π_j T_ij."""
    return sub_totals.prod(axis=-1).sum(axis=-1) / sub_totals.shape[-1]


def _assemble(leaves: np.ndarray, params: LatticeParams, n: int) -> tuple[np.ndarray, np.ndarray]:
    """
    leaves: (C, b^{2n}) total masses. Returns cylinder masses (C, |Γ_n|) and the
    tracked totals (C,).
    """
    b = params.b
    count = leaves.shape[0]
    vectors = leaves[:, :, None]                 # (C, G, |Γ_0|)
    totals = leaves.copy()                       # (C, G)
    for k in range(1, n + 1):
        groups = vectors.shape[1] // (b * b)
        vectors = combine_cylinders(vectors.reshape(count, groups, b, b, -1), params, k)
        totals = combine_totals(totals.reshape(count, groups, b, b))
    return vectors[:, 0, :], totals[:, 0]


def sample_measure_batch(b: int, r: float, n: int, realizations: int, m: int = 24,
                         seed_kind: str = "two-point", master_seed: int = 0, *,
                         chunks: int = DEFAULT_CHUNKS, threads: int = DEFAULT_THREADS,
                         profile: VarianceProfile | None = None, budget: int = MAX_CYLINDERS,
                         progress: bool = False) -> MeasureBatch:
    """
    `realizations` independent MeasureSamples at (r, n). Each consumes b^{2n}
    distinct leaves of one total-mass population at r - n.
    """
    if n < 1:
        raise UsageError(f"measure samples need n >= 1, got {n}")
    if m < n:
        raise UsageError(f"depth m={m} must be >= n={n}")
    params = LatticeParams(b, b)
    try:
        lattice.check_cylinder_budget(params, n, budget)
    except BudgetError as exc:
        raise BudgetError(f"MeasureSample over Γ_{n}: {exc}", limit=exc.limit) from exc

    leaves_per = b ** (2 * n)
    population = simulate_mass_law(b, r - n, seed_kind, max(m - n, 1), realizations * leaves_per, master_seed,
                                   chunks=chunks, threads=threads, profile=profile, progress=progress)
    leaves = population.values.reshape(realizations, leaves_per)

    def task(chunk: int, lo: int, hi: int) -> np.ndarray:
        masses, totals = _assemble(leaves[lo:hi], params, n)
        return np.concatenate([masses, totals[:, None]], axis=1)

    bounds = chunk_bounds(realizations, max(1, min(chunks, realizations)))
    with np.errstate(over="ignore", invalid="ignore"):
        if threads <= 1:
            parts = [task(c, lo, hi) for c, (lo, hi) in enumerate(bounds)]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(lambda item: task(item[0], *item[1]), enumerate(bounds)))
    stacked = np.vstack(parts)
    masses, totals = stacked[:, :-1], stacked[:, -1]

    finite = np.isfinite(totals) & (totals > 0)
    audit = float(np.max(np.abs(masses[finite].sum(axis=1) - totals[finite]) / totals[finite])) if finite.any() else 0.0
    if audit > 1e-12:
        logger.warning("cascade: additivity audit %.3g exceeds 1e-12", audit)
    return MeasureBatch(r=r, n=n, masses=masses, totals=totals,
                        provenance=replace(population.provenance, depth=m), audit=audit)


def sample_measure_cylinders(b: int, r: float, n: int, m: int = 24, seed_kind: str = "two-point",
                             master_seed: int = 0, **kwargs) -> MeasureSample:
    return sample_measure_batch(b, r, n, 1, m, seed_kind, master_seed, **kwargs).sample(0)


# ── Statistics ────────────────────────────────────────────────────────────────

def fractional_moment(pop: MassPopulation | np.ndarray, theta: float) -> tuple[float, float]:
    """(mean of mass^θ, standard error) for θ ∈ (0, 1]."""
    if not 0 < theta <= 1:
        raise DomainError(f"theta must lie in (0, 1], got {theta}")
    values = pop.finite_values() if isinstance(pop, MassPopulation) else np.asarray(pop, dtype=float)
    powered = values ** theta
    se = float(powered.std(ddof=1) / math.sqrt(len(powered))) if len(powered) > 1 else 0.0
    return float(powered.mean()), se


def moment_summary(values, k_max: int = 4) -> pd.DataFrame:
    """
    Raw moments and central moments (around the sample mean) with standard errors.
    The central-moment SE uses the delta method
        Var(μ̂_k) ≈ (μ_2k - μ_k² - 2k μ_{k-1} μ_{k+1} + k² μ_2 μ_{k-1}²) / N.
    """
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    size = len(x)
    if size < 2:
        raise UsageError("moment summary needs at least two finite values")
    centered = x - x.mean()
    mu = [float(np.mean(centered ** j)) for j in range(2 * k_max + 1)]
    rows = []
    for k in range(1, k_max + 1):
        powered = x ** k
        raw, raw_se = float(powered.mean()), float(powered.std(ddof=1) / math.sqrt(size))
        if k == 1:
            central, central_se = 0.0, 0.0
        else:
            var = mu[2 * k] - mu[k] ** 2 - 2 * k * mu[k - 1] * mu[k + 1] + k * k * mu[2] * mu[k - 1] ** 2
            central, central_se = mu[k], math.sqrt(max(var, 0.0) / size)
        flagged = (raw_se > RELATIVE_SE_FLAG * abs(raw)) or (k > 1 and central_se > RELATIVE_SE_FLAG * abs(central))
        rows.append({"k": k, "raw": raw, "raw_se": raw_se, "central": central,
                     "central_se": central_se, "flagged": bool(flagged)})
    return pd.DataFrame(rows)


# ── Persistence ───────────────────────────────────────────────────────────────

def write_population(pop: MassPopulation, path: Path) -> Path:
    """
    Binary layout (little-endian): magic[8], version u32, b u32, r f64, depth u32,
    seed spec as u32 length + UTF-8 JSON, chunks u32, count u64, then float64 values.
    """
    spec = json.dumps({"kind": pop.provenance.seed.kind, "variance": pop.provenance.seed.variance,
                       "r0": pop.provenance.r0, "master_seed": pop.provenance.master_seed,
                       "stabilization": pop.provenance.stabilization},
                      sort_keys=True).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(POPULATION_MAGIC)
        fh.write(struct.pack("<IIdI", POPULATION_VERSION, pop.provenance.b, pop.r, pop.provenance.depth))
        fh.write(struct.pack("<I", len(spec)))
        fh.write(spec)
        fh.write(struct.pack("<IQ", pop.provenance.chunks, pop.size))
        fh.write(np.asarray(pop.values, dtype="<f8").tobytes())
    logger.info("cascade: wrote %d masses to %s", pop.size, path)
    return path


def read_population(path: Path) -> MassPopulation:
    data = Path(path).read_bytes()
    if data[:8] != POPULATION_MAGIC:
        raise UsageError(f"{path} is not a population file")
    offset = 8
    version, b, r, depth = struct.unpack_from("<IIdI", data, offset)
    if version != POPULATION_VERSION:
        raise UsageError(f"{path}: unsupported population version {version}")
    offset += struct.calcsize("<IIdI")
    (spec_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    spec = json.loads(data[offset:offset + spec_len])
    offset += spec_len
    chunks, count = struct.unpack_from("<IQ", data, offset)
    offset += struct.calcsize("<IQ")
    values = np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(float)
    provenance = Provenance(b=b, seed=SeedSpec(spec["kind"], spec["variance"]), r0=spec["r0"],
                            depth=depth, master_seed=spec["master_seed"], chunks=chunks,
                            stabilization=spec.get("stabilization", "mean-variance"))
    return MassPopulation(r=r, values=values, provenance=provenance)
