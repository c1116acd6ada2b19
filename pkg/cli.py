"""
cli.py — command-line harness for tables, simulations and chaos experiments.

    python cli.py rfunc --b 2 --grid -8:1:8
    python cli.py correlation --b 2 --r 0 --n 2
    python cli.py simulate --b 2 --r 0 --depth 24 --size 1000000
    python cli.py gmc --check conditional --r 0 --a 1 --n 3
    python cli.py fixed-point --b 2 --s 3

Every run writes its merged configuration, its data files and one JSON
manifest into --out. Exit status is 0 when no check failed (flagged checks
count as failures unless --allow-flagged).
"""

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np
import pandas as pd

import cascade
import correlation
import gmc
import lattice
import rfunction
from config import COMMANDS, GMC_CHECKS, LOG_LEVEL, RunConfig, parse_grid
from errors import DhlError, DomainError, OverflowGuardError, UsageError
from lattice import CylinderPath, LatticeParams
from reporting import (SEEDING_BIAS_NOTE, RunManifest, check_close, check_decrease, check_flag, check_statistical,
                       checks_frame, failure, write_json, write_manifest, write_table)
from rfunction import VarianceProfile, evaluate_R, evaluate_R_prime

logger = logging.getLogger(__name__)

ASYMPTOTIC_LEVELS = (-1e3, -1e4, -1e5, -1e6)
RENORMALIZATION_MAX_SAMPLES = 100_000
MARGINAL_MAX_PATHS = 256
KERNEL_IDENTITY_MAX_N = 8
PAIR_AUDIT_MAX_PATHS = 256
KAHANE_BATCH = 100_000
FRACTIONAL_LEVELS = (0.0, 2.0, 4.0, 6.0, 8.0)
# θ = 1 means beyond this level are heavy-tailed and only flagged
FRACTIONAL_MEAN_MAX_R = 4.0


# ── rfunc ─────────────────────────────────────────────────────────────────────

def _moment_row(profile: VarianceProfile, r: float, kmax: int, seed_kind: str, manifest: RunManifest) -> dict:
    try:
        table = rfunction.centered_moment_table(profile, [r], kmax, seed_kind)
    except DhlError as exc:
        logger.info("rfunc: moments at r=%g unavailable (%s)", r, exc)
        manifest.notes.append(f"moment columns at r={r:g} left empty: {exc}")
        return {}
    row = {f"m{k}": float(table.raw[0, k]) for k in range(2, kmax + 1)}
    row.update({f"Rc{k}": float(table.centered[0, k]) for k in range(3, kmax + 1)})
    return row


def cmd_rfunc(config: RunConfig, manifest: RunManifest) -> None:
    profile = VarianceProfile(config.b)
    grid = parse_grid(config.grid)
    rows = []
    for r in grid:
        row = {"r": r, "kappa_sq": profile.kappa_sq, "eta": profile.eta}
        try:
            R, R_prime = evaluate_R(profile, r), evaluate_R_prime(profile, r)
        except OverflowGuardError as exc:
            manifest.notes.append(f"R({r:g}) left empty: {exc}")
            rows.append(row)
            continue
        except DhlError as exc:
            manifest.add(failure(f"rfunc.evaluate[r={r:g}]", exc))
            rows.append(row)
            continue
        row.update({"R": R, "R_prime": R_prime})
        try:
            following = evaluate_R(profile, r + 1)
            row["psi_residual"] = abs(rfunction.psi(config.b, R) - following) / following
        except OverflowGuardError:
            manifest.notes.append(f"R({r + 1:g}) exceeds double precision; no recursion residual at r={r:g}")
        if r < 0:
            row["R_asymptotic"] = rfunction.asymptotic_R(config.b, r)
        row.update(_moment_row(profile, r, config.kmax, config.seed_spec, manifest))
        rows.append(row)

    frame = pd.DataFrame(rows)
    manifest.outputs.append(str(write_table(frame, config.out / "rfunc.csv")))

    if "psi_residual" in frame:
        worst = float(frame["psi_residual"].max())
        manifest.add(check_close("rfunc.psi-identity", 0.0, worst, 1e-10))
    values = frame["R"].dropna().to_numpy() if "R" in frame else np.empty(0)
    manifest.add(check_flag("rfunc.positive-increasing", bool(np.all(values > 0) and np.all(np.diff(values) > 0))))
    if "m2" in frame:
        both = frame[["R", "m2"]].dropna()
        worst = float(np.max(np.abs(both["m2"] - 1.0 - both["R"]) / both["R"])) if len(both) else 0.0
        manifest.add(check_close("rfunc.m2-matches-R", 0.0, worst, 1e-9))

    bound_scale = 1.1 * profile.eta
    levels = sorted(set(ASYMPTOTIC_LEVELS) | {r for r in grid if r <= -1e3})
    for r in levels:
        u = -r
        gap = abs(evaluate_R(profile, r) * u / profile.kappa_sq - 1.0)
        manifest.add(check_close(f"rfunc.asymptotic[r={r:g}]", 0.0, gap, bound_scale * math.log(u) / u))


# ── correlation ───────────────────────────────────────────────────────────────

def cmd_correlation(config: RunConfig, manifest: RunManifest) -> None:
    params = LatticeParams(config.b, config.s)
    params.require_critical("correlation")
    profile = VarianceProfile(config.b)
    r, a, n = config.r, config.a, config.n
    identities = []

    table = correlation.correlation_table(profile, r, n)
    manifest.outputs.append(str(write_table(correlation.histogram_frame(table), config.out / "correlation-histogram.csv")))

    if n <= 2:
        enumerated = correlation.enumerated_histogram(params, n)
        manifest.add(check_flag(f"correlation.histogram-enumeration[n={n}]",
                                enumerated.counts == table.histogram.counts,
                                detail=str(sorted(table.histogram.counts.items()))))

    target = 1.0 + evaluate_R(profile, r)
    masses = []
    moments_ok = True
    for k in range(1, config.n_max + 1):
        hist = correlation.pair_count_histogram(params, k)
        total = hist.total()
        moments_ok &= hist.moment(1) == total and hist.moment(2) == (1 + k * (config.b - 1)) * total
        masses.append(correlation.upsilon_total_mass(correlation.correlation_table(profile, r, k)))
    manifest.add(check_flag("correlation.histogram-moments", moments_ok))
    spread = max(abs(m - target) for m in masses) / target
    manifest.add(check_close("correlation.total-mass-consistency", 0.0, spread, 1e-9,
                             detail=f"n = 1..{config.n_max}"))
    identities.append(correlation.identity_row("total_mass", masses[-1], target))

    count = lattice.exact_path_count(params, n)
    if count <= MARGINAL_MAX_PATHS:
        paths = [CylinderPath.from_index(params, n, i) for i in range(count)]
    else:
        rng = cascade.substream(config.seed, 0)
        paths = [lattice.sample_uniform_path(params, n, rng) for _ in range(64)]
    expected = target / count
    worst = max(abs(correlation.marginal_check(table, p) - expected) / expected for p in paths)
    manifest.add(check_close("correlation.marginal", 0.0, worst, 1e-12))

    for k in range(1, min(config.n_max, 8) + 1):
        rn = correlation.rn_total_mass(correlation.correlation_table(profile, r, k), a)
        identities.append(correlation.identity_row(f"rn_exactness[n={k}]", rn, 1.0 + evaluate_R(profile, r + a)))
    worst = max(row["rel_err"] for row in identities if row["check"].startswith("rn_exactness"))
    manifest.add(check_close("correlation.rn-exactness", 0.0, worst, 1e-9))

    rho_total = correlation.rho_total_mass(table)
    identities.append(correlation.identity_row("rho_total", rho_total, 1.0))
    manifest.add(check_close("correlation.rho-total", 1.0, rho_total, 1e-9))

    kernel_n = min(n, KERNEL_IDENTITY_MAX_N)
    worst = 0.0
    for p in paths[:16]:
        p = p.coarsen(kernel_n)
        lhs, rhs = correlation.kernel_marginal_identity_check(profile, r, kernel_n, p, normalized=True)
        worst = max(worst, abs(lhs - rhs) / rhs)
    manifest.add(check_close("correlation.kernel-marginal", 0.0, worst, 1e-8))
    lhs, rhs = correlation.theta_mass_identity_check(profile, r, kernel_n)
    identities.append(correlation.identity_row("theta_mass", lhs, rhs))
    manifest.add(check_close("correlation.theta-mass", rhs, lhs, 1e-8, relative=True))

    manifest.outputs.append(str(write_table(pd.DataFrame(identities), config.out / "correlation-identities.csv")))


# ── simulate ──────────────────────────────────────────────────────────────────

def _alternate_seed(kind: str) -> str:
    return "lognormal" if kind != "lognormal" else "two-point"


def cmd_simulate(config: RunConfig, manifest: RunManifest) -> None:
    b, r = config.b, config.r
    profile = VarianceProfile(b)
    manifest.notes.append(SEEDING_BIAS_NOTE)
    common = dict(chunks=config.chunks, threads=config.threads, profile=profile, progress=config.progress,
                  stabilization=config.stabilization)
    if config.stabilization == "mean-variance":
        manifest.notes.append("populations are pinned to mean 1 and variance R(r) at every resolvable level; "
                              "simulate.variance confirms the pinning, central3/4 and the seed comparison "
                              "are the independent law checks")

    pop = cascade.simulate_mass_law(b, r, config.seed_spec, config.depth, config.size, config.seed,
                                    track=True, **common)
    manifest.outputs.append(str(cascade.write_population(pop, config.out / "simulate-population.bin")))
    summary = cascade.moment_summary(pop.values, 4)
    manifest.outputs.append(str(write_table(summary, config.out / "simulate-moments.csv")))
    manifest.outputs.append(str(write_table(pd.DataFrame(pop.trajectory), config.out / "simulate-trajectory.csv")))
    manifest.add(check_flag("simulate.finite", pop.nonfinite == 0, detail=f"{pop.nonfinite} non-finite masses",
                            soft=True))

    mean = summary.loc[summary.k == 1].iloc[0]
    manifest.add(check_statistical("simulate.mean", 1.0, mean.raw, mean.raw_se, soft=True))
    second = summary.loc[summary.k == 2].iloc[0]
    manifest.add(check_statistical("simulate.variance", evaluate_R(profile, r), second.central, second.central_se))

    oracle = rfunction.centered_moment_table(profile, [r], 4, config.seed_spec)
    for k in (3, 4):
        row = summary.loc[summary.k == k].iloc[0]
        manifest.add(check_statistical(f"simulate.central{k}", float(oracle.centered[0, k]), row.central,
                                       row.central_se, n_sigma=5.0))

    misses = [row["r"] for row in pop.trajectory
              if abs(row["variance"] - evaluate_R(profile, row["r"])) > 4.0 * row["variance_se"]]
    manifest.add(check_flag("simulate.trajectory-variance", not misses, soft=True,
                            detail=f"steps off by more than 4 SE at r = {misses}"))

    other_kind = _alternate_seed(config.seed_spec)
    other = cascade.simulate_mass_law(b, r, other_kind, config.depth, config.size,
                                      cascade.derive_seed(config.seed, 7), **common)
    other_summary = cascade.moment_summary(other.values, 3)
    for k in (2, 3):
        mine = summary.loc[summary.k == k].iloc[0]
        theirs = other_summary.loc[other_summary.k == k].iloc[0]
        manifest.add(check_statistical(f"simulate.seed-insensitivity.central{k}", theirs.central, mine.central,
                                       math.hypot(mine.central_se, theirs.central_se),
                                       detail=f"{config.seed_spec} vs {other_kind}"))

    _fractional_report(config, manifest, profile)

    if config.n >= 1:
        _cylinder_audit(config, manifest, profile)


def _fractional_report(config: RunConfig, manifest: RunManifest, profile: VarianceProfile) -> None:
    """Half-moment decay and θ = 1 mean over FRACTIONAL_LEVELS."""
    rows = []
    for i, level in enumerate(FRACTIONAL_LEVELS):
        pop = cascade.simulate_mass_law(config.b, level, config.seed_spec, config.depth, config.size,
                                        cascade.derive_seed(config.seed, 20 + i), chunks=config.chunks,
                                        threads=config.threads, profile=profile, progress=config.progress,
                                        stabilization=config.stabilization)
        half, half_se = cascade.fractional_moment(pop, 0.5)
        mean, mean_se = cascade.fractional_moment(pop, 1.0)
        rows.append({"r": level, "half_moment": half, "half_moment_se": half_se,
                     "mean": mean, "mean_se": mean_se, "nonfinite": pop.nonfinite})
    frame = pd.DataFrame(rows)
    manifest.outputs.append(str(write_table(frame, config.out / "simulate-fractional.csv")))

    for first, second in zip(rows, rows[1:]):
        manifest.add(check_decrease(f"simulate.half-moment-decay-{first['r']:g}-to-{second['r']:g}",
                                    first["half_moment"], first["half_moment_se"],
                                    second["half_moment"], second["half_moment_se"]))
    for row in rows:
        manifest.add(check_statistical(f"simulate.fractional-mean[r={row['r']:g}]", 1.0, row["mean"], row["mean_se"],
                                       soft=row["r"] > FRACTIONAL_MEAN_MAX_R))


def _cylinder_audit(config: RunConfig, manifest: RunManifest, profile: VarianceProfile) -> None:
    b, r, n = config.b, config.r, config.n
    params = LatticeParams(b, b)
    batch = cascade.sample_measure_batch(b, r, n, config.realizations, max(config.depth, n + 1), config.seed_spec,
                                         cascade.derive_seed(config.seed, 8), chunks=config.chunks,
                                         threads=config.threads, profile=profile, progress=config.progress)
    manifest.add(check_close("simulate.additivity", 0.0, batch.audit, 1e-12))
    paths = batch.masses.shape[1]

    means = batch.masses.mean(axis=0)
    ses = batch.masses.std(axis=0, ddof=1) / math.sqrt(len(batch))
    off = int(np.count_nonzero(np.abs(means - 1.0 / paths) > 4.0 * ses))
    manifest.add(check_flag("simulate.cylinder-means", off == 0, detail=f"{off} of {paths} cylinders beyond 4 SE"))

    if paths <= PAIR_AUDIT_MAX_PATHS:
        shared = lattice.shared_edge_matrix(lattice.enumerate_paths(params, n), params, n)
        upsilon = np.exp(shared * math.log1p(evaluate_R(profile, r - n))) / paths ** 2
        products = batch.masses[:, :, None] * batch.masses[:, None, :]
        pair_means = products.mean(axis=0)
        pair_ses = products.std(axis=0, ddof=1) / math.sqrt(len(batch))
        off = int(np.count_nonzero(np.abs(pair_means - upsilon) > 4.0 * pair_ses))
        manifest.add(check_flag("simulate.pair-correlation", off == 0,
                                detail=f"{off} of {paths * paths} pairs beyond 4 SE"))


# ── gmc ───────────────────────────────────────────────────────────────────────

def _mode(config: RunConfig, default: str = "exact-discrete") -> str:
    return config.mode or default


def _gmc_shift(config: RunConfig, manifest: RunManifest, profile: VarianceProfile) -> dict:
    n = min(config.n, 3)
    rng = cascade.substream(config.seed, cascade.STREAM_GMC, 0, 0)
    kernel, gram = gmc.build_kernel(profile, config.r, config.a, n, mode=_mode(config))
    manifest.add(check_close("gmc.gram-exactness", 0.0, float(np.max(np.abs(gram.factor @ gram.factor.T - kernel.matrix))),
                             1e-12))
    scale = max(float(np.max(kernel.diagonal)), 1.0)
    manifest.add(check_flag("gmc.psd", kernel.min_eigenvalue() >= -1e-10 * scale))
    if len(kernel.support) <= gmc.CHOLESKY_MAX_PATHS:
        chol = gmc.cholesky_factor(kernel)
        manifest.add(check_close("gmc.cholesky-cross-check", 0.0,
                                 float(np.max(np.abs(chol @ chol.T - kernel.matrix))), 1e-9 * scale))

    reference = np.full(len(kernel.support), 1.0 / len(kernel.support))
    realization = gmc.sample_gmc(reference, gram, rng, draws=4)
    phi = rng.standard_normal(gram.edge_count)
    shifted = gmc.shift_field(realization, phi)
    direct = realization.weights * np.exp(gram.field(phi))
    manifest.add(check_close("gmc.shift-covariance", 0.0, float(np.max(np.abs(shifted.weights - direct) / direct)), 1e-12))
    density = gmc.cameron_martin_density(phi, realization.g)
    ratio = gmc.gaussian_likelihood_ratio(phi, realization.g)
    manifest.add(check_close("gmc.cameron-martin", 0.0, float(np.max(np.abs(density - ratio) / ratio)), 1e-12))

    traces = {}
    for k in range(1, min(config.n, 3) + 1):
        trace_kernel, _ = gmc.build_kernel(profile, config.r, config.a, k, mode=_mode(config))
        uniform = np.full(len(trace_kernel.support), 1.0 / len(trace_kernel.support))
        traces[str(k)] = gmc.kernel_trace(trace_kernel, uniform)
    return {"name": "shift", "kernel_trace_by_n": traces}


def _gmc_kahane(config: RunConfig, manifest: RunManifest, profile: VarianceProfile) -> dict:
    params = LatticeParams(config.b, config.b)
    if config.b == 2:
        small, _ = gmc.kernel_from_weight(params, 1, math.log(2.0))
        hand = gmc.kahane_moment(small, np.full(2, 0.5), range(2), 2)
        manifest.add(check_close("gmc.kahane-hand-value", 2.5, hand, 1e-12))

    n = min(config.n, 2)
    kernel, gram = gmc.build_kernel(profile, config.r, config.a, n, mode=_mode(config))
    paths = len(kernel.support)
    reference = np.full(paths, 1.0 / paths)
    totals, weights_sum, pair_sum = [], np.zeros(paths), np.zeros((paths, paths))
    weights_sq, pair_sq = np.zeros(paths), np.zeros((paths, paths))
    for c, (lo, hi) in enumerate(cascade.chunk_bounds(config.size, max(1, math.ceil(config.size / KAHANE_BATCH)))):
        real = gmc.sample_gmc(reference, gram, cascade.substream(config.seed, cascade.STREAM_GMC, 9, c), hi - lo)
        totals.append(real.totals)
        weights_sum += real.weights.sum(axis=0)
        squared = real.weights ** 2
        weights_sq += squared.sum(axis=0)
        pair_sum += real.weights.T @ real.weights
        pair_sq += squared.T @ squared
    totals = np.concatenate(totals)
    size = len(totals)

    def mean_se(total, total_sq):
        mean = total / size
        return mean, np.sqrt(np.maximum(total_sq / size - mean ** 2, 0.0) / size)

    means, ses = mean_se(weights_sum, weights_sq)
    off = int(np.count_nonzero(np.abs(means - reference) > 4.0 * ses))
    manifest.add(check_flag("gmc.conditional-mean", off == 0, detail=f"{off} of {paths} cylinders beyond 4 SE"))
    pair_means, pair_ses = mean_se(pair_sum, pair_sq)
    expected = np.exp(kernel.matrix) * np.outer(reference, reference)
    off = int(np.count_nonzero(np.abs(pair_means - expected) > 4.0 * pair_ses))
    manifest.add(check_flag("gmc.second-moment-law", off == 0, detail=f"{off} of {paths * paths} pairs beyond 4 SE"))

    formula = {}
    for m in (2, 3):
        value = gmc.kahane_moment(kernel, reference, range(paths), m)
        powered = totals ** m
        manifest.add(check_statistical(f"gmc.kahane-moment{m}", value, float(powered.mean()),
                                       float(powered.std(ddof=1) / math.sqrt(size))))
        formula[str(m)] = value
    return {"name": "kahane", "formula": formula}


def cmd_gmc(config: RunConfig, manifest: RunManifest) -> None:
    LatticeParams(config.b, config.s).require_critical("gmc")
    profile = VarianceProfile(config.b)
    manifest.notes.append(SEEDING_BIAS_NOTE)
    selected = [c for c in GMC_CHECKS if c != "all"] if config.check == "all" else [config.check]
    common = dict(m=config.depth, seed_kind=config.seed_spec, mode=_mode(config), chunks=config.chunks,
                  threads=config.threads)
    reports = []

    for check in selected:
        logger.info("gmc: running %s", check)
        if check == "shift":
            reports.append(_gmc_shift(config, manifest, profile))
            continue
        if check == "kahane":
            reports.append(_gmc_kahane(config, manifest, profile))
            continue
        if check == "conditional":
            report = gmc.conditional_gmc_experiment(profile, config.r, config.a, min(config.n, 3), config.realizations,
                                                    config.draws, config.seed, reference_size=config.size,
                                                    progress=config.progress, **common)
        elif check == "renormalization":
            samples = min(config.realizations * config.draws, RENORMALIZATION_MAX_SAMPLES)
            report = gmc.renormalization_consistency(profile, config.r, config.a, max(min(config.n, 3), 2), samples,
                                                     config.seed, progress=config.progress, **common)
        elif check == "strong-disorder":
            report = gmc.strong_disorder_bound(profile, parse_grid(config.r_grid), min(config.n, 3), config.depth,
                                               config.realizations, config.draws, config.seed,
                                               seed_kind=config.seed_spec, mode=_mode(config, "asymptotic"),
                                               chunks=config.chunks, threads=config.threads, progress=config.progress)
        else:
            samples = min(config.realizations * config.draws, RENORMALIZATION_MAX_SAMPLES)
            report = gmc.semigroup_check(profile, config.r, config.a, config.a, min(config.n, 3), samples,
                                         config.seed, **common)
        manifest.add(*report.checks)
        for label, frame in report.tables.items():
            manifest.outputs.append(str(write_table(frame, config.out / f"gmc-{report.name}-{label}.csv")))
        reports.append(report.to_dict())

    manifest.outputs.append(str(write_json({"reports": reports}, config.out / "gmc-report.json")))


# ── fixed-point ───────────────────────────────────────────────────────────────

def cmd_fixed_point(config: RunConfig, manifest: RunManifest) -> None:
    b, s = config.b, config.s
    if b >= s:
        raise DomainError(f"b={b} >= s={s}: the intersection fixed point exists only below criticality (b < s)")
    x = lattice.intersection_fixed_point(b, s)
    dim = lattice.intersection_hausdorff_dim(b, s)
    residual = abs((1.0 - (1.0 - x) ** s) / b - x)
    print(f"intersection fixed point p_(b,s) = {x:.17g}")
    print(f"intersection Hausdorff dimension = {dim:.17g}")
    print(f"lattice Hausdorff dimension      = {lattice.dhl_hausdorff_dim(b, s):.17g}")
    print(f"residual |M(p) - p|              = {residual:.3g}")
    manifest.add(check_close("fixed-point.residual", 0.0, residual, 1e-12))


COMMAND_HANDLERS = {
    "rfunc": cmd_rfunc,
    "correlation": cmd_correlation,
    "simulate": cmd_simulate,
    "gmc": cmd_gmc,
    "fixed-point": cmd_fixed_point,
}


# ── Entry point ───────────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", type=Path, help="key = value config file; flags override its keys")
    for flag, kind in (("--b", int), ("--s", int), ("--r", float), ("--a", float), ("--n", int),
                       ("--n-max", int), ("--depth", int), ("--size", int), ("--seed", int),
                       ("--realizations", int), ("--draws", int), ("--kmax", int), ("--threads", int),
                       ("--chunks", int)):
        shared.add_argument(flag, type=kind)
    shared.add_argument("--seed-spec", choices=cascade.SEED_KINDS)
    shared.add_argument("--mode", choices=gmc.MODES,
                        help="chaos kernel; strong-disorder defaults to asymptotic, everything else to exact-discrete")
    shared.add_argument("--stabilization", choices=cascade.STABILIZATIONS,
                        help="population rescaling after each step (default mean-variance)")
    shared.add_argument("--grid", help="r-grid as lo:step:hi or a comma list")
    shared.add_argument("--r-grid", help="strong-disorder strengths as lo:step:hi or a comma list")
    shared.add_argument("--check", choices=GMC_CHECKS)
    shared.add_argument("--out", type=Path)
    shared.add_argument("--allow-flagged", action="store_const", const=True,
                        help="exit 0 when checks are only flagged")
    shared.add_argument("--progress", action="store_const", const=True, help="show progress bars")

    parser = argparse.ArgumentParser(description="Critical diamond hierarchical lattice polymer toolkit")
    commands = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        commands.add_parser(name, parents=[shared])
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    overrides = {k: v for k, v in vars(args).items() if k != "config" and v is not None}
    text = args.config.read_text() if args.config else ""
    return RunConfig.from_text(text, **overrides)


def run(config: RunConfig) -> int:
    config.out.mkdir(parents=True, exist_ok=True)
    (config.out / f"{config.command}-config.txt").write_text(config.to_text())
    manifest = RunManifest(command=config.command, config=config.model_dump(mode="json"))
    try:
        COMMAND_HANDLERS[config.command](config, manifest)
    except DhlError as exc:
        logger.error("%s: %s", config.command, exc)
        manifest.add(failure(config.command, exc))
    manifest.finish()
    if manifest.checks:
        write_table(checks_frame(manifest.checks), config.out / f"{config.command}-checks.csv")
    write_manifest(manifest, config.out)
    return manifest.exit_code(config.allow_flagged)


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
    except (UsageError, ValueError) as exc:
        logger.error("invalid configuration: %s", exc)
        return 2
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
