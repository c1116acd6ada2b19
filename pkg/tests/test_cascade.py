"""
tests/test_cascade.py — Tests for seed laws, population dynamics, cylinder-mass
samples and population snapshots.

Monte Carlo checks run at reduced sizes with fixed seeds and 4-5 SE bands.
"""

import math

import numpy as np
import pytest

import cascade
import lattice
import rfunction
from cascade import MassPopulation, Provenance, SeedSpec
from errors import BudgetError, DomainError, UsageError
from rfunction import evaluate_R


def _population(values, b=2, master_seed=0, chunks=4):
    seed = SeedSpec("deterministic-one", 0.0)
    provenance = Provenance(b=b, seed=seed, r0=-16.0, depth=0, master_seed=master_seed, chunks=chunks)
    return MassPopulation(r=-16.0, values=np.asarray(values, dtype=float), provenance=provenance)


def _variance_with_se(values):
    summary = cascade.moment_summary(values, 2)
    row = summary.loc[summary.k == 2].iloc[0]
    return row.central, row.central_se


# ── Streams ───────────────────────────────────────────────────────────────────

class TestStreams:
    def test_substream_reproducible(self):
        a = cascade.substream(42, 1, 2, 3).standard_normal(5)
        b = cascade.substream(42, 1, 2, 3).standard_normal(5)
        assert np.array_equal(a, b)

    def test_substreams_differ(self):
        a = cascade.substream(42, 1, 2, 3).standard_normal(5)
        b = cascade.substream(42, 1, 2, 4).standard_normal(5)
        assert not np.array_equal(a, b)

    def test_derive_seed(self):
        assert cascade.derive_seed(7, 1) == cascade.derive_seed(7, 1)
        assert cascade.derive_seed(7, 1) != cascade.derive_seed(7, 2)
        assert isinstance(cascade.derive_seed(7, 1), int)

    def test_chunk_bounds_cover(self):
        bounds = cascade.chunk_bounds(10, 3)
        assert bounds == [(0, 4), (4, 7), (7, 10)]

    def test_chunk_bounds_more_chunks_than_items(self):
        bounds = cascade.chunk_bounds(2, 4)
        assert sum(hi - lo for lo, hi in bounds) == 2


# ── Seed laws ─────────────────────────────────────────────────────────────────

class TestSeedSpec:
    def test_unknown_kind(self):
        with pytest.raises(UsageError):
            SeedSpec("uniform", 0.1)

    def test_negative_variance(self):
        with pytest.raises(DomainError):
            SeedSpec("lognormal", -0.1)

    def test_two_point_bound(self):
        with pytest.raises(DomainError):
            SeedSpec("two-point", 1.5)

    def test_two_point_support(self, rng):
        values = SeedSpec("two-point", 0.09).sample(1000, rng)
        assert set(np.round(values, 12)) <= {0.7, 1.3}
        assert np.all(values >= 0)

    @pytest.mark.parametrize("kind", ["two-point", "lognormal"])
    def test_mean_and_variance(self, kind):
        rng = np.random.default_rng(99)
        values = SeedSpec(kind, 0.2).sample(200_000, rng)
        se = math.sqrt(0.2 / 200_000)
        assert abs(values.mean() - 1.0) < 4 * se
        variance, var_se = _variance_with_se(values)
        assert abs(variance - 0.2) < 4 * var_se

    def test_deterministic(self, rng):
        assert np.array_equal(SeedSpec("deterministic-one", 0.0).sample(5, rng), np.ones(5))

    def test_at_level_variance(self, profile2):
        assert SeedSpec.at_level("two-point", profile2, -20.0).variance == evaluate_R(profile2, -20.0)
        assert SeedSpec.at_level("deterministic-one", profile2, -20.0).variance == 0.0

    def test_raw_moments(self):
        assert SeedSpec("two-point", 0.25).raw_moments(3) == pytest.approx([1.0, 1.0, 1.25, 1.75])


# ── Population dynamics ───────────────────────────────────────────────────────

class TestEvolvePopulation:
    def test_unit_masses_are_fixed(self):
        pop = cascade.evolve_population(_population(np.ones(1000)))
        assert np.array_equal(pop.values, np.ones(1000))
        assert pop.r == -15.0

    def test_empty(self):
        with pytest.raises(UsageError):
            cascade.evolve_population(_population([]))

    def test_smaller_than_b_squared(self):
        with pytest.raises(UsageError):
            cascade.evolve_population(_population([1.0, 1.0, 1.0]))

    def test_size_preserved_with_explicit_rng(self, rng):
        pop = cascade.evolve_population(_population(rng.uniform(0.5, 1.5, 999)), np.random.default_rng(1))
        assert pop.size == 999

    def test_variance_follows_psi(self):
        rng = np.random.default_rng(5)
        values = SeedSpec("lognormal", 0.2).sample(200_000, rng)
        m1, m2 = values.mean(), np.mean(values ** 2)
        expected = (m2 ** 2 - m1 ** 4) / 2
        out = cascade.evolve_population(_population(values), np.random.default_rng(6), stabilization="none")
        variance, se = _variance_with_se(out.values)
        assert abs(variance - expected) < 4 * se
        assert expected == pytest.approx(rfunction.psi(2, 0.2), rel=0.05)

    def test_raw_mean_squares(self):
        rng = np.random.default_rng(8)
        values = SeedSpec("two-point", 0.3).sample(200_000, rng)
        out = cascade.evolve_population(_population(values), np.random.default_rng(9), stabilization="none").values
        assert abs(out.mean() - values.mean() ** 2) < 4 * out.std(ddof=1) / math.sqrt(len(out))

    def test_mean_pinned(self):
        rng = np.random.default_rng(8)
        values = 1.01 * SeedSpec("two-point", 0.3).sample(200_000, rng)
        out = cascade.evolve_population(_population(values), np.random.default_rng(9)).values
        assert out.mean() == pytest.approx(1.0, rel=1e-12)

    def test_variance_pinned_to_target(self):
        rng = np.random.default_rng(10)
        values = SeedSpec("lognormal", 0.2).sample(50_000, rng)
        out = cascade.evolve_population(_population(values), np.random.default_rng(11), target_variance=0.25).values
        assert out.mean() == pytest.approx(1.0, rel=1e-12)
        assert out.var() == pytest.approx(0.25, rel=1e-9)

    def test_unknown_stabilization(self, rng):
        with pytest.raises(UsageError):
            cascade.evolve_population(_population(np.ones(10)), rng, stabilization="median")

    def test_independent_of_threads(self):
        rng = np.random.default_rng(3)
        pop = _population(rng.uniform(0.5, 1.5, 10_000), master_seed=11, chunks=5)
        serial = cascade.evolve_population(pop, step=2, threads=1)
        threaded = cascade.evolve_population(pop, step=2, threads=3)
        assert np.array_equal(serial.values, threaded.values)


class TestStabilize:
    def test_power_map_keeps_order_and_sign(self, rng):
        values = rng.lognormal(0.0, 0.6, 20_000)
        out = cascade.stabilize(values, 0.5)
        assert out.mean() == pytest.approx(1.0, rel=1e-12)
        assert out.var() == pytest.approx(0.5, rel=1e-9)
        assert np.all(out >= 0)
        assert np.array_equal(np.argsort(values), np.argsort(out))

    def test_mean_only(self, rng):
        values = rng.uniform(1.0, 3.0, 1000)
        assert cascade.stabilize(values) == pytest.approx(values / values.mean(), rel=1e-15)

    def test_nonfinite_passed_through(self):
        out = cascade.stabilize(np.array([1.0, 3.0, np.inf, 2.0]), 0.1)
        assert np.isinf(out[2])
        assert out[np.isfinite(out)].mean() == pytest.approx(1.0, rel=1e-12)

    def test_constant_population_unchanged(self):
        assert np.array_equal(cascade.stabilize(np.full(8, 2.0), 0.3), np.ones(8))

    def test_unresolved_variance_is_not_pinned(self, rng):
        values = rng.pareto(1.2, 2000) + 1.0
        out = cascade.stabilize(values, 0.5)
        assert out == pytest.approx(values / values.mean(), rel=1e-15)

    def test_unreachable_variance_keeps_mean_rescaling(self):
        values = np.tile([0.5, 1.5], 100)
        out = cascade.stabilize(values, 5.0)
        assert out == pytest.approx(values, rel=1e-15)


class TestSimulateMassLaw:
    def test_reproducible(self):
        a = cascade.simulate_mass_law(2, -2.0, "two-point", 20, 5000, master_seed=4, chunks=3)
        b = cascade.simulate_mass_law(2, -2.0, "two-point", 20, 5000, master_seed=4, chunks=3, threads=2)
        assert np.array_equal(a.values, b.values)
        assert a.provenance == b.provenance

    def test_depth_raised_to_seed_ceiling(self):
        pop = cascade.simulate_mass_law(2, 0.0, "two-point", 4, 1000, master_seed=1)
        assert pop.provenance.depth == 16
        assert pop.provenance.r0 == -16.0

    def test_bad_depth(self):
        with pytest.raises(UsageError):
            cascade.simulate_mass_law(2, 0.0, m=0, size=10)

    def test_default_depth_stays_finite(self, profile2):
        pop = cascade.simulate_mass_law(2, 0.0, "two-point", 24, 200_000, master_seed=7, profile=profile2,
                                        track=True)
        assert pop.nonfinite == 0
        assert pop.values.mean() == pytest.approx(1.0, rel=1e-12)
        assert [row["mean"] for row in pop.trajectory] == pytest.approx([1.0] * 25, rel=1e-12)
        assert pop.provenance.stabilization == "mean-variance"

    def test_mean_only_stabilization_stays_finite(self):
        pop = cascade.simulate_mass_law(2, -2.0, "two-point", 24, 50_000, master_seed=8, stabilization="mean")
        assert pop.nonfinite == 0
        assert pop.values.mean() == pytest.approx(1.0, rel=1e-12)

    def test_unknown_stabilization(self):
        with pytest.raises(UsageError):
            cascade.simulate_mass_law(2, 0.0, size=10, stabilization="median")

    def test_deterministic_seed_stays_one(self):
        pop = cascade.simulate_mass_law(2, 0.0, "deterministic-one", 24, 1000, master_seed=1)
        assert np.array_equal(pop.values, np.ones(1000))

    @pytest.mark.parametrize("kind", ["two-point", "lognormal"])
    def test_variance_matches_profile(self, profile2, kind):
        pop = cascade.simulate_mass_law(2, 0.0, kind, 24, 200_000, master_seed=21, profile=profile2)
        variance, se = _variance_with_se(pop.values)
        assert abs(variance - evaluate_R(profile2, 0.0)) < 4 * se
        assert abs(pop.values.mean() - 1.0) < 4 * pop.values.std(ddof=1) / math.sqrt(pop.size)

    def test_seed_insensitive(self, profile2):
        a = cascade.moment_summary(cascade.simulate_mass_law(2, -1.0, "two-point", 24, 200_000, 31).values, 3)
        b = cascade.moment_summary(cascade.simulate_mass_law(2, -1.0, "lognormal", 24, 200_000, 32).values, 3)
        for k in (2, 3):
            x, y = a.loc[a.k == k].iloc[0], b.loc[b.k == k].iloc[0]
            assert abs(x.central - y.central) < 4 * math.hypot(x.central_se, y.central_se)

    def test_seed_insensitive_moment_map(self, profile2):
        two_point = rfunction.centered_moment_table(profile2, [0.0], 4, "two-point").centered[0]
        lognormal = rfunction.centered_moment_table(profile2, [0.0], 4, "lognormal").centered[0]
        assert lognormal[3:] == pytest.approx(two_point[3:], rel=1e-6)

    def test_fourth_central_moment(self, profile2):
        pop = cascade.simulate_mass_law(2, -2.0, "two-point", 24, 400_000, master_seed=41, profile=profile2)
        summary = cascade.moment_summary(pop.values, 4)
        row = summary.loc[summary.k == 4].iloc[0]
        predicted = rfunction.centered_moment_table(profile2, [-2.0], 4).centered[0, 4]
        assert abs(row.central - predicted) < 5 * row.central_se

    def test_trajectory_tracks_profile(self, profile2):
        pop = cascade.simulate_mass_law(2, -4.0, "two-point", 16, 100_000, master_seed=51, profile=profile2,
                                        track=True)
        assert len(pop.trajectory) == 17
        assert pop.trajectory[0]["r"] == -20.0
        for row in pop.trajectory:
            assert abs(row["variance"] - evaluate_R(profile2, row["r"])) < 5 * row["variance_se"]


# ── Measure samples ───────────────────────────────────────────────────────────

class TestCombine:
    def test_one_level_formula(self, params2):
        sub = np.array([[[2.0], [3.0]], [[5.0], [7.0]]])
        assert cascade.combine_cylinders(sub, params2, 1) == pytest.approx([3.0, 17.5])
        assert cascade.combine_totals(sub[..., 0]) == pytest.approx(20.5)

    def test_two_level_additivity(self, params2, rng):
        sub = rng.uniform(0.1, 2.0, size=(2, 2, 2))
        combined = cascade.combine_cylinders(sub, params2, 2)
        assert combined.shape == (8,)
        assert combined.sum() == pytest.approx(cascade.combine_totals(sub.sum(axis=-1)), rel=1e-14)


class TestMeasureBatch:
    def test_shape_and_audit(self):
        batch = cascade.sample_measure_batch(2, 0.0, 2, 500, 24, master_seed=3)
        assert len(batch) == 500
        assert batch.masses.shape == (500, 8)
        assert np.all(batch.masses >= 0)
        assert batch.audit <= 1e-12
        sample = batch.sample(0)
        assert sample.total == pytest.approx(sample.masses.sum(), rel=1e-12)

    def test_single_sample(self):
        sample = cascade.sample_measure_cylinders(3, -1.0, 1, 24, master_seed=2)
        assert sample.masses.shape == (3,)
        assert sample.n == 1

    def test_reproducible(self):
        a = cascade.sample_measure_batch(2, 0.0, 2, 100, master_seed=9)
        b = cascade.sample_measure_batch(2, 0.0, 2, 100, master_seed=9, threads=2)
        assert np.array_equal(a.masses, b.masses)

    def test_budget(self):
        with pytest.raises(BudgetError) as info:
            cascade.sample_measure_batch(2, 0.0, 5, 1, 24, budget=1 << 16)
        assert info.value.limit == 4

    def test_bad_generation(self):
        with pytest.raises(UsageError):
            cascade.sample_measure_batch(2, 0.0, 0, 1)
        with pytest.raises(UsageError):
            cascade.sample_measure_batch(2, 0.0, 3, 1, m=2)

    def test_cylinder_means_and_pair_correlation(self, profile2, params2):
        batch = cascade.sample_measure_batch(2, -1.0, 2, 20_000, 24, master_seed=13, profile=profile2)
        size = len(batch)
        means = batch.masses.mean(axis=0)
        ses = batch.masses.std(axis=0, ddof=1) / math.sqrt(size)
        assert np.all(np.abs(means - 1 / 8) < 4.5 * ses)

        shared = lattice.shared_edge_matrix(lattice.enumerate_paths(params2, 2), params2, 2)
        upsilon = (1 + evaluate_R(profile2, -3.0)) ** shared / 64
        products = batch.masses[:, :, None] * batch.masses[:, None, :]
        pair_se = products.std(axis=0, ddof=1) / math.sqrt(size)
        assert np.all(np.abs(products.mean(axis=0) - upsilon) < 4.5 * pair_se)


# ── Statistics and persistence ────────────────────────────────────────────────

class TestStatistics:
    def test_fractional_moment_ones(self):
        assert cascade.fractional_moment(np.ones(100), 0.5) == (1.0, 0.0)

    def test_fractional_moment_range(self):
        with pytest.raises(DomainError):
            cascade.fractional_moment(np.ones(10), 0.0)
        with pytest.raises(DomainError):
            cascade.fractional_moment(np.ones(10), 1.5)

    def test_half_moment_decays(self):
        estimates = [cascade.fractional_moment(cascade.simulate_mass_law(2, r, "two-point", 24, 100_000, 61 + i), 0.5)
                     for i, r in enumerate((0.0, 2.0, 4.0))]
        for (first, first_se), (second, second_se) in zip(estimates, estimates[1:]):
            assert first - second > 4 * math.hypot(first_se, second_se)

    def test_moment_summary_exact(self):
        summary = cascade.moment_summary(np.tile([0.0, 2.0], 50), 3)
        assert list(summary.columns) == ["k", "raw", "raw_se", "central", "central_se", "flagged"]
        row = summary.loc[summary.k == 2].iloc[0]
        assert row.raw == pytest.approx(2.0)
        assert row.central == pytest.approx(1.0)
        assert summary.loc[summary.k == 3].iloc[0].central == pytest.approx(0.0, abs=1e-15)

    def test_moment_summary_flags_noise(self, rng):
        summary = cascade.moment_summary(rng.standard_normal(20), 2)
        assert bool(summary.loc[summary.k == 1].iloc[0].flagged)

    def test_moment_summary_needs_two(self):
        with pytest.raises(UsageError):
            cascade.moment_summary([1.0], 2)


class TestPersistence:
    def test_snapshot_restores_population(self, tmp_out):
        pop = cascade.simulate_mass_law(2, -3.0, "lognormal", 20, 1000, master_seed=77, chunks=3)
        path = cascade.write_population(pop, tmp_out / "pop.bin")
        back = cascade.read_population(path)
        assert np.array_equal(back.values, pop.values)
        assert back.r == pop.r
        assert back.provenance == pop.provenance

    def test_rejects_foreign_file(self, tmp_out):
        path = tmp_out / "junk.bin"
        path.write_bytes(b"not a population")
        with pytest.raises(UsageError):
            cascade.read_population(path)
