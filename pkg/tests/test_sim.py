"""Path simulation, the ensemble store and the empirical estimators."""

import dataclasses
import math

import numpy as np
import pytest

from mpp_verifier import sim
from mpp_verifier.errors import (DomainError, ExplosionError, OutOfRangeError,
                                 UndecidableEventError, ValidationError)
from mpp_verifier.laws import poisson_fdd, polya_fdd_closed
from mpp_verifier.mixing import Degenerate, Gamma
from mpp_verifier.models import CountingPath, FddQuery
from mpp_verifier.rng import STREAM_BATTERY, STREAM_PATHS, stream
from mpp_verifier.scenario import ScenarioConfig
from mpp_verifier.sim import (PathEnsemble, SimulationPlan, compare_count_laws,
                              conditional_poisson_check, count_summary, empirical_fdd,
                              empirical_joint_interarrival_cdf, empirical_markov_residual,
                              empirical_multinomial_residual, empirical_splitting_residual,
                              read_path_dump, sample_path, simulate, write_path_dump)
from mpp_verifier.verify import Scenario


def _plan(kernel, mixing=None, num_paths=3000, seed=11, horizon=3.0, route="disintegration", **kwargs):
    return SimulationPlan(route, kernel, mixing, horizon, num_paths, seed, **kwargs)


class TestStreams:

    def test_same_key_same_draws(self):
        a = stream(5, 17).random(4)
        b = stream(5, 17).random(4)
        np.testing.assert_array_equal(a, b)

    def test_index_and_purpose_separate_streams(self):
        base = stream(5, 17, STREAM_PATHS).random(4)
        assert not np.array_equal(base, stream(5, 18, STREAM_PATHS).random(4))
        assert not np.array_equal(base, stream(5, 17, STREAM_BATTERY).random(4))
        assert not np.array_equal(base, stream(6, 17, STREAM_PATHS).random(4))

    def test_negative_seed(self):
        with pytest.raises(ValueError):
            stream(-1, 0)


class TestSimulationPlan:

    def test_direct_route_rejects_zero_rate(self, exp_kernel):
        with pytest.raises(DomainError):
            _plan(exp_kernel, route="direct", direct_theta=0.0)

    @pytest.mark.parametrize("kwargs", [
        {"route": "teleport"},
        {"num_paths": 0},
        {"horizon": 0.0},
        {"seed": -3},
        {"route": "direct"},
    ])
    def test_invalid(self, exp_kernel, gamma_law, kwargs):
        with pytest.raises(ValidationError):
            _plan(exp_kernel, gamma_law, **kwargs)

    def test_disintegration_needs_law(self, exp_kernel):
        with pytest.raises(ValidationError):
            _plan(exp_kernel, None)

    def test_digest_tracks_inputs(self, exp_kernel, gamma_law):
        plan = _plan(exp_kernel, gamma_law)
        assert plan.digest() == _plan(exp_kernel, gamma_law).digest()
        assert plan.digest() != _plan(exp_kernel, gamma_law, seed=12).digest()
        assert len(plan.digest()) == 16


class TestSamplePath:

    def test_pure_function_of_seed_and_index(self, exp_kernel, gamma_law):
        plan = _plan(exp_kernel, gamma_law)
        assert sample_path(plan, 5) == sample_path(plan, 5)
        assert sample_path(plan, 5).path != sample_path(plan, 6).path

    def test_lead_interarrivals_recorded(self, exp_kernel, gamma_law):
        plan = _plan(exp_kernel, gamma_law, lead_interarrivals=6)
        sp = sample_path(plan, 0)
        assert len(sp.lead) == 6
        waits = np.diff(np.asarray(sp.path.events), prepend=0.0)
        n = min(len(waits), 6)
        np.testing.assert_allclose(sp.lead[:n], waits[:n], rtol=0, atol=1e-12)

    def test_index_range(self, exp_kernel, gamma_law):
        with pytest.raises(ValidationError):
            sample_path(_plan(exp_kernel, gamma_law, num_paths=3), 3)

    def test_explosion_guard(self, exp_kernel, monkeypatch):
        monkeypatch.setattr(sim, "MAX_EVENTS", 256)
        plan = _plan(exp_kernel, route="direct", direct_theta=1e4, horizon=10.0, num_paths=1)
        with pytest.raises(ExplosionError):
            sample_path(plan, 0)


class TestSimulate:

    @pytest.mark.parametrize("threads", [3, 4, 16])
    def test_thread_count_does_not_change_paths(self, exp_kernel, gamma_law, threads):
        plan = _plan(exp_kernel, gamma_law, num_paths=3 * sim.CHUNK_SIZE + 500)
        one = simulate(plan, threads=1)
        many = simulate(plan, threads=threads)
        np.testing.assert_array_equal(one.events, many.events)
        np.testing.assert_array_equal(one.offsets, many.offsets)
        np.testing.assert_array_equal(one.thetas, many.thetas)
        np.testing.assert_array_equal(one.lead, many.lead)

    def test_thread_count_validated(self, exp_kernel, gamma_law):
        with pytest.raises(ValidationError):
            simulate(_plan(exp_kernel, gamma_law, num_paths=10), threads=0)

    def test_poisson_fdd_agrees(self, exp_kernel):
        ensemble = simulate(_plan(exp_kernel, route="direct", direct_theta=1.5, num_paths=5000))
        for q in (FddQuery((1.0,), (0,)), FddQuery((1.0, 2.0), (1, 2))):
            est = empirical_fdd(ensemble, q)
            assert abs(est.z_score(poisson_fdd(1.5, q))) < 4.5

    def test_polya_fdd_agrees(self, exp_kernel, gamma_law):
        ensemble = simulate(_plan(exp_kernel, gamma_law, num_paths=5000))
        for q in (FddQuery((1.0,), (0,)), FddQuery((0.5, 2.0), (0, 1))):
            est = empirical_fdd(ensemble, q)
            assert abs(est.z_score(polya_fdd_closed(2.0, 3.0, q))) < 4.5

    def test_degenerate_disintegration_matches_direct(self, exp_kernel):
        direct = simulate(_plan(exp_kernel, route="direct", direct_theta=2.0, num_paths=4000, seed=1))
        mixed = simulate(_plan(exp_kernel, Degenerate(2.0), num_paths=4000, seed=2))
        result = compare_count_laws(direct.counts_at(1.0), mixed.counts_at(1.0))
        assert result.pvalue > 1e-4


class TestPathEnsemble:

    def test_counts_and_increments(self, hand_ensemble):
        np.testing.assert_array_equal(hand_ensemble.counts_at(1.0), [2, 0, 0, 2])
        np.testing.assert_array_equal(hand_ensemble.counts_at(3.0), [3, 0, 1, 5])
        np.testing.assert_array_equal(hand_ensemble.increments([1.0, 3.0]), [[2, 1], [0, 0], [0, 1], [2, 3]])
        np.testing.assert_array_equal(hand_ensemble.event_counts, [3, 0, 1, 5])

    def test_counts_past_horizon(self, hand_ensemble):
        with pytest.raises(OutOfRangeError):
            hand_ensemble.counts_at(3.5)

    def test_path_round_trip(self, hand_ensemble):
        assert hand_ensemble.path(0) == CountingPath(3.0, (0.5, 1.0, 2.5))
        assert hand_ensemble.path(1).count == 0
        assert len(hand_ensemble.paths()) == 4

    def test_lead_padding(self, hand_ensemble):
        assert hand_ensemble.lead.shape == (4, 2)
        assert np.isnan(hand_ensemble.lead[1]).all()
        assert hand_ensemble.lead[2, 0] == 1.5 and np.isnan(hand_ensemble.lead[2, 1])

    def test_interarrival_matrix(self, hand_ensemble):
        waits, has = hand_ensemble.interarrival_matrix(2)
        np.testing.assert_array_equal(has, [True, False, False, True])
        np.testing.assert_allclose(waits[0], [0.5, 0.5])
        np.testing.assert_allclose(waits[3], [0.25, 0.5])

    def test_shared_horizon(self):
        with pytest.raises(ValidationError):
            PathEnsemble.from_paths([CountingPath(1.0), CountingPath(2.0)])

    def test_count_summary(self, hand_ensemble):
        rows = count_summary(hand_ensemble, [1.0, 3.0])
        t, mean, var, se = rows[1]
        assert t == 3.0 and mean == pytest.approx(2.25)
        assert var == pytest.approx(np.var([3, 0, 1, 5], ddof=1))
        assert se == pytest.approx(math.sqrt(var / 4))


class TestEstimators:

    def test_empty_paths_give_certain_zero(self, empty_ensemble):
        est = empirical_fdd(empty_ensemble, FddQuery((1.0,), (0,)))
        assert est.value == 1.0 and est.std_error == 0.0 and est.num_paths == 10
        assert est.z_score(1.0) == 0.0

    def test_fdd_on_hand_paths(self, hand_ensemble):
        est = empirical_fdd(hand_ensemble, FddQuery((1.0, 3.0), (0, 1)))
        assert est.value == 0.25

    def test_joint_interarrival_cdf(self, hand_ensemble):
        est = empirical_joint_interarrival_cdf(hand_ensemble, [0.5, 0.5])
        # path 0 has waits (0.5, 0.5), path 3 (0.25, 0.5); paths 1 and 2 are misses
        assert est.value == 0.5

    def test_joint_interarrival_undecidable(self, hand_ensemble):
        with pytest.raises(UndecidableEventError):
            empirical_joint_interarrival_cdf(hand_ensemble, [2.0, 2.0])

    def test_identity_residuals_vanish_for_poisson(self, exp_kernel):
        ensemble = simulate(_plan(exp_kernel, Gamma(3.0, 2.0), num_paths=6000, seed=3, horizon=4.0))
        estimates = [
            empirical_multinomial_residual(ensemble, (1.0, 2.0), (1, 3)),
            empirical_splitting_residual(ensemble, 1.0, 2.0, 1, 2),
            empirical_markov_residual(ensemble, (1.0, 2.0, 3.0), (1, 2, 3)),
        ]
        for est in estimates:
            assert est.std_error > 0
            assert abs(est.z_score(0.0)) < 4.5

    def test_identity_residuals_break_for_erlang(self, erlang_kernel):
        ensemble = simulate(_plan(erlang_kernel, Gamma(4.0, 1.0), num_paths=6000, seed=4, horizon=2.0))
        est = empirical_splitting_residual(ensemble, 1.0, 2.0, 1, 2)
        assert abs(est.z_score(0.0)) > 5.0

    @pytest.mark.slow
    def test_erlang_median_z_grows_when_paths_double(self, erlang_kernel):
        def median_z(num_paths):
            zs = []
            for seed in range(10):
                ensemble = simulate(_plan(erlang_kernel, Gamma(4.0, 1.0), num_paths=num_paths,
                                          seed=700 + seed, horizon=2.0))
                zs.append(abs(empirical_splitting_residual(ensemble, 1.0, 2.0, 1, 2).z_score(0.0)))
            return float(np.median(zs))

        assert median_z(6000) >= median_z(3000)


class TestConditionalPoissonCheck:

    def test_accepts_exponential_paths(self, exp_kernel, gamma_law):
        ensemble = simulate(_plan(exp_kernel, gamma_law, num_paths=3000, seed=21))
        report = conditional_poisson_check(ensemble, exp_kernel, k=4)
        assert report.num_used == 3000 and report.num_skipped == 0
        assert report.passed(alpha=1e-4)

    def test_rejects_erlang_paths_read_as_exponential(self, exp_kernel, erlang_kernel, gamma_law):
        ensemble = simulate(_plan(erlang_kernel, gamma_law, num_paths=2000, seed=22))
        assert conditional_poisson_check(ensemble, erlang_kernel, k=4).passed(alpha=1e-4)
        report = conditional_poisson_check(ensemble, exp_kernel, k=4, rate_fn=lambda th: th)
        assert report.ks_pvalue < 1e-6

    def test_skips_paths_without_theta(self, hand_ensemble, exp_kernel):
        report = conditional_poisson_check(hand_ensemble, exp_kernel, k=2)
        assert report.num_used == 2 and report.num_skipped == 2

    def test_needs_recorded_theta(self, exp_kernel):
        ensemble = PathEnsemble.from_paths([CountingPath(5.0, (1.0, 2.0, 3.0))] * 3, lead_interarrivals=2)
        with pytest.raises(ValidationError):
            conditional_poisson_check(ensemble, exp_kernel, k=2)

    def test_k_at_least_two(self, hand_ensemble, exp_kernel):
        with pytest.raises(ValidationError):
            conditional_poisson_check(hand_ensemble, exp_kernel, k=1)

    def test_serial_test_does_not_gate(self):
        report = sim.ConditionalPoissonReport(0.01, 0.5, 0.3, 1e-9, 100, 0, 4)
        assert report.passed(alpha=0.01)
        assert not report.serial_passed(alpha=0.01)

    def test_theta_bins_partition_the_paths(self, exp_kernel, gamma_law):
        ensemble = simulate(_plan(exp_kernel, gamma_law, num_paths=2000, seed=23))
        report = conditional_poisson_check(ensemble, exp_kernel, k=4, num_bins=5)
        assert len(report.bins) == 5
        assert sum(b.num_paths for b in report.bins) == 2000
        assert all(a.upper == b.lower for a, b in zip(report.bins, report.bins[1:]))
        assert all(b.ks_pvalue > 1e-4 for b in report.bins)
        assert report.to_dict()["bins"][0]["num_paths"] == report.bins[0].num_paths

    def test_constant_theta_gives_one_bin(self, exp_kernel):
        ensemble = simulate(_plan(exp_kernel, Degenerate(2.0), num_paths=500, seed=24))
        report = conditional_poisson_check(ensemble, exp_kernel, k=4, num_bins=4)
        assert len(report.bins) == 1
        assert report.bins[0].num_paths == 500

    def test_bins_locate_a_theta_dependent_misfit(self, exp_kernel, gamma_law):
        ensemble = simulate(_plan(exp_kernel, gamma_law, num_paths=4000, seed=25))
        cut = gamma_law.ppf(0.75)
        report = conditional_poisson_check(ensemble, exp_kernel, k=4, num_bins=4,
                                           rate_fn=lambda th: 1.6 * th if th > cut else th)
        worst = report.worst_bin()
        assert worst.ks_pvalue < 1e-6
        assert worst.lower == pytest.approx(cut, abs=0.05)
        assert report.bins[0].ks_pvalue > 1e-4

    def test_num_bins_validated(self, hand_ensemble, exp_kernel):
        with pytest.raises(ValidationError):
            conditional_poisson_check(hand_ensemble, exp_kernel, k=2, num_bins=0)

    def test_power_grows_with_sample_size(self, exp_kernel, gamma_law):
        # rate misread by 15%: rarely caught at 100 paths, always at 2000
        def rejection_rate(num_paths):
            rejected = 0
            for seed in range(20):
                ensemble = simulate(_plan(exp_kernel, gamma_law, num_paths=num_paths, seed=500 + seed))
                report = conditional_poisson_check(ensemble, exp_kernel, k=4, rate_fn=lambda th: 1.15 * th)
                rejected += not report.passed(alpha=0.01)
            return rejected / 20

        small, large = rejection_rate(100), rejection_rate(2000)
        assert large > small
        assert large >= 0.95

    @pytest.mark.slow
    @pytest.mark.parametrize("name", ["example_3_2", "example_3_3"])
    def test_pass_rate_over_repetitions(self, name):
        config = ScenarioConfig.load(name).with_overrides(paths=1000)
        scenario = Scenario.from_config(config)
        k = config.battery.pit_interarrivals
        passes = 0
        for rep in range(100):
            plan = dataclasses.replace(scenario.plan, master_seed=9000 + rep)
            report = conditional_poisson_check(simulate(plan), scenario.kernel, k)
            passes += report.passed(alpha=0.01)
        # about one rejection per 100 expected at the 1% level
        assert passes >= 96


class TestCompareCountLaws:

    def test_identical_samples(self):
        counts = np.repeat(np.arange(6), 50)
        result = compare_count_laws(counts, counts)
        assert result.statistic == pytest.approx(0.0) and result.pvalue == pytest.approx(1.0)

    def test_single_category(self):
        result = compare_count_laws(np.zeros(20, dtype=int), np.zeros(30, dtype=int))
        assert result.categories == 1 and result.pvalue == 1.0

    def test_shifted_samples_rejected(self, rng):
        result = compare_count_laws(rng.poisson(2.0, 3000), rng.poisson(3.0, 3000))
        assert result.pvalue < 1e-6


class TestPathDump:

    def test_round_trip(self, tmp_path, exp_kernel, gamma_law):
        plan = _plan(exp_kernel, gamma_law, num_paths=50)
        ensemble = simulate(plan)
        target = tmp_path / "paths.txt"
        write_path_dump(target, ensemble, plan)
        header, paths = read_path_dump(target)
        assert header["plan"] == plan.digest()
        assert int(header["seed"]) == plan.master_seed
        assert paths == ensemble.paths()

    def test_not_a_dump(self, tmp_path):
        target = tmp_path / "other.txt"
        target.write_text("1.0,2.0\n", encoding="utf-8")
        with pytest.raises(ValidationError):
            read_path_dump(target)

    def test_path_count_mismatch(self, tmp_path, exp_kernel, gamma_law):
        plan = _plan(exp_kernel, gamma_law, num_paths=5)
        target = tmp_path / "paths.txt"
        write_path_dump(target, simulate(plan), plan)
        lines = target.read_text(encoding="utf-8").splitlines()
        target.write_text("\n".join(lines[:-1]) + "\n", encoding="utf-8")
        with pytest.raises(ValidationError):
            read_path_dump(target)
