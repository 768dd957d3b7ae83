"""Equivalence suites, report aggregation and rendering."""

import json

import numpy as np
import pytest

from mpp_verifier.errors import CheckError, QuadratureError
from mpp_verifier.mixing import AssumptionEntry, AssumptionReport
from mpp_verifier.scenario import ScenarioConfig, Tolerances
from mpp_verifier.sim import ConditionalPoissonReport, EmpiricalEstimate
from mpp_verifier.verify import (CSV_COLUMNS, CheckRecord, Scenario, VerificationReport,
                                 _guard, _pit_records, _z_group, assumption_records, generate_fdd_battery,
                                 proportion_z, run_assumption_suite, run_equivalence_suite,
                                 run_full_verification, run_rate_identity_check)


@pytest.fixture
def small_scenario(scenario_dict):
    return Scenario.from_config(ScenarioConfig.from_dict(scenario_dict))


@pytest.fixture
def control_scenario():
    config = ScenarioConfig.load("erlang_control").with_overrides(paths=6000)
    return Scenario.from_config(config)


class TestScenario:

    def test_from_config(self, small_scenario):
        assert small_scenario.name == "gamma_small"
        assert small_scenario.plan.route == "disintegration"
        assert small_scenario.plan.num_paths == 4000
        assert small_scenario.evaluator.name == "quadrature(gamma)"
        assert len(small_scenario.fdd_battery) == 3

    def test_random_battery_is_reproducible(self, scenario_dict):
        scenario_dict["battery"]["random_fdd"] = {"count": 12, "max_points": 3}
        first = Scenario.from_config(ScenarioConfig.from_dict(scenario_dict))
        second = Scenario.from_config(ScenarioConfig.from_dict(scenario_dict))
        assert first.fdd_battery == second.fdd_battery
        generated = first.fdd_battery[3:]
        assert len(generated) == 12
        assert len({q.key() for q in generated}) == 12
        assert all(1 <= q.m <= 3 and q.last_time <= 2.0 for q in generated)

    def test_random_battery_follows_seed(self, small_scenario, scenario_dict):
        scenario_dict["simulation"]["master_seed"] = 8
        other = Scenario.from_config(ScenarioConfig.from_dict(scenario_dict))
        assert generate_fdd_battery(small_scenario, 10, 2) != generate_fdd_battery(other, 10, 2)

    def test_no_random_queries(self, small_scenario):
        assert generate_fdd_battery(small_scenario, 0, 2) == []


class TestAggregation:

    def _report(self, *records):
        report = VerificationReport("demo")
        report.extend(records)
        return report

    def test_overall_needs_gating_records(self):
        assert not self._report().overall
        assert not self._report(CheckRecord("x", "iv", 1.0, 2.0, "pass", "info")).overall

    def test_control_must_fail(self):
        check = CheckRecord("a", "iv", 0.0, 1e-8, "pass")
        broken = CheckRecord("b.control", "iv", 9.0, 5.0, "fail", "control")
        assert self._report(check, broken).overall
        intact = CheckRecord("b.control", "iv", 1.0, 5.0, "pass", "control")
        report = self._report(check, intact)
        assert not report.overall
        assert report.failures() == ["b.control"]

    def test_coverage_group(self):
        tol = Tolerances()
        report = VerificationReport("demo")
        zs = [(f"g.{j}", z, "") for j, z in enumerate([0.1] * 19 + [3.5])]
        gate = _z_group(report, "g", "iv", zs, "check", tol)
        assert gate.check_id == "g.coverage"
        assert gate.statistic == pytest.approx(0.95)
        assert gate.verdict == "pass"
        assert report.record("g.19").verdict == "fail" and report.record("g.19").role == "info"
        assert report.overall

    def test_coverage_group_fails_below_level(self):
        report = VerificationReport("demo")
        zs = [(f"g.{j}", z, "") for j, z in enumerate([0.1] * 9 + [3.5])]
        assert _z_group(report, "g", "iv", zs, "check", Tolerances()).verdict == "fail"

    def test_control_group(self):
        report = VerificationReport("demo")
        gate = _z_group(report, "g", "iv", [("g.0", 0.5, ""), ("g.1", -7.0, "")], "control", Tolerances())
        assert gate.check_id == "g.control"
        assert gate.statistic == 7.0 and gate.verdict == "fail"
        assert report.overall

    def test_empty_group(self):
        report = VerificationReport("demo")
        assert _z_group(report, "g", "iv", [], "check", Tolerances()) is None
        assert report.records == []

    def test_proportion_z_uses_exact_variance(self):
        est = EmpiricalEstimate(0.0, 0.0, 10000)
        assert proportion_z(est, 1e-4) == pytest.approx(-1.0, rel=1e-3)
        assert proportion_z(EmpiricalEstimate(1.0, 0.0, 10), 1.0) == 0.0

    def test_serial_record_is_informational(self):
        result = ConditionalPoissonReport(0.01, 0.4, 0.2, 1e-9, 500, 0, 4)
        gate, serial = _pit_records("iii", "iii", result, Tolerances(), "check", "label")
        assert (gate.check_id, gate.statistic, gate.verdict, gate.role) == ("iii.pit", 0.4, "pass", "check")
        assert (serial.check_id, serial.verdict, serial.role) == ("iii.serial", "fail", "info")
        report = VerificationReport("demo")
        report.extend([gate, serial])
        assert report.overall

    def test_guard_attaches_check_id(self):
        with pytest.raises(CheckError) as info:
            with _guard("iv.fdd.3"):
                raise QuadratureError("no convergence", value=0.1, error=1.0)
        assert info.value.check_id == "iv.fdd.3"
        assert isinstance(info.value.cause, QuadratureError)


class TestRendering:

    @pytest.fixture
    def report(self):
        report = VerificationReport("demo", stamp={"version": "x", "seed": 1})
        report.add(CheckRecord("iv.exact.multinomial.0", "iv", 1.5e-13, 1e-8, "pass"))
        report.add(CheckRecord("rate-identity", "rate-identity", None, 1e-6, "n/a", "info"))
        return report

    def test_json(self, report):
        data = json.loads(report.to_json())
        assert data["schema_version"] == 1
        assert data["overall"] == "pass"
        assert data["digest"] == report.body_digest()
        assert data["records"][1]["statistic"] is None
        assert "time" not in json.dumps(data["stamp"])

    def test_csv(self, report):
        lines = report.to_csv().splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        assert lines[1] == "iv.exact.multinomial.0,iv,1.5e-13,1e-08,pass"
        assert lines[2] == "rate-identity [info],rate-identity,,1e-06,n/a"

    def test_text(self, report):
        text = report.to_text()
        assert text.startswith("Scenario: demo")
        assert "Overall: PASS" in text

    def test_write(self, report, tmp_path):
        written = report.write(tmp_path, "demo_verify", ["json", "csv", "text"])
        assert [p.name for p in written] == ["demo_verify.json", "demo_verify.csv", "demo_verify.txt"]
        assert (tmp_path / "demo_verify.csv").read_text(encoding="utf-8") == report.to_csv()

    def test_csv_marks_roles(self):
        report = VerificationReport("demo")
        report.add(CheckRecord("iv.identity.control", "iv", 7.0, 5.0, "fail", "control"))
        report.add(CheckRecord("iv.fdd.3", "iv", 3.5, 3.0, "fail", "info"))
        lines = report.to_csv().splitlines()
        assert lines[1] == "iv.identity.control [control],iv,7,5,fail"
        assert lines[2] == "iv.fdd.3 [info],iv,3.5,3,fail"

    def test_digest_ignores_stamp(self, report):
        before = report.body_digest()
        report.stamp["seed"] = 2
        assert report.body_digest() == before


class TestEquivalenceSuite:

    def test_poisson_mixture_passes(self, small_scenario):
        report = run_equivalence_suite(small_scenario)
        assert report.overall, report.to_text()
        tags = {r.tag for r in report.records}
        assert tags == {"i", "ii", "iii", "iv"}
        for check_id in ("i.pit", "iii.pit", "i.serial", "iii.serial", "ii.huang.coverage", "iv.fdd.coverage",
                         "iv.identity.coverage", "iv.exact.normalization", "iv.exact.closed_form"):
            assert report.record(check_id) is not None, check_id
        for r in report.records:
            if r.check_id.startswith("iv.exact."):
                assert abs(r.statistic) <= 1e-8, r.check_id

    def test_deterministic(self, small_scenario):
        first = run_equivalence_suite(small_scenario)
        second = run_equivalence_suite(small_scenario, threads=2)
        assert first.to_json() == second.to_json()

    def test_control_breaks_identities(self, control_scenario):
        report = run_equivalence_suite(control_scenario)
        gate = report.record("iv.identity.control")
        assert gate.role == "control"
        assert gate.verdict == "fail"
        assert gate.statistic > 5.0
        # the density at origin of an Erlang kernel vanishes
        assert report.record("i.pit").verdict == "fail"
        assert report.record("i.pit").role == "info"
        # the kernel's own CDF still describes the simulated paths
        assert report.record("iii.pit").statistic > 1e-4
        for r in report.records:
            if r.check_id.startswith("iv.exact."):
                assert r.verdict == "pass", r.check_id

    def test_control_without_flag_fails(self):
        config = ScenarioConfig.load("erlang_control").with_overrides(paths=3000)
        config.control = False
        report = run_equivalence_suite(Scenario.from_config(config))
        assert not report.overall
        assert report.record("iv.identity.coverage").verdict == "fail"


class TestAssumptionSuite:

    def test_exponential_scenario(self):
        scenario = Scenario.from_config(ScenarioConfig.load("inverse_gamma_reciprocal"))
        records = assumption_records(run_assumption_suite(scenario))
        by_id = {r.check_id: r for r in records}
        assert by_id["assumption.positivity"].verdict == "pass"
        assert by_id["assumption.integrability"].role == "info"
        assert by_id["assumption.integrability"].verdict == "n/a"
        record = run_rate_identity_check(scenario)
        assert record.verdict == "pass" and record.statistic < 1e-6

    def test_control_roles(self):
        report = AssumptionReport("Erlang2(h=identity)", "gamma", 4, [
            AssumptionEntry("positivity", False),
            AssumptionEntry("injectivity", False),
            AssumptionEntry("domination", True, 0.9),
            AssumptionEntry("integrability", None, 4.0),
        ])
        records = {r.check_id: r for r in assumption_records(report, control=True)}
        assert records["assumption.positivity"].role == "control"
        assert records["assumption.injectivity"].role == "info"
        assert records["assumption.integrability"].verdict == "n/a"
        plain = {r.check_id: r for r in assumption_records(report)}
        assert plain["assumption.positivity"].role == "check"

    def test_rate_identity_not_applicable_to_erlang(self, control_scenario):
        record = run_rate_identity_check(control_scenario)
        assert record.verdict == "n/a" and record.role == "info"


@pytest.mark.slow
def test_full_verification_of_normal_scenario():
    config = ScenarioConfig.load("normal_exp").with_overrides(paths=4000)
    report = run_full_verification(Scenario.from_config(config))
    assert report.record("rate-identity").verdict == "pass"
    assert report.record("assumption.positivity").verdict == "pass"
    exact = [r for r in report.records if r.check_id.startswith("iv.exact.")]
    assert exact and all(r.verdict == "pass" for r in exact)
    assert np.isfinite(report.record("iv.fdd.coverage").statistic)
