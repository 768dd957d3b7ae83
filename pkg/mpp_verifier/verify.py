"""
Equivalence suites.

A Scenario bundles the law of Theta, the transform h, the kernel, an exact
fdd evaluator for the mixed Poisson law of h(Theta), the simulation plan
and the query battery. The suites turn each of the four equivalent
characterizations into concrete checks:

    i     PIT of each path's interarrivals against Exp(density_at_origin(theta))
    ii    empirical joint interarrival CDF vs the interarrival product integral
    iii   PIT against the kernel's own CDF at h(theta)
    iv    empirical fdd vs the exact evaluator, exact identity residuals of the
          evaluator, empirical identity residuals of the simulated paths

Monte Carlo z-tests are grouped; a group passes when the share of |z| within
the threshold reaches the coverage level. Records carry a role: "check"
must pass, "control" must fail (a non-Poisson scenario has to break the
identities), "info" never gates.
"""

import csv
import hashlib
import io
import json
import logging
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import AssumptionViolation, CheckError, MppError
from .kernels import InterarrivalKernel, kernel_from_dict
from .laws import (gamma_parameters, interarrival_product_integral, make_evaluator,
                   markov_factorization_residual, multinomial_residual,
                   binomial_splitting_residual, normalization_gap, polya_fdd_closed)
from .mixing import (AssumptionReport, MixingLaw, Transform, check_assumption,
                     density_at_origin, get_transform, law_from_dict, pushforward)
from .models import FddQuery, atomic_write_text
from .rng import STREAM_BATTERY, stream
from .scenario import ScenarioConfig
from .sim import (PathEnsemble, SimulationPlan, conditional_poisson_check,
                  empirical_fdd, empirical_joint_interarrival_cdf,
                  empirical_markov_residual, empirical_multinomial_residual,
                  empirical_splitting_residual, simulate)

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
CSV_COLUMNS = ("check_id", "assertion_tag", "statistic", "threshold", "verdict")
RANDOM_QUERY_GRID = 8            # candidate times per horizon for generated queries


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------

@dataclass
class Scenario:
    config: ScenarioConfig
    base_law: MixingLaw            # law of Theta
    transform: Transform
    kernel: InterarrivalKernel
    mpp_law: MixingLaw             # law of h(Theta)
    evaluator: object
    plan: SimulationPlan
    fdd_battery: list = field(default_factory=list)

    @property
    def name(self) -> str:
        return self.config.name

    @property
    def control(self) -> bool:
        return self.config.control

    @property
    def tolerances(self):
        return self.config.tolerances

    @classmethod
    def from_config(cls, config: ScenarioConfig) -> "Scenario":
        base = law_from_dict(config.mixing)
        transform = get_transform(config.transform)
        kernel = kernel_from_dict(config.kernel, config.transform)
        mpp_law = pushforward(base, transform)
        sim = config.simulation
        plan = SimulationPlan("disintegration", kernel, base, sim.horizon, sim.num_paths,
                              sim.master_seed, lead_interarrivals=sim.lead_interarrivals)
        scenario = cls(config, base, transform, kernel, mpp_law,
                       make_evaluator(config.evaluator, mpp_law), plan)
        scenario.fdd_battery = list(config.battery.fdd) + generate_fdd_battery(
            scenario, config.battery.random_fdd_count, config.battery.random_fdd_max_points)
        return scenario


def generate_fdd_battery(scenario: Scenario, count: int, max_points: int) -> list:
    """Pre-registered random queries, a pure function of the master seed.

    Each query takes 1..max_points times from a coarse grid of the horizon
    and the increments of one path drawn from the scenario's own model on a
    stream separate from the simulated paths, so queries are typical events.
    """
    if count <= 0:
        return []
    plan = scenario.plan
    grid = np.round(np.linspace(plan.horizon / RANDOM_QUERY_GRID, plan.horizon, RANDOM_QUERY_GRID), 6)
    seen, queries = set(), []
    index = 0
    while len(queries) < count and index < 20 * count:
        rng = stream(plan.master_seed, index, STREAM_BATTERY)
        index += 1
        m = int(rng.integers(1, min(max_points, grid.size) + 1))
        times = np.sort(rng.choice(grid, size=m, replace=False))
        theta = float(plan.mixing.sample(rng))
        arrivals = np.array([])
        while arrivals.size == 0 or arrivals[-1] <= times[-1]:
            waits = plan.kernel.sample_interarrivals(theta, rng, 64)
            start = arrivals[-1] if arrivals.size else 0.0
            arrivals = np.concatenate([arrivals, start + np.cumsum(waits)])
        counts = np.searchsorted(arrivals, times, side="right")
        q = FddQuery(tuple(times.tolist()), tuple(np.diff(counts, prepend=0).tolist()))
        if q.key() not in seen:
            seen.add(q.key())
            queries.append(q)
    return queries


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else repr(x)


@dataclass
class CheckRecord:
    check_id: str
    tag: str                        # i, ii, iii, iv, assumption, rate-identity
    statistic: Optional[float]
    threshold: Optional[float]
    verdict: str                    # pass, fail, n/a
    role: str = "check"             # check, control, info
    detail: str = ""

    def to_dict(self):
        return {"check_id": self.check_id, "assertion_tag": self.tag,
                "statistic": _num(self.statistic), "threshold": _num(self.threshold),
                "verdict": self.verdict, "role": self.role, "detail": self.detail}

    @property
    def csv_id(self) -> str:
        """check_id tagged with its role unless it is a plain check."""
        return self.check_id if self.role == "check" else f"{self.check_id} [{self.role}]"


@dataclass
class VerificationReport:
    scenario: str
    records: list = field(default_factory=list)
    stamp: dict = field(default_factory=dict)

    def add(self, record: CheckRecord):
        self.records.append(record)
        return record

    def extend(self, records):
        self.records.extend(records)

    @property
    def overall(self) -> bool:
        """Every check passes and every control fails as designed."""
        gating = [r for r in self.records if r.role != "info"]
        return bool(gating) and all(
            (r.verdict == "pass") if r.role == "check" else (r.verdict == "fail") for r in gating)

    def failures(self) -> list:
        return [r.check_id for r in self.records
                if (r.role == "check" and r.verdict != "pass")
                or (r.role == "control" and r.verdict != "fail")]

    def record(self, check_id) -> Optional[CheckRecord]:
        for r in self.records:
            if r.check_id == check_id:
                return r
        return None

    def body(self) -> dict:
        return {"scenario": self.scenario,
                "overall": "pass" if self.overall else "fail",
                "records": [r.to_dict() for r in self.records]}

    def body_digest(self) -> str:
        text = json.dumps(self.body(), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def to_dict(self) -> dict:
        data = {"schema_version": REPORT_SCHEMA_VERSION, "stamp": self.stamp,
                "digest": self.body_digest()}
        data.update(self.body())
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.records:
            writer.writerow([r.csv_id, r.tag, _fmt(r.statistic), _fmt(r.threshold), r.verdict])
        return buf.getvalue()

    def to_text(self) -> str:
        rows = [("check", "tag", "role", "statistic", "threshold", "verdict")]
        rows += [(r.check_id, r.tag, r.role, _fmt(r.statistic), _fmt(r.threshold), r.verdict)
                 for r in self.records]
        widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
        lines = [f"Scenario: {self.scenario}"]
        for i, row in enumerate(rows):
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        lines.append("")
        lines.append(f"Overall: {'PASS' if self.overall else 'FAIL'}")
        failures = self.failures()
        if failures:
            lines.append(f"Failing: {', '.join(failures)}")
        return "\n".join(lines) + "\n"

    def render(self, fmt: str) -> str:
        return {"json": self.to_json, "csv": self.to_csv, "text": self.to_text}[fmt]()

    def write(self, directory: Path, stem: str, formats) -> list:
        written = []
        for fmt in formats:
            ext = "txt" if fmt == "text" else fmt
            path = Path(directory) / f"{stem}.{ext}"
            atomic_write_text(path, self.render(fmt))
            written.append(path)
        return written


def _fmt(x) -> str:
    if x is None:
        return ""
    return f"{float(x):.10g}"


def make_stamp(scenario: Scenario) -> dict:
    sim = scenario.config.simulation
    return {"version": __version__, "seed": sim.master_seed, "num_paths": sim.num_paths,
            "plan": scenario.plan.digest(), "tolerances": scenario.tolerances.to_dict()}


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------

def proportion_z(estimate, exact: float) -> float:
    """z of a frequency against a known probability (SE under the exact value)."""
    se = math.sqrt(max(exact * (1.0 - exact), 0.0) / estimate.num_paths)
    diff = estimate.value - exact
    if se > 0:
        return diff / se
    return 0.0 if diff == 0 else math.copysign(math.inf, diff)


def _z_group(report, prefix, tag, zs, role, tol):
    """Member records (info) plus one gating record for the group."""
    for check_id, z, detail in zs:
        report.add(CheckRecord(check_id, tag, z, tol.z_threshold,
                               "pass" if abs(z) <= tol.z_threshold else "fail", "info", detail))
    if not zs:
        return None
    absz = [abs(z) for _, z, _ in zs]
    if role == "control":
        worst = max(absz)
        return report.add(CheckRecord(
            f"{prefix}.control", tag, worst, tol.control_z,
            "fail" if worst > tol.control_z else "pass", "control",
            f"max |z| over {len(zs)} tests; the identity must break"))
    coverage = sum(1 for z in absz if z <= tol.z_threshold) / len(absz)
    return report.add(CheckRecord(
        f"{prefix}.coverage", tag, coverage, tol.coverage,
        "pass" if coverage >= tol.coverage else "fail", role,
        f"{len(zs)} tests at |z| <= {tol.z_threshold:g}"))


def _pit_records(prefix, tag, result, tol, role, label):
    """KS gate plus the serial-correlation test as an informational record."""
    worst = result.worst_bin()
    bins = (f", worst theta bin [{worst.lower:.4g}, {worst.upper:.4g}] p={worst.ks_pvalue:.4g} "
            f"of {len(result.bins)}") if worst is not None else ""
    gate = CheckRecord(f"{prefix}.pit", tag, result.ks_pvalue, tol.pit_alpha,
                       "pass" if result.passed(tol.pit_alpha) else "fail", role,
                       f"{label}: KS D={result.ks_statistic:.4g}{bins}, "
                       f"paths={result.num_used} skipped={result.num_skipped}")
    serial = CheckRecord(f"{prefix}.serial", tag, result.serial_pvalue, tol.pit_alpha,
                         "pass" if result.serial_passed(tol.pit_alpha) else "fail", "info",
                         f"{label}: consecutive PIT pairs r={result.serial_correlation:.4g}")
    return [gate, serial]


@contextmanager
def _guard(check_id):
    """Re-raise sub-operation errors with the check id attached."""
    try:
        yield
    except CheckError:
        raise
    except MppError as e:
        raise CheckError(check_id, e) from e


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

def run_equivalence_suite(scenario: Scenario, threads: Optional[int] = None,
                          ensemble: Optional[PathEnsemble] = None) -> VerificationReport:
    tol = scenario.tolerances
    battery = scenario.config.battery
    control = scenario.control
    mc_role = "info" if control else "check"
    identity_role = "control" if control else "check"
    report = VerificationReport(scenario.name, stamp=make_stamp(scenario))
    started = time.perf_counter()

    if ensemble is None:
        with _guard("simulate"):
            ensemble = simulate(scenario.plan, threads or scenario.config.simulation.threads)
    k = battery.pit_interarrivals
    kernel = scenario.kernel

    # i: conditional Poisson with the density-at-origin rate
    with _guard("i.pit"):
        try:
            result = conditional_poisson_check(ensemble, kernel, k,
                                               rate_fn=lambda th: density_at_origin(kernel, th),
                                               num_bins=battery.pit_bins)
            report.extend(_pit_records("i", "i", result, tol, mc_role, "Exp(density at origin)"))
        except AssumptionViolation as e:
            report.add(CheckRecord("i.pit", "i", None, tol.pit_alpha, "fail", mc_role,
                                   f"density at origin unavailable: {e}"))

    # ii: joint interarrival CDF against the product integral
    zs = []
    for j, waits in enumerate(battery.huang):
        check_id = f"ii.huang.{j}"
        with _guard(check_id):
            est = empirical_joint_interarrival_cdf(ensemble, waits)
            exact = interarrival_product_integral(scenario.base_law, scenario.transform, waits)
        zs.append((check_id, proportion_z(est, exact),
                   f"w={list(waits)} empirical={est.value:.6g} exact={exact:.10g}"))
    _z_group(report, "ii.huang", "ii", zs, mc_role, tol)

    # iii: conditional law through the kernel's own CDF
    with _guard("iii.pit"):
        result = conditional_poisson_check(ensemble, kernel, k, num_bins=battery.pit_bins)
    report.extend(_pit_records("iii", "iii", result, tol, "check", f"{kernel.describe()} CDF"))

    # iv: empirical fdd against the exact evaluator
    zs = []
    for j, q in enumerate(scenario.fdd_battery):
        check_id = f"iv.fdd.{j}"
        with _guard(check_id):
            est = empirical_fdd(ensemble, q)
            exact = scenario.evaluator.probability(q)
        zs.append((check_id, proportion_z(est, exact),
                   f"times={list(q.times)} increments={list(q.increments)} "
                   f"empirical={est.value:.6g} exact={exact:.10g}"))
    _z_group(report, "iv.fdd", "iv", zs, mc_role, tol)

    # iv: exact identities of the evaluator
    f = scenario.evaluator
    exact_cases = []
    for j, (times, counts) in enumerate(battery.multinomial):
        exact_cases.append((f"iv.exact.multinomial.{j}",
                            lambda t=times, c=counts: multinomial_residual(f, t, c),
                            f"times={list(times)} counts={list(counts)}"))
    for j, (s, t, kk, n) in enumerate(battery.splitting):
        exact_cases.append((f"iv.exact.splitting.{j}",
                            lambda s=s, t=t, kk=kk, n=n: binomial_splitting_residual(f, s, t, kk, n),
                            f"s={s:g} t={t:g} k={kk} n={n}"))
    for j, (times, counts) in enumerate(battery.markov):
        exact_cases.append((f"iv.exact.markov.{j}",
                            lambda t=times, c=counts: markov_factorization_residual(f, t, c),
                            f"times={list(times)} counts={list(counts)}"))
    exact_cases.append(("iv.exact.normalization",
                        lambda: normalization_gap(f, (scenario.plan.horizon,)),
                        f"sum over n of P(N_{scenario.plan.horizon:g} = n) - 1"))
    params = gamma_parameters(scenario.mpp_law)
    if params is not None and scenario.config.evaluator == "quadrature" and scenario.fdd_battery:
        exact_cases.append(("iv.exact.closed_form",
                            lambda: max(abs(f.probability(q) - polya_fdd_closed(*params, q))
                                        for q in scenario.fdd_battery),
                            "max |quadrature - negative binomial closed form| over the fdd battery"))
    for check_id, compute, detail in exact_cases:
        with _guard(check_id):
            value = compute()
        report.add(CheckRecord(check_id, "iv", value, tol.exact,
                               "pass" if abs(value) <= tol.exact else "fail", "check", detail))

    # iv: the same identities on the simulated paths
    zs = []
    for j, (times, counts) in enumerate(battery.multinomial):
        check_id = f"iv.identity.multinomial.{j}"
        with _guard(check_id):
            est = empirical_multinomial_residual(ensemble, times, counts)
        zs.append((check_id, est.z_score(0.0), f"residual={est.value:.6g} se={est.std_error:.3g}"))
    for j, (s, t, kk, n) in enumerate(battery.splitting):
        check_id = f"iv.identity.splitting.{j}"
        with _guard(check_id):
            est = empirical_splitting_residual(ensemble, s, t, kk, n)
        zs.append((check_id, est.z_score(0.0), f"residual={est.value:.6g} se={est.std_error:.3g}"))
    for j, (times, counts) in enumerate(battery.markov):
        check_id = f"iv.identity.markov.{j}"
        with _guard(check_id):
            est = empirical_markov_residual(ensemble, times, counts)
        zs.append((check_id, est.z_score(0.0), f"residual={est.value:.6g} se={est.std_error:.3g}"))
    _z_group(report, "iv.identity", "iv", zs, identity_role, tol)

    logger.info(f"[VERIFY] {scenario.name}: equivalence suite "
                f"{'pass' if report.overall else 'FAIL'} ({len(report.records)} records, "
                f"{time.perf_counter() - started:.2f}s)")
    return report


def run_assumption_suite(scenario: Scenario) -> AssumptionReport:
    """Assumption checker on a quantile grid of the law of Theta."""
    with _guard("assumption"):
        return check_assumption(scenario.kernel, scenario.base_law,
                                scenario.config.assumptions.grid_size)


def assumption_records(report: AssumptionReport, control: bool = False) -> list:
    """Report entries as check records. In a control scenario positivity must
    fail and the other entries are informational."""
    records = []
    for e in report.entries:
        if e.passed is None:
            role, verdict = "info", "n/a"
        else:
            verdict = "pass" if e.passed else "fail"
            if control:
                role = "control" if e.name == "positivity" else "info"
            else:
                role = "check"
        records.append(CheckRecord(f"assumption.{e.name}", "assumption", e.value, None,
                                   verdict, role, e.detail))
    return records


def run_rate_identity_check(scenario: Scenario) -> CheckRecord:
    """max |density_at_origin(theta) - h(theta)| over a quantile grid."""
    tol = scenario.tolerances
    kernel = scenario.kernel
    if not kernel.is_exponential:
        return CheckRecord("rate-identity", "rate-identity", None, tol.rate_identity, "n/a", "info",
                           f"not applicable to {kernel.describe()}")
    grid = [float(t) for t in scenario.base_law.quantile_grid(scenario.config.assumptions.rate_identity_grid)
            if not kernel.in_null_set(t)]
    worst = 0.0
    with _guard("rate-identity"):
        try:
            for theta in grid:
                worst = max(worst, abs(density_at_origin(kernel, theta) - kernel.rate(theta)))
        except AssumptionViolation as e:
            return CheckRecord("rate-identity", "rate-identity", None, tol.rate_identity, "fail",
                               "check", str(e))
    return CheckRecord("rate-identity", "rate-identity", worst, tol.rate_identity,
                       "pass" if worst < tol.rate_identity else "fail", "check",
                       f"max deviation over {len(grid)} grid points")


def run_full_verification(scenario: Scenario, threads: Optional[int] = None) -> VerificationReport:
    """Equivalence suite plus assumption and rate-identity records."""
    report = run_equivalence_suite(scenario, threads=threads)
    report.extend(assumption_records(run_assumption_suite(scenario), scenario.control))
    report.add(run_rate_identity_check(scenario))
    logger.info(f"[VERIFY] {scenario.name}: overall {'pass' if report.overall else 'FAIL'}")
    return report
