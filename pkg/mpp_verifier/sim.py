"""
Path simulation and empirical estimators.

A SimulationPlan fully determines every path: path i draws from its own
counter-based stream (rng.stream(master_seed, i)), first theta, then
interarrivals in fixed blocks, so a path never depends on the worker that
produced it. Many paths are stored together in a PathEnsemble (flat event
array plus offsets) and every estimator works on the ensemble vectorized.
"""

import hashlib
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import special, stats

from .errors import (ExplosionError, OutOfRangeError, UndecidableEventError,
                     ValidationError)
from .kernels import InterarrivalKernel
from .laws import markov_queries, multinomial_coefficient_log
from .mixing import MixingLaw
from .models import CountingPath, FddQuery, atomic_write_text
from .rng import STREAM_PATHS, stream

logger = logging.getLogger(__name__)

ROUTES = ("disintegration", "direct")
BLOCK_SIZE = 64                  # interarrivals drawn per block
MAX_EVENTS = 10_000_000          # per path
CHUNK_SIZE = 2048                # paths per worker task
DUMP_MAGIC = "# mpp_verifier path dump v1"


@dataclass(frozen=True)
class SimulationPlan:
    route: str
    kernel: InterarrivalKernel
    mixing: Optional[MixingLaw]
    horizon: float
    num_paths: int
    master_seed: int
    direct_theta: Optional[float] = None
    lead_interarrivals: int = 4

    def __post_init__(self):
        if self.route not in ROUTES:
            raise ValidationError(f"unknown route {self.route!r} (known: {', '.join(ROUTES)})")
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ValidationError(f"horizon must be positive, got {self.horizon}")
        if int(self.num_paths) != self.num_paths or self.num_paths < 1:
            raise ValidationError(f"num_paths must be an integer >= 1, got {self.num_paths}")
        if int(self.master_seed) != self.master_seed or self.master_seed < 0:
            raise ValidationError(f"master_seed must be an integer >= 0, got {self.master_seed}")
        if self.lead_interarrivals < 0:
            raise ValidationError("lead_interarrivals must be >= 0")
        if self.route == "direct":
            if self.direct_theta is None:
                raise ValidationError("direct route needs direct_theta")
            self.kernel.rate(self.direct_theta)      # rejects rate 0
        elif self.mixing is None:
            raise ValidationError("disintegration route needs a mixing law")

    def digest(self) -> str:
        """Short hash identifying everything that determines the paths."""
        data = {
            "route": self.route,
            "kernel": self.kernel.to_dict(),
            "transform": self.kernel.transform.name,
            "mixing": self.mixing.to_dict() if self.mixing is not None else None,
            "direct_theta": self.direct_theta,
            "horizon": self.horizon,
            "num_paths": self.num_paths,
            "master_seed": self.master_seed,
            "lead_interarrivals": self.lead_interarrivals,
        }
        text = json.dumps(data, sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class SimulatedPath:
    path: CountingPath
    theta: float
    lead: tuple          # first interarrivals, not truncated at the horizon


def sample_path(plan: SimulationPlan, index: int) -> SimulatedPath:
    """Path `index` of the plan; a pure function of (master_seed, index)."""
    if not 0 <= index < plan.num_paths:
        raise ValidationError(f"path index {index} outside 0..{plan.num_paths - 1}")
    rng = stream(plan.master_seed, index, STREAM_PATHS)
    if plan.route == "direct":
        theta = float(plan.direct_theta)
    else:
        theta = float(plan.mixing.sample(rng))

    blocks = []
    total = 0.0
    drawn = 0
    while total <= plan.horizon or drawn < plan.lead_interarrivals:
        waits = plan.kernel.sample_interarrivals(theta, rng, BLOCK_SIZE)
        blocks.append(waits)
        drawn += BLOCK_SIZE
        total += float(waits.sum())
        if drawn > MAX_EVENTS:
            raise ExplosionError(f"path {index}: more than {MAX_EVENTS} events before horizon "
                                 f"{plan.horizon} (theta={theta})")
    waits = np.concatenate(blocks)
    arrivals = np.cumsum(waits)
    events = arrivals[arrivals <= plan.horizon]
    return SimulatedPath(CountingPath(plan.horizon, tuple(events.tolist())), theta,
                         tuple(waits[:plan.lead_interarrivals].tolist()))


# ---------------------------------------------------------------------------
# Ensemble
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EmpiricalEstimate:
    """Monte Carlo mean with its standard error. For frequency estimates the
    value is a probability; residual estimates may be negative."""
    value: float
    std_error: float
    num_paths: int

    def z_score(self, reference: float) -> float:
        diff = self.value - reference
        if self.std_error > 0:
            return diff / self.std_error
        return 0.0 if diff == 0 else math.copysign(math.inf, diff)

    def to_dict(self):
        return {"value": self.value, "std_error": self.std_error, "num_paths": self.num_paths}


def _proportion(hits: np.ndarray) -> EmpiricalEstimate:
    n = int(hits.size)
    p = float(np.count_nonzero(hits)) / n
    return EmpiricalEstimate(p, math.sqrt(p * (1.0 - p) / n), n)


def _sample_mean(values: np.ndarray) -> EmpiricalEstimate:
    n = int(values.size)
    se = float(np.std(values, ddof=1)) / math.sqrt(n) if n > 1 else 0.0
    return EmpiricalEstimate(float(np.mean(values)), se, n)


class PathEnsemble:
    """Many paths on a common horizon with their thetas and lead interarrivals.

    thetas is NaN and lead rows are padded with NaN when the paths were not
    simulated here (e.g. read back from a dump).
    """

    def __init__(self, horizon: float, thetas, events, offsets, lead):
        self.horizon = float(horizon)
        self.thetas = np.asarray(thetas, dtype=float)
        self.events = np.asarray(events, dtype=float)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        lead = np.asarray(lead, dtype=float)
        self.lead = lead if lead.ndim == 2 else lead.reshape(len(self.thetas), -1)
        if self.offsets.size != self.thetas.size + 1:
            raise ValidationError("offsets must have one entry more than thetas")

    @classmethod
    def from_simulated(cls, horizon, simulated: Sequence[SimulatedPath]):
        width = max((len(s.lead) for s in simulated), default=0)
        lead = np.full((len(simulated), width), np.nan)
        for i, s in enumerate(simulated):
            lead[i, :len(s.lead)] = s.lead
        counts = [s.path.count for s in simulated]
        offsets = np.concatenate([[0], np.cumsum(counts)])
        events = np.concatenate([np.asarray(s.path.events) for s in simulated]) if simulated else []
        return cls(horizon, [s.theta for s in simulated], events, offsets, lead)

    @classmethod
    def from_paths(cls, paths: Sequence[CountingPath], thetas=None, lead_interarrivals: int = 0):
        if not paths:
            raise ValidationError("ensemble needs at least one path")
        horizon = paths[0].horizon
        if any(p.horizon != horizon for p in paths):
            raise ValidationError("all paths in an ensemble share one horizon")
        thetas = [math.nan] * len(paths) if thetas is None else list(thetas)
        simulated = []
        for p, th in zip(paths, thetas):
            waits = np.diff(np.asarray(p.events), prepend=0.0)[:lead_interarrivals]
            simulated.append(SimulatedPath(p, th, tuple(waits.tolist())))
        ensemble = cls.from_simulated(horizon, simulated)
        if lead_interarrivals and ensemble.lead.shape[1] < lead_interarrivals:
            pad = np.full((len(paths), lead_interarrivals - ensemble.lead.shape[1]), np.nan)
            ensemble = cls(horizon, ensemble.thetas, ensemble.events, ensemble.offsets,
                           np.hstack([ensemble.lead, pad]))
        return ensemble

    @property
    def num_paths(self) -> int:
        return int(self.thetas.size)

    @property
    def event_counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def path(self, i: int) -> CountingPath:
        return CountingPath(self.horizon, tuple(self.events[self.offsets[i]:self.offsets[i + 1]].tolist()))

    def paths(self):
        return [self.path(i) for i in range(self.num_paths)]

    def counts_at(self, t: float) -> np.ndarray:
        """N_t for every path."""
        if not (0 <= t <= self.horizon):
            raise OutOfRangeError(f"query time {t} outside [0, {self.horizon}]")
        hits = np.concatenate([[0], np.cumsum(self.events <= t)])
        return hits[self.offsets[1:]] - hits[self.offsets[:-1]]

    def increments(self, times: Sequence[float]) -> np.ndarray:
        """(num_paths, m) matrix of increments over the grid."""
        times = np.asarray(times, dtype=float)
        if times.size == 0 or times[0] <= 0 or np.any(np.diff(times) <= 0):
            raise ValidationError("grid must be positive and strictly increasing")
        counts = np.column_stack([self.counts_at(t) for t in times])
        return np.diff(counts, axis=1, prepend=0)

    def interarrival_matrix(self, r: int):
        """First r observed interarrivals per path and a mask of paths with >= r events."""
        has = self.event_counts >= r
        out = np.full((self.num_paths, r), np.nan)
        starts = self.offsets[:-1][has]
        prev = np.zeros(starts.size)
        for k in range(r):
            cur = self.events[starts + k]
            out[has, k] = cur - prev
            prev = cur
        return out, has


def _simulate_chunk(plan, start, stop):
    return [sample_path(plan, i) for i in range(start, stop)]


def simulate(plan: SimulationPlan, threads: int = 1) -> PathEnsemble:
    """All paths of the plan. Identical output for every thread count."""
    if threads < 1:
        raise ValidationError(f"threads must be >= 1, got {threads}")
    bounds = [(s, min(s + CHUNK_SIZE, plan.num_paths)) for s in range(0, plan.num_paths, CHUNK_SIZE)]
    started = time.perf_counter()
    if threads == 1 or len(bounds) == 1:
        chunks = [_simulate_chunk(plan, s, e) for s, e in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads, thread_name_prefix="mpp-sim") as pool:
            chunks = list(pool.map(lambda b: _simulate_chunk(plan, *b), bounds))
    simulated = [p for chunk in chunks for p in chunk]
    ensemble = PathEnsemble.from_simulated(plan.horizon, simulated)
    logger.info(f"[SIM] {plan.num_paths} paths ({plan.route}, {plan.kernel.describe()}) "
                f"horizon={plan.horizon:g} events={ensemble.events.size} "
                f"in {time.perf_counter() - started:.2f}s threads={threads}")
    return ensemble


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def _matches(ensemble: PathEnsemble, q: FddQuery) -> np.ndarray:
    return np.all(ensemble.increments(q.times) == np.asarray(q.increments), axis=1)


def empirical_fdd(ensemble: PathEnsemble, q: FddQuery) -> EmpiricalEstimate:
    """Fraction of paths whose increments equal q's, with binomial SE."""
    return _proportion(_matches(ensemble, q))


def empirical_joint_interarrival_cdf(ensemble: PathEnsemble, waits: Sequence[float]) -> EmpiricalEstimate:
    """Fraction of paths with W_k <= w_k for all k <= r.

    Decidable only when horizon >= sum(w): a path that satisfies the event
    has T_r <= sum(w), so paths with fewer than r events count as misses.
    """
    waits = np.asarray(waits, dtype=float)
    if waits.size == 0 or np.any(waits <= 0):
        raise ValidationError("waits must be a non-empty list of positive reals")
    if ensemble.horizon < waits.sum():
        raise UndecidableEventError(f"horizon {ensemble.horizon} < sum of waits {waits.sum():g}")
    observed, has = ensemble.interarrival_matrix(waits.size)
    hits = np.zeros(ensemble.num_paths, dtype=bool)
    hits[has] = np.all(observed[has] <= waits, axis=1)
    return _proportion(hits)


@dataclass(frozen=True)
class ThetaBin:
    """KS outcome for the paths whose theta falls in one quantile bin."""
    lower: float
    upper: float
    num_paths: int
    ks_pvalue: float

    def to_dict(self):
        return {"lower": self.lower, "upper": self.upper, "num_paths": self.num_paths,
                "ks_pvalue": self.ks_pvalue}


@dataclass(frozen=True)
class ConditionalPoissonReport:
    ks_statistic: float
    ks_pvalue: float
    serial_correlation: float
    serial_pvalue: float
    num_used: int
    num_skipped: int
    k: int
    bins: tuple = ()

    def passed(self, alpha: float = 0.01) -> bool:
        """Gate on the pooled KS test only."""
        return self.ks_pvalue > alpha

    def serial_passed(self, alpha: float = 0.01) -> bool:
        return self.serial_pvalue > alpha

    def worst_bin(self) -> Optional[ThetaBin]:
        return min(self.bins, key=lambda b: b.ks_pvalue) if self.bins else None

    def to_dict(self):
        return {"ks_statistic": self.ks_statistic, "ks_pvalue": self.ks_pvalue,
                "serial_correlation": self.serial_correlation, "serial_pvalue": self.serial_pvalue,
                "num_used": self.num_used, "num_skipped": self.num_skipped, "k": self.k,
                "bins": [b.to_dict() for b in self.bins]}


def _theta_bins(thetas: np.ndarray, u: np.ndarray, num_bins: int) -> tuple:
    """Split paths at theta quantiles; tied edges (atomic laws) collapse."""
    edges = np.unique(np.quantile(thetas, np.linspace(0.0, 1.0, num_bins + 1)))
    if edges.size < 2:
        return (ThetaBin(float(edges[0]), float(edges[0]), int(thetas.size),
                         float(stats.kstest(u.ravel(), "uniform").pvalue)),)
    index = np.clip(np.searchsorted(edges, thetas, side="right") - 1, 0, edges.size - 2)
    bins = []
    for b in range(edges.size - 1):
        selected = index == b
        if not selected.any():
            continue
        bins.append(ThetaBin(float(edges[b]), float(edges[b + 1]), int(np.count_nonzero(selected)),
                             float(stats.kstest(u[selected].ravel(), "uniform").pvalue)))
    return tuple(bins)


def conditional_poisson_check(ensemble: PathEnsemble, kernel: InterarrivalKernel, k: int = 4,
                              rate_fn=None, num_bins: int = 4) -> ConditionalPoissonReport:
    """PIT of each path's first k interarrivals under its own theta.

    u = F_{h(theta_i)}(w) with the kernel's CDF, or u = 1 - exp(-rate_fn(theta_i) w)
    when rate_fn is given. Pooled u are tested for uniformity (KS) and
    consecutive pairs (u1, u2), (u3, u4), ... for correlation. The KS test is
    repeated within num_bins quantile bins of theta.
    """
    if k < 2:
        raise ValidationError("k must be >= 2 (the serial test needs pairs)")
    if num_bins < 1:
        raise ValidationError(f"num_bins must be >= 1, got {num_bins}")
    if k > ensemble.lead.shape[1]:
        usable = np.zeros(ensemble.num_paths, dtype=bool)
    else:
        usable = ~np.isnan(ensemble.lead[:, :k]).any(axis=1) & ~np.isnan(ensemble.thetas)
    skipped = int(ensemble.num_paths - np.count_nonzero(usable))
    if not usable.any():
        raise ValidationError(f"no path has {k} recorded interarrivals and a recorded theta")

    thetas = ensemble.thetas[usable]
    waits = ensemble.lead[usable, :k]
    if rate_fn is None:
        rates = np.array([kernel.rate(th) for th in thetas])
        u = kernel.cdf_from_rate(rates[:, None], waits)
    else:
        rates = np.array([float(rate_fn(th)) for th in thetas])
        u = -np.expm1(-rates[:, None] * waits)

    ks = stats.kstest(u.ravel(), "uniform")
    pairs = u[:, : 2 * (k // 2)].reshape(-1, 2)
    corr = stats.pearsonr(pairs[:, 0], pairs[:, 1])
    report = ConditionalPoissonReport(float(ks.statistic), float(ks.pvalue),
                                      float(corr[0]), float(corr[1]),
                                      int(np.count_nonzero(usable)), skipped, k,
                                      _theta_bins(thetas, u, num_bins))
    logger.debug(f"[SIM] PIT {kernel.describe()}: KS={report.ks_statistic:.4g} "
                 f"p={report.ks_pvalue:.3g} serial p={report.serial_pvalue:.3g} "
                 f"bins={len(report.bins)} skipped={skipped}")
    return report


def empirical_multinomial_residual(ensemble: PathEnsemble, times, counts) -> EmpiricalEstimate:
    """Mean of 1_A - c 1_B with A the increment event and B = {N_{t_m} = n}."""
    q = FddQuery.from_cumulative(times, counts)
    coef = math.exp(multinomial_coefficient_log(q))
    a = _matches(ensemble, q)
    b = ensemble.counts_at(q.last_time) == q.total
    return _sample_mean(a.astype(float) - coef * b.astype(float))


def empirical_splitting_residual(ensemble: PathEnsemble, s, t, k, n) -> EmpiricalEstimate:
    if not (0 < s < t):
        raise ValidationError(f"need 0 < s < t, got s={s}, t={t}")
    if not (0 <= k <= n):
        raise ValidationError(f"need 0 <= k <= n, got k={k}, n={n}")
    log_coef = float(special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1))
    if k:
        log_coef += k * math.log(s / t)
    if n - k:
        log_coef += (n - k) * math.log1p(-s / t)
    a = _matches(ensemble, FddQuery((s, t), (k, n - k)))
    b = ensemble.counts_at(t) == n
    return _sample_mean(a.astype(float) - math.exp(log_coef) * b.astype(float))


def empirical_markov_residual(ensemble: PathEnsemble, times, counts) -> EmpiricalEstimate:
    """P(A)P(B) - P(C)P(D) from frequencies; SE by the delta method."""
    indicators = np.column_stack([_matches(ensemble, q).astype(float)
                                  for q in markov_queries(times, counts)])
    a, b, c, d = indicators.mean(axis=0)
    n = ensemble.num_paths
    grad = np.array([b, a, -d, -c])
    var = float(grad @ np.cov(indicators, rowvar=False, ddof=1) @ grad) / n if n > 1 else 0.0
    return EmpiricalEstimate(float(a * b - c * d), math.sqrt(max(var, 0.0)), n)


@dataclass(frozen=True)
class CountComparison:
    statistic: float
    pvalue: float
    categories: int


def compare_count_laws(counts_a, counts_b, min_tail: int = 10) -> CountComparison:
    """Chi-square homogeneity test of two samples of counts.

    Values above the largest v with at least min_tail pooled observations
    >= v are merged into one tail category.
    """
    a = np.asarray(counts_a, dtype=int)
    b = np.asarray(counts_b, dtype=int)
    pooled = np.concatenate([a, b])
    values = np.unique(pooled)
    cap = values[0]
    for v in values:
        if np.count_nonzero(pooled >= v) >= min_tail:
            cap = v
    a, b = np.minimum(a, cap), np.minimum(b, cap)
    cats = np.arange(pooled.min(), cap + 1)
    table = np.array([[np.count_nonzero(a == c) for c in cats],
                      [np.count_nonzero(b == c) for c in cats]])
    table = table[:, table.sum(axis=0) > 0]
    if table.shape[1] < 2:
        return CountComparison(0.0, 1.0, int(table.shape[1]))
    chi2, p, _, _ = stats.chi2_contingency(table)
    return CountComparison(float(chi2), float(p), int(table.shape[1]))


def count_summary(ensemble: PathEnsemble, times: Sequence[float]) -> list:
    """Rows of (time, mean N_t, variance N_t, standard error of the mean)."""
    rows = []
    n = ensemble.num_paths
    for t in times:
        counts = ensemble.counts_at(t).astype(float)
        var = float(np.var(counts, ddof=1)) if n > 1 else 0.0
        rows.append((float(t), float(counts.mean()), var, math.sqrt(var / n)))
    return rows


# ---------------------------------------------------------------------------
# Path dump
# ---------------------------------------------------------------------------

def write_path_dump(path: Path, ensemble: PathEnsemble, plan: SimulationPlan):
    """One line per path, comma-separated event times (repr precision)."""
    lines = [f"{DUMP_MAGIC} plan={plan.digest()} seed={plan.master_seed} "
             f"horizon={ensemble.horizon!r} paths={ensemble.num_paths}"]
    for i in range(ensemble.num_paths):
        chunk = ensemble.events[ensemble.offsets[i]:ensemble.offsets[i + 1]]
        lines.append(",".join(repr(float(e)) for e in chunk))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_path_dump(path: Path):
    """(header fields, list of CountingPath)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(DUMP_MAGIC):
        raise ValidationError(f"{path}: not a path dump")
    header = dict(item.split("=", 1) for item in lines[0][len(DUMP_MAGIC):].split())
    horizon = float(header["horizon"])
    paths = [CountingPath(horizon, tuple(float(x) for x in line.split(",") if x))
             for line in lines[1:]]
    if len(paths) != int(header["paths"]):
        raise ValidationError(f"{path}: header says {header['paths']} paths, found {len(paths)}")
    return header, paths
