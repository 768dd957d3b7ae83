"""
Mixing laws (the distribution of the random rate), measurable transforms,
pushforwards through a transform, and the density-at-origin map of an
interarrival kernel together with the numeric assumption checker.

All laws are immutable. Sampling always takes a numpy Generator owned by
the caller -- one stream per worker, nothing shared.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy import special, stats

from .errors import (AssumptionViolation, ConfigError, DomainError, MppError,
                     UnsupportedOperationError)
from .quadrature import DEFAULT_SETTINGS, QuadratureSettings, integrate_against

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Mixing laws
# ---------------------------------------------------------------------------

class MixingLaw:
    """Common interface of every mixing law.

    Continuous laws implement log_density / cdf / ppf. Atomic laws return
    their (theta, weight) pairs from atoms() and refuse density().
    """

    name = "law"
    is_atomic = False

    @property
    def support(self) -> tuple:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def log_density(self, theta: float) -> float:
        raise UnsupportedOperationError(f"{self.name} has no density")

    def density(self, theta: float) -> float:
        """Lebesgue density; 0 outside the support."""
        if self.is_atomic:
            raise UnsupportedOperationError(f"{self.name} law has no density")
        return float(math.exp(self.log_density(float(theta))))

    def cdf(self, theta: float) -> float:
        raise NotImplementedError

    def ppf(self, p: float) -> float:
        raise NotImplementedError

    def mean(self) -> float:
        raise NotImplementedError

    def variance(self) -> float:
        raise NotImplementedError

    def atoms(self) -> Optional[list]:
        return None

    def positive_mass(self) -> float:
        """Mass of (0, inf)."""
        return 1.0 - self.cdf(0.0)

    def quantile_grid(self, n: int) -> np.ndarray:
        """Midpoint quantiles (i + 1/2)/n; atom locations for atomic laws."""
        if n < 1:
            raise ValueError("grid size must be >= 1")
        atoms = self.atoms()
        if atoms is not None:
            return np.array(sorted({theta for theta, _ in atoms}))
        probs = (np.arange(n) + 0.5) / n
        return np.array([self.ppf(p) for p in probs])

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Degenerate(MixingLaw):
    theta: float

    name = "degenerate"
    is_atomic = True

    def __post_init__(self):
        if not (np.isfinite(self.theta) and self.theta > 0):
            raise ValueError(f"degenerate theta must be positive, got {self.theta}")

    @property
    def support(self):
        return (self.theta, self.theta)

    def sample(self, rng, size=None):
        if size is None:
            return float(self.theta)
        return np.full(size, float(self.theta))

    def cdf(self, theta):
        return 1.0 if theta >= self.theta else 0.0

    def ppf(self, p):
        return float(self.theta)

    def mean(self):
        return float(self.theta)

    def variance(self):
        return 0.0

    def atoms(self):
        return [(float(self.theta), 1.0)]

    def to_dict(self):
        return {"law": self.name, "theta": self.theta}


@dataclass(frozen=True)
class Discrete(MixingLaw):
    """Finitely many positive atoms with weights summing to one."""
    points: tuple

    name = "discrete"
    is_atomic = True

    def __post_init__(self):
        pts = tuple((float(t), float(w)) for t, w in self.points)
        if not pts:
            raise ValueError("discrete law needs at least one atom")
        if any(not (t > 0 and np.isfinite(t)) for t, _ in pts):
            raise ValueError("discrete atoms must be positive and finite")
        if any(w < 0 for _, w in pts):
            raise ValueError("discrete weights must be >= 0")
        if abs(math.fsum(w for _, w in pts) - 1.0) > 1e-12:
            raise ValueError("discrete weights must sum to 1 (within 1e-12)")
        object.__setattr__(self, "points", pts)

    @property
    def support(self):
        thetas = [t for t, _ in self.points]
        return (min(thetas), max(thetas))

    def sample(self, rng, size=None):
        thetas = np.array([t for t, _ in self.points])
        weights = np.array([w for _, w in self.points])
        idx = rng.choice(len(thetas), size=size, p=weights / weights.sum())
        return float(thetas[idx]) if size is None else thetas[idx]

    def cdf(self, theta):
        return min(1.0, math.fsum(w for t, w in self.points if t <= theta))

    def ppf(self, p):
        acc = 0.0
        for t, w in sorted(self.points):
            acc += w
            if acc >= p - 1e-15:
                return t
        return max(t for t, _ in self.points)

    def mean(self):
        return math.fsum(t * w for t, w in self.points)

    def variance(self):
        mu = self.mean()
        return math.fsum(w * (t - mu) ** 2 for t, w in self.points)

    def atoms(self):
        return list(self.points)

    def to_dict(self):
        return {"law": self.name, "atoms": [[t, w] for t, w in self.points]}


@dataclass(frozen=True)
class Gamma(MixingLaw):
    """Gamma(shape, rate): density rate^a x^(a-1) e^(-rate x) / Gamma(a)."""
    shape: float
    rate: float

    name = "gamma"

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("gamma shape and rate must be positive")

    @cached_property
    def _dist(self):
        return stats.gamma(a=self.shape, scale=1.0 / self.rate)

    @property
    def support(self):
        return (0.0, math.inf)

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, 1.0 / self.rate, size=size)

    def log_density(self, theta):
        if theta <= 0:
            return -math.inf
        a, b = self.shape, self.rate
        return a * math.log(b) - special.gammaln(a) + (a - 1.0) * math.log(theta) - b * theta

    def cdf(self, theta):
        return float(self._dist.cdf(theta))

    def ppf(self, p):
        return float(self._dist.ppf(p))

    def mean(self):
        return self.shape / self.rate

    def variance(self):
        return self.shape / self.rate ** 2

    def to_dict(self):
        return {"law": self.name, "shape": self.shape, "rate": self.rate}


@dataclass(frozen=True)
class InverseGamma(MixingLaw):
    """InverseGamma(shape, scale): law of scale / G with G ~ Gamma(shape, 1)."""
    shape: float
    scale: float

    name = "inverse_gamma"

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("inverse gamma shape and scale must be positive")

    @cached_property
    def _dist(self):
        return stats.invgamma(a=self.shape, scale=self.scale)

    @property
    def support(self):
        return (0.0, math.inf)

    def sample(self, rng, size=None):
        return self.scale / rng.gamma(self.shape, 1.0, size=size)

    def log_density(self, theta):
        if theta <= 0:
            return -math.inf
        a, b = self.shape, self.scale
        return a * math.log(b) - special.gammaln(a) - (a + 1.0) * math.log(theta) - b / theta

    def cdf(self, theta):
        return float(self._dist.cdf(theta))

    def ppf(self, p):
        return float(self._dist.ppf(p))

    def mean(self):
        return self.scale / (self.shape - 1.0) if self.shape > 1 else math.inf

    def variance(self):
        if self.shape <= 2:
            return math.inf
        return self.scale ** 2 / ((self.shape - 1.0) ** 2 * (self.shape - 2.0))

    def to_dict(self):
        return {"law": self.name, "shape": self.shape, "scale": self.scale}


@dataclass(frozen=True)
class LogNormal(MixingLaw):
    """exp(X) with X ~ Normal(mu, sigma2)."""
    mu: float
    sigma2: float

    name = "lognormal"

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("lognormal sigma2 must be positive")

    @property
    def sigma(self):
        return math.sqrt(self.sigma2)

    @cached_property
    def _dist(self):
        return stats.lognorm(s=self.sigma, scale=math.exp(self.mu))

    @property
    def support(self):
        return (0.0, math.inf)

    def sample(self, rng, size=None):
        return rng.lognormal(self.mu, self.sigma, size=size)

    def log_density(self, theta):
        if theta <= 0:
            return -math.inf
        z = math.log(theta) - self.mu
        return -math.log(theta) - 0.5 * (LOG_2PI + math.log(self.sigma2)) - z * z / (2.0 * self.sigma2)

    def cdf(self, theta):
        return float(self._dist.cdf(theta))

    def ppf(self, p):
        return float(self._dist.ppf(p))

    def mean(self):
        return math.exp(self.mu + 0.5 * self.sigma2)

    def variance(self):
        return math.expm1(self.sigma2) * math.exp(2.0 * self.mu + self.sigma2)

    def to_dict(self):
        return {"law": self.name, "mu": self.mu, "sigma2": self.sigma2}


@dataclass(frozen=True)
class Normal(MixingLaw):
    """Normal(mu, sigma2). Only meaningful as a base law pushed through a
    positive transform (it puts mass on (-inf, 0])."""
    mu: float
    sigma2: float

    name = "normal"

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("normal sigma2 must be positive")

    @property
    def sigma(self):
        return math.sqrt(self.sigma2)

    @cached_property
    def _dist(self):
        return stats.norm(loc=self.mu, scale=self.sigma)

    @property
    def support(self):
        return (-math.inf, math.inf)

    def sample(self, rng, size=None):
        return rng.normal(self.mu, self.sigma, size=size)

    def log_density(self, theta):
        z = theta - self.mu
        return -0.5 * (LOG_2PI + math.log(self.sigma2)) - z * z / (2.0 * self.sigma2)

    def cdf(self, theta):
        return float(self._dist.cdf(theta))

    def ppf(self, p):
        return float(self._dist.ppf(p))

    def mean(self):
        return float(self.mu)

    def variance(self):
        return float(self.sigma2)

    def to_dict(self):
        return {"law": self.name, "mu": self.mu, "sigma2": self.sigma2}


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Transform:
    """A measurable map h with (optional) inverse on its image.

    monotone is +1 (increasing), -1 (decreasing) or 0 (unknown). domain is
    an open interval (lo, hi).
    """
    name: str
    func: Callable = field(repr=False, compare=False)
    inverse: Optional[Callable] = field(default=None, repr=False, compare=False)
    inverse_derivative: Optional[Callable] = field(default=None, repr=False, compare=False)
    domain: tuple = (-math.inf, math.inf)
    monotone: int = 0

    def __call__(self, theta):
        return self.func(theta)

    def h(self, theta):
        return self.func(theta)

    def contains(self, theta) -> bool:
        lo, hi = self.domain
        return lo < theta < hi

    def image_of(self, interval: tuple) -> tuple:
        """Image of an interval under a monotone transform."""
        lo, hi = interval
        with np.errstate(divide="ignore", over="ignore"):
            a, b = self._limit(lo), self._limit(hi)
        return (min(a, b), max(a, b))

    def _limit(self, x):
        if x == 0 and self.domain[0] == 0:
            return self.func(np.float64(0.0))   # reciprocal -> inf
        return float(self.func(np.float64(x)))

    def max_inverse_error(self, image_points) -> float:
        """Largest relative |h(inverse(y)) - y| over the given image points."""
        if self.inverse is None:
            raise UnsupportedOperationError(f"transform {self.name} has no inverse")
        y = np.asarray(image_points, dtype=float)
        back = self.func(self.inverse(y))
        return float(np.max(np.abs(back - y) / np.maximum(1.0, np.abs(y))))


def _reciprocal(x):
    with np.errstate(divide="ignore"):
        return 1.0 / x


TRANSFORMS = {
    "identity": Transform("identity", lambda x: x, lambda y: y,
                          lambda y: np.ones_like(y), monotone=1),
    "reciprocal": Transform("reciprocal", _reciprocal, _reciprocal,
                            lambda y: -1.0 / (y * y), domain=(0.0, math.inf), monotone=-1),
    "exp": Transform("exp", np.exp, np.log, lambda y: 1.0 / y, monotone=1),
}


def get_transform(name: str) -> Transform:
    try:
        return TRANSFORMS[name]
    except KeyError:
        raise ConfigError(f"unknown transform {name!r} (known: {', '.join(sorted(TRANSFORMS))})")


# ---------------------------------------------------------------------------
# Pushforward
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PushforwardLaw(MixingLaw):
    """Law of map(Theta) for Theta ~ base, with map monotone and invertible."""
    base: MixingLaw
    map: Transform

    @property
    def name(self):
        return f"{self.map.name}({self.base.name})"

    @cached_property
    def support(self):
        return self.map.image_of(self.base.support)

    def sample(self, rng, size=None):
        return self.map(self.base.sample(rng, size=size))

    def log_density(self, y):
        lo, hi = self.support
        if not (lo < y < hi):
            return -math.inf
        x = float(self.map.inverse(y))
        jac = abs(float(self.map.inverse_derivative(y)))
        if jac == 0:
            return -math.inf
        return self.base.log_density(x) + math.log(jac)

    def cdf(self, y):
        lo, hi = self.support
        if y <= lo:
            return 0.0
        if y >= hi:
            return 1.0
        x = float(self.map.inverse(y))
        if self.map.monotone > 0:
            return self.base.cdf(x)
        return 1.0 - self.base.cdf(x)

    def ppf(self, p):
        if self.map.monotone > 0:
            return float(self.map(self.base.ppf(p)))
        return float(self.map(self.base.ppf(1.0 - p)))

    def mean(self):
        return expectation(self.base, lambda x: float(self.map(x)))

    def variance(self):
        mu = self.mean()
        return expectation(self.base, lambda x: (float(self.map(x)) - mu) ** 2)

    def to_dict(self):
        return {"law": self.name, "base": self.base.to_dict(), "map": self.map.name}


def pushforward(base: MixingLaw, map: Transform) -> MixingLaw:
    """Law of map(Theta), Theta ~ base.

    Atomic laws map atom by atom. Continuous laws need a monotone map with
    an inverse whose domain covers the base support.
    """
    if map.name == "identity":
        return base
    if base.is_atomic:
        mapped = {}
        for theta, w in base.atoms():
            if not map.contains(theta):
                raise DomainError(f"transform {map.name} undefined at atom {theta}")
            y = float(map(theta))
            mapped[y] = mapped.get(y, 0.0) + w
        if len(mapped) == 1:
            return Degenerate(next(iter(mapped)))
        return Discrete(tuple(sorted(mapped.items())))

    lo, hi = base.support
    dlo, dhi = map.domain
    if lo < dlo or hi > dhi:
        raise DomainError(f"transform {map.name} (domain {map.domain}) is undefined on part "
                          f"of the {base.name} support {base.support}")
    if map.inverse is None or map.monotone == 0:
        raise UnsupportedOperationError(f"transform {map.name} is not a monotone invertible map")
    return PushforwardLaw(base, map)


def expectation(law: MixingLaw, func: Callable[[float], float],
                settings: QuadratureSettings = DEFAULT_SETTINGS) -> float:
    """E[func(Theta)] for a nonnegative func, by quadrature against the law."""
    def log_func(theta):
        value = func(theta)
        return math.log(value) if value > 0 else -math.inf

    value, _ = integrate_against(law, log_func, settings)
    return value


def expected_rate(law: MixingLaw, transform: Transform) -> float:
    """E[h(Theta)]."""
    return expectation(law, lambda theta: float(transform(theta)))


# ---------------------------------------------------------------------------
# Registry (scenario schema)
# ---------------------------------------------------------------------------

LAW_FIELDS = {
    "degenerate": (Degenerate, ("theta",)),
    "discrete": (Discrete, ("atoms",)),
    "gamma": (Gamma, ("shape", "rate")),
    "inverse_gamma": (InverseGamma, ("shape", "scale")),
    "lognormal": (LogNormal, ("mu", "sigma2")),
    "normal": (Normal, ("mu", "sigma2")),
}


def law_from_dict(data: dict, where: str = "mixing") -> MixingLaw:
    """Build a law from its config section; unknown keys are rejected."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    kind = data.get("law")
    if kind not in LAW_FIELDS:
        raise ConfigError(f"{where}.law: unknown law {kind!r} (known: {', '.join(sorted(LAW_FIELDS))})")
    cls, fields = LAW_FIELDS[kind]
    unknown = sorted(set(data) - set(fields) - {"law"})
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)} for law {kind!r}")
    missing = [f for f in fields if f not in data]
    if missing:
        raise ConfigError(f"{where}: missing key(s) {', '.join(missing)} for law {kind!r}")
    try:
        if kind == "discrete":
            return Discrete(tuple((t, w) for t, w in data["atoms"]))
        return cls(*[float(data[f]) for f in fields])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}")


# ---------------------------------------------------------------------------
# Density at the origin and the assumption checker
# ---------------------------------------------------------------------------

ORIGIN_LEVELS = range(10, 21)         # t = 2^-k
ORIGIN_TOLERANCE = 1e-8


def density_at_origin(kernel, theta: float, tol: float = ORIGIN_TOLERANCE) -> float:
    """lim_{t -> 0} F'_{h(theta)}(t), by Richardson extrapolation.

    F(t)/t at dyadic t has an O(t) error; each Richardson column removes
    one order. Converged when two successive diagonal entries differ by
    less than tol. A nonpositive or non-converged limit is an assumption
    violation.
    """
    ts = [2.0 ** -k for k in ORIGIN_LEVELS]
    table = []
    previous = None
    for i, t in enumerate(ts):
        row = [kernel.cdf(theta, t) / t]
        for j in range(1, i + 1):
            factor = 2.0 ** j
            row.append(row[j - 1] + (row[j - 1] - table[i - 1][j - 1]) / (factor - 1.0))
        table.append(row)
        current = row[-1]
        if previous is not None and abs(current - previous) < tol:
            if current <= tol:
                raise AssumptionViolation(
                    f"density at origin is not positive for theta={theta} (limit {current:.3g})",
                    theta=theta, estimate=current)
            return float(current)
        previous = current
    raise AssumptionViolation(
        f"density-at-origin extrapolation did not converge for theta={theta}",
        theta=theta, estimate=previous)


@dataclass
class AssumptionEntry:
    name: str
    passed: Optional[bool]          # None = informational, no threshold
    value: Optional[float] = None
    detail: str = ""

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "value": self.value, "detail": self.detail}


@dataclass
class AssumptionReport:
    """Outcome of the numeric assumption checks on a theta grid."""
    kernel: str
    law: str
    grid_size: int
    entries: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries if e.passed is not None)

    def entry(self, name) -> Optional[AssumptionEntry]:
        for e in self.entries:
            if e.name == name:
                return e
        return None

    def failed(self) -> list:
        return [e.name for e in self.entries if e.passed is False]

    def to_dict(self):
        return {"kernel": self.kernel, "law": self.law, "grid_size": self.grid_size,
                "passed": self.passed, "entries": [e.to_dict() for e in self.entries]}


def injectivity_gap(values, resolution: float = 1e-9):
    """(injective, smallest relative gap) of density-at-origin values on a grid.

    The values are sorted first, so the verdict does not depend on grid order.
    """
    values = np.sort(np.asarray(list(values), dtype=float))
    if values.size < 2:
        return values.size == 1, None
    gaps = np.diff(values) / np.maximum(1.0, np.abs(values[1:]))
    min_gap = float(gaps.min())
    return min_gap > resolution, min_gap


def _time_grid(kernel, theta, n=200):
    scale = kernel.mean(theta)
    return scale * np.logspace(-6, 2, n)


def check_assumption(kernel, law: MixingLaw, grid_size: int = 64,
                     resolution: float = 1e-9) -> AssumptionReport:
    """Positivity, injectivity and domination of the density-at-origin map
    on a quantile grid of the law, plus smoothness of F and integrability
    of the dominating function. Violations are entries, not exceptions.

    Injectivity is only certified on the finite grid.
    """
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    report = AssumptionReport(kernel=kernel.describe(), law=law.name, grid_size=grid_size)
    thetas = [float(t) for t in law.quantile_grid(grid_size) if not kernel.in_null_set(t)]

    limits = {}
    failures = []
    for theta in thetas:
        try:
            limits[theta] = density_at_origin(kernel, theta)
        except AssumptionViolation as e:
            failures.append(theta)
            logger.debug(f"[ASSUME] {e}")
    report.entries.append(AssumptionEntry(
        "positivity", not failures and bool(thetas),
        value=min(limits.values()) if limits else None,
        detail=f"{len(failures)} of {len(thetas)} grid points without a positive limit"))

    injective, min_gap = injectivity_gap(limits.values(), resolution)
    if min_gap is not None:
        injective = injective and not failures
        detail = f"min relative gap {min_gap:.3g} over {len(limits)} points"
    else:
        injective = injective and len(thetas) == 1
        detail = f"{len(limits)} usable grid point(s)"
    report.entries.append(AssumptionEntry("injectivity", injective, value=min_gap, detail=detail))

    worst_ratio = 0.0
    worst_fd = 0.0
    for theta in thetas:
        ts = _time_grid(kernel, theta)
        dens = kernel.density(theta, ts)
        bound = kernel.dominating_bound(theta)
        worst_ratio = max(worst_ratio, float(dens.max()) / bound)
        # F continuously differentiable: density agrees with a central difference of F
        step = ts * 1e-5
        fd = (kernel.cdf(theta, ts + step) - kernel.cdf(theta, ts - step)) / (2.0 * step)
        worst_fd = max(worst_fd, float(np.max(np.abs(fd - dens) / np.maximum(1.0, dens))))
    report.entries.append(AssumptionEntry(
        "domination", bool(thetas) and worst_ratio <= 1.0 + 1e-9, value=worst_ratio,
        detail=f"max sup_t F'(t) / C = {worst_ratio:.6g} ({kernel.dominating})"))
    report.entries.append(AssumptionEntry(
        "differentiability", worst_fd <= 1e-6, value=worst_fd,
        detail="max relative gap between density and finite-difference derivative of F"))

    try:
        integral = expectation(law, kernel.dominating_bound)
        report.entries.append(AssumptionEntry(
            "integrability", None, value=integral,
            detail="E[C(h(Theta))] by quadrature (finite = integrable)"))
    except MppError as e:
        report.entries.append(AssumptionEntry("integrability", False, detail=f"quadrature failed: {e}"))

    logger.info(f"[ASSUME] {report.kernel} / {law.name}: "
                f"{'pass' if report.passed else 'FAIL ' + ','.join(report.failed())}")
    return report
