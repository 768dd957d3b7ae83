"""
Exact finite-dimensional laws and identity residuals.

Three evaluators share one interface -- probability(query) and a mixing
attribute holding the law of the rate:

    PoissonFdd(theta)            fixed rate
    MppQuadratureFdd(law)        Poisson law integrated against any mixing law
    PolyaFdd(shape, rate)        closed form for Gamma mixing

Every probability is assembled as a logarithm (log-gamma for factorials)
and exponentiated once at the end. Residuals are LHS - RHS.
"""

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .errors import ConfigError, ValidationError
from .mixing import (Degenerate, Gamma, InverseGamma, MixingLaw, PushforwardLaw,
                     Transform, get_transform)
from .models import FddQuery
from .quadrature import DEFAULT_SETTINGS, QuadratureSettings, integrate_against

logger = logging.getLogger(__name__)

TAIL_TOLERANCE = 1e-12


def _log_grid_factor(q: FddQuery) -> float:
    """sum_j kappa_j log(Delta_j) - log(kappa_j!), summed exactly."""
    terms = []
    for delta, k in zip(q.deltas, q.increments):
        if k:
            terms.append(k * math.log(delta))
            terms.append(-float(special.gammaln(k + 1)))
    return math.fsum(terms)


def _clip(p: float) -> float:
    return min(1.0, max(0.0, p))


def log_poisson_fdd(theta: float, q: FddQuery) -> float:
    n = q.total
    value = -theta * q.last_time + _log_grid_factor(q)
    if n:
        value += n * math.log(theta)
    return value


def poisson_fdd(theta: float, q: FddQuery) -> float:
    """prod_j Poisson(theta Delta_j)(kappa_j)."""
    if not (theta > 0 and np.isfinite(theta)):
        raise ValidationError(f"Poisson rate must be positive and finite, got {theta}")
    return _clip(math.exp(log_poisson_fdd(theta, q)))


def mpp_fdd_quadrature(law: MixingLaw, q: FddQuery,
                       settings: QuadratureSettings = DEFAULT_SETTINGS,
                       with_error: bool = False):
    """Integral of poisson_fdd(theta, q) against law(d theta)."""
    n, t_m = q.total, q.last_time
    grid = _log_grid_factor(q)

    def log_integrand(theta):
        if theta <= 0:
            return -math.inf
        value = -theta * t_m + grid
        if n:
            value += n * math.log(theta)
        return value

    value, error = integrate_against(law, log_integrand, settings, breakpoints=[n / t_m])
    value = _clip(value)
    return (value, error) if with_error else value


def polya_fdd_closed(shape: float, rate: float, q: FddQuery) -> float:
    """Negative-binomial closed form of the Gamma(shape, rate) mixture."""
    if not (shape > 0 and rate > 0):
        raise ValidationError("Polya parameters must be positive")
    n, t_m = q.total, q.last_time
    log_p = (_log_grid_factor(q)
             + special.gammaln(shape + n) - special.gammaln(shape)
             + shape * math.log(rate) - (shape + n) * math.log(rate + t_m))
    return _clip(math.exp(log_p))


# ---------------------------------------------------------------------------
# Evaluators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PoissonFdd:
    theta: float

    def __post_init__(self):
        if not (self.theta > 0 and np.isfinite(self.theta)):
            raise ValidationError(f"Poisson rate must be positive and finite, got {self.theta}")

    @property
    def name(self):
        return f"poisson({self.theta:g})"

    @property
    def mixing(self) -> MixingLaw:
        return Degenerate(self.theta)

    def probability(self, q: FddQuery) -> float:
        return poisson_fdd(self.theta, q)

    def probability_with_error(self, q: FddQuery):
        return self.probability(q), 0.0


@dataclass(frozen=True)
class MppQuadratureFdd:
    mixing: MixingLaw
    settings: QuadratureSettings = DEFAULT_SETTINGS

    @property
    def name(self):
        return f"quadrature({self.mixing.name})"

    def probability(self, q: FddQuery) -> float:
        return mpp_fdd_quadrature(self.mixing, q, self.settings)

    def probability_with_error(self, q: FddQuery):
        return mpp_fdd_quadrature(self.mixing, q, self.settings, with_error=True)


@dataclass(frozen=True)
class PolyaFdd:
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValidationError("Polya parameters must be positive")

    @property
    def name(self):
        return f"polya({self.shape:g},{self.rate:g})"

    @property
    def mixing(self) -> MixingLaw:
        return Gamma(self.shape, self.rate)

    def probability(self, q: FddQuery) -> float:
        return polya_fdd_closed(self.shape, self.rate, q)

    def probability_with_error(self, q: FddQuery):
        return self.probability(q), 0.0


def gamma_parameters(law: MixingLaw):
    """(shape, rate) if law is a Gamma law, else None.

    The reciprocal of InverseGamma(a, b) is Gamma(a, b).
    """
    if isinstance(law, Gamma):
        return law.shape, law.rate
    if (isinstance(law, PushforwardLaw) and law.map.name == "reciprocal"
            and isinstance(law.base, InverseGamma)):
        return law.base.shape, law.base.scale
    return None


EVALUATORS = ("quadrature", "polya", "poisson")


def make_evaluator(kind: str, law: MixingLaw, settings: QuadratureSettings = DEFAULT_SETTINGS):
    """Evaluator of the requested kind for the MPP with mixing law `law`."""
    if kind == "quadrature":
        return MppQuadratureFdd(law, settings)
    if kind == "polya":
        params = gamma_parameters(law)
        if params is None:
            raise ConfigError(f"evaluator 'polya' needs a Gamma mixing law, got {law.name}")
        return PolyaFdd(*params)
    if kind == "poisson":
        if not isinstance(law, Degenerate):
            raise ConfigError(f"evaluator 'poisson' needs a degenerate mixing law, got {law.name}")
        return PoissonFdd(law.theta)
    raise ConfigError(f"unknown evaluator {kind!r} (known: {', '.join(EVALUATORS)})")


# ---------------------------------------------------------------------------
# Identity residuals
# ---------------------------------------------------------------------------

def _check_cumulative(times, counts, min_len=1):
    times = [float(t) for t in times]
    counts = [int(c) for c in counts]
    if len(times) != len(counts) or len(times) < min_len:
        raise ValidationError(f"need matching times/counts of length >= {min_len}")
    return times, counts


def multinomial_coefficient_log(q: FddQuery) -> float:
    """log of n!/prod kappa_j! * prod (Delta_j/t_m)^kappa_j."""
    t_m = q.last_time
    terms = [float(special.gammaln(q.total + 1))]
    for delta, k in zip(q.deltas, q.increments):
        if k:
            terms.append(k * math.log(delta / t_m))
            terms.append(-float(special.gammaln(k + 1)))
    return math.fsum(terms)


def multinomial_residual(f, times: Sequence[float], counts: Sequence[int]) -> float:
    """P(increments) - multinomial(n; Delta/t_m) * P(N_{t_m} = n)."""
    times, counts = _check_cumulative(times, counts)
    q = FddQuery.from_cumulative(times, counts)
    lhs = f.probability(q)
    total = f.probability(FddQuery((q.last_time,), (q.total,)))
    return lhs - math.exp(multinomial_coefficient_log(q)) * total


def binomial_splitting_residual(f, s: float, t: float, k: int, n: int) -> float:
    """P(N_s = k, N_t - N_s = n - k) - C(n,k)(s/t)^k(1-s/t)^(n-k) P(N_t = n)."""
    if not (0 < s < t):
        raise ValidationError(f"need 0 < s < t, got s={s}, t={t}")
    if not (0 <= k <= n):
        raise ValidationError(f"need 0 <= k <= n, got k={k}, n={n}")
    lhs = f.probability(FddQuery((s, t), (k, n - k)))
    total = f.probability(FddQuery((t,), (n,)))
    log_coef = float(special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1))
    if k:
        log_coef += k * math.log(s / t)
    if n - k:
        log_coef += (n - k) * math.log1p(-s / t)
    return lhs - math.exp(log_coef) * total


def markov_queries(times: Sequence[float], counts: Sequence[int]):
    """The four events A, B, C, D of the factorization P(A)P(B) = P(C)P(D):

    A = {N_{t_j} = n_j, j <= m}, B = {N_{t_m} = n_m, N_{t_m+1} = n_m+1},
    C = {N_{t_j} = n_j, j <= m+1}, D = {N_{t_m} = n_m}.
    """
    times, counts = _check_cumulative(times, counts, min_len=2)
    m = len(times) - 1
    a = FddQuery.from_cumulative(times[:m], counts[:m])
    b = FddQuery.from_cumulative(times[m - 1:], counts[m - 1:])
    c = FddQuery.from_cumulative(times, counts)
    d = FddQuery.from_cumulative(times[m - 1:m], counts[m - 1:m])
    return a, b, c, d


def markov_factorization_residual(f, times: Sequence[float], counts: Sequence[int]) -> float:
    a, b, c, d = markov_queries(times, counts)
    return f.probability(a) * f.probability(b) - f.probability(c) * f.probability(d)


def interarrival_product_integral(law: MixingLaw, transform: Transform, waits: Sequence[float],
                                  settings: QuadratureSettings = DEFAULT_SETTINGS) -> float:
    """Integral of prod_k (1 - exp(-h(y) w_k)) against law(dy)."""
    waits = [float(w) for w in waits]
    if not waits or any(not (w > 0) for w in waits):
        raise ValidationError("waits must be a non-empty list of positive reals")
    if isinstance(transform, str):
        transform = get_transform(transform)

    def log_integrand(y):
        rate = float(transform(y))
        if not (rate > 0 and np.isfinite(rate)):
            return -math.inf
        return math.fsum(math.log(-math.expm1(-rate * w)) for w in waits)

    value, _ = integrate_against(law, log_integrand, settings)
    return _clip(value)


# ---------------------------------------------------------------------------
# Truncated sums: tails, consistency, normalization, moments
# ---------------------------------------------------------------------------

def tail_truncation_level(law: MixingLaw, t: float, tol: float = TAIL_TOLERANCE) -> int:
    """Smallest K with a certified bound P(N_t >= K) <= tol.

    With theta* the (1 - tol/2)-quantile of the law, P(N_t >= K) is at most
    P(Theta > theta*) + P(Poisson(theta* t) >= K), and the Poisson tail is
    bounded by exp(-lam) (e lam / K)^K for K > lam.
    """
    if not (t > 0 and 0 < tol < 1):
        raise ValidationError("need t > 0 and 0 < tol < 1")
    theta_star = float(law.ppf(1.0 - tol / 2.0))
    lam = max(theta_star * t, 1e-300)
    target = math.log(tol / 2.0)
    k = max(1, math.floor(lam) + 1)
    while -lam + k * (1.0 + math.log(lam) - math.log(k)) > target:
        k += 1
    return k


def kolmogorov_gap(f, q: FddQuery, t_new: float, tol: float = TAIL_TOLERANCE) -> float:
    """Refined-grid marginal minus the coarse probability.

    Inserting t_new inside the grid splits one increment into a finite sum;
    appending it after t_m sums the new increment up to a certified level.
    """
    times = list(q.times)
    if t_new in times or t_new <= 0:
        raise ValidationError(f"inserted time must be positive and new, got {t_new}")
    coarse = f.probability(q)
    terms = []
    if t_new > q.last_time:
        top = tail_truncation_level(f.mixing, t_new - q.last_time, tol)
        for extra in range(top):
            terms.append(f.probability(FddQuery(tuple(times) + (t_new,), q.increments + (extra,))))
    else:
        j = int(np.searchsorted(times, t_new))
        new_times = tuple(times[:j]) + (t_new,) + tuple(times[j:])
        kappa = q.increments[j]
        for left in range(kappa + 1):
            incs = q.increments[:j] + (left, kappa - left) + q.increments[j + 1:]
            terms.append(f.probability(FddQuery(new_times, incs)))
    return math.fsum(terms) - coarse


def normalization_gap(f, times: Sequence[float], tol: float = TAIL_TOLERANCE) -> float:
    """Sum of the fdd over all increment vectors with N_{t_m} < K, minus 1.

    Only grids with m <= 2 are supported (the sum has K^m / m! terms).
    """
    times = tuple(float(t) for t in times)
    if not 1 <= len(times) <= 2:
        raise ValidationError("normalization is checked on grids with 1 or 2 points")
    top = tail_truncation_level(f.mixing, times[-1], tol)
    terms = []
    if len(times) == 1:
        for n in range(top):
            terms.append(f.probability(FddQuery(times, (n,))))
    else:
        for n in range(top):
            for k in range(n + 1):
                terms.append(f.probability(FddQuery(times, (k, n - k))))
    return math.fsum(terms) - 1.0


@dataclass(frozen=True)
class CountMoments:
    mean: float
    variance: float
    mass: float          # probability captured by the truncated sum
    level: int


def count_moments(f, t: float, tol: float = TAIL_TOLERANCE) -> CountMoments:
    """Mean and variance of N_t from the truncated pmf."""
    top = tail_truncation_level(f.mixing, t, tol)
    probs = np.array([f.probability(FddQuery((t,), (n,))) for n in range(top)])
    ns = np.arange(top, dtype=float)
    mass = math.fsum(probs)
    mean = math.fsum(ns * probs)
    second = math.fsum(ns * ns * probs)
    return CountMoments(mean=mean, variance=second - mean * mean, mass=mass, level=top)


def polya_moments(shape: float, rate: float, t: float):
    """E[N_t] = t a/b, Var[N_t] = t a/b + t^2 a/b^2 for Gamma(a, b) mixing."""
    mean = t * shape / rate
    return mean, mean + t * t * shape / rate ** 2
