"""
Integration against a mixing law.

Atomic laws are finite weighted sums. Continuous laws are integrated by
adaptive Gauss-Kronrod subdivision (QUADPACK via scipy) on the interval
between two extreme quantiles, so the discarded mass is known exactly.
Integrands are supplied as logarithms and combined with the law's log
density before exponentiation.
"""

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import QuadratureError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuadratureSettings:
    """Tolerances and truncation for mixture integrals."""
    rtol: float = 1e-10
    atol: float = 1e-14
    lower_tail: float = 1e-14     # integrate from q(lower_tail) ...
    upper_tail: float = 1e-14     # ... up to q(1 - upper_tail)
    limit: int = 400              # max subintervals

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("quadrature tolerances must be positive")
        if not (0 < self.lower_tail < 0.5 and 0 < self.upper_tail < 0.5):
            raise ValueError("tail truncation levels must lie in (0, 0.5)")
        if self.limit < 1:
            raise ValueError("quadrature limit must be >= 1")

    @property
    def discarded_mass(self) -> float:
        return self.lower_tail + self.upper_tail


DEFAULT_SETTINGS = QuadratureSettings()

# Always split at these quantiles; long tails get their own subintervals.
ANCHOR_QUANTILES = (1e-10, 1e-6, 1e-3, 0.1, 0.5, 0.9, 1 - 1e-3, 1 - 1e-6, 1 - 1e-10)


def integration_bounds(law, settings: QuadratureSettings = DEFAULT_SETTINGS):
    lo = float(law.ppf(settings.lower_tail))
    hi = float(law.ppf(1.0 - settings.upper_tail))
    return lo, hi


def integrate_against(law, log_integrand: Callable[[float], float],
                      settings: QuadratureSettings = DEFAULT_SETTINGS,
                      breakpoints: Sequence[float] = ()):
    """Return (value, error_estimate) of the integral of exp(log_integrand) dlaw."""
    atoms = law.atoms()
    if atoms is not None:
        total = math.fsum(w * math.exp(log_integrand(theta)) for theta, w in atoms)
        return total, 0.0

    lo, hi = integration_bounds(law, settings)

    def integrand(theta):
        log_value = log_integrand(theta) + law.log_density(theta)
        if log_value == -np.inf or np.isnan(log_value):
            return 0.0
        return math.exp(log_value)

    anchors = [float(law.ppf(p)) for p in ANCHOR_QUANTILES]
    points = sorted({float(p) for p in list(breakpoints) + anchors if lo < p < hi})
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, error = integrate.quad(integrand, lo, hi,
                                          points=points or None,
                                          epsabs=settings.atol, epsrel=settings.rtol,
                                          limit=settings.limit)
        except integrate.IntegrationWarning as e:
            raise QuadratureError(f"quadrature did not converge on [{lo:.6g}, {hi:.6g}]: {e}",
                                  interval=(lo, hi))

    allowed = max(settings.rtol * abs(value), settings.atol)
    if not np.isfinite(value) or error > allowed:
        raise QuadratureError(
            f"quadrature error estimate {error:.3g} exceeds tolerance {allowed:.3g}",
            value=value, error=error, interval=(lo, hi))
    logger.debug(f"[QUAD] {law.name}: value={value:.12g} err={error:.2g} "
                 f"interval=[{lo:.4g}, {hi:.4g}] breakpoints={len(points)} "
                 f"discarded={settings.discarded_mass:.1g}")
    return value, error
