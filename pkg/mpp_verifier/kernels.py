"""
Interarrival kernels theta -> K(h(theta)).

Registry (rate convention, lambda = h(theta)):
    exponential   density lambda e^(-lambda t), mean 1/lambda
    erlang        shape k >= 2, density lambda^k t^(k-1) e^(-lambda t) / (k-1)!, mean k/lambda

Dominating functions C(lambda) >= sup_t F'(t):
    rate          C(lambda) = lambda (exact sup for the exponential family)
    erlang_peak   C(lambda) = lambda (k-1)^(k-1) e^(-(k-1)) / (k-1)!
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .errors import ConfigError, DomainError, NullSetError
from .mixing import Transform, get_transform

FAMILIES = ("exponential", "erlang")
DOMINATING = ("rate", "erlang_peak")


@dataclass(frozen=True)
class InterarrivalKernel:
    family: str
    transform: Transform
    shape: int = 1
    dominating: str = "rate"
    null_set: tuple = ()           # thetas where h(theta) is not a usable rate

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.family == "exponential" and self.shape != 1:
            raise ValueError("exponential kernel has shape 1")
        if self.family == "erlang" and (int(self.shape) != self.shape or self.shape < 2):
            raise ValueError(f"erlang shape must be an integer >= 2, got {self.shape}")
        if self.dominating not in DOMINATING:
            raise ValueError(f"unknown dominating function {self.dominating!r}")
        object.__setattr__(self, "shape", int(self.shape))
        object.__setattr__(self, "null_set", tuple(float(t) for t in self.null_set))

    @classmethod
    def exponential(cls, transform: Transform, **kwargs):
        return cls("exponential", transform, 1, **kwargs)

    @classmethod
    def erlang(cls, transform: Transform, shape: int = 2, **kwargs):
        kwargs.setdefault("dominating", "erlang_peak")
        return cls("erlang", transform, shape, **kwargs)

    @property
    def is_exponential(self) -> bool:
        return self.family == "exponential"

    def describe(self) -> str:
        if self.is_exponential:
            return f"Exp(h={self.transform.name})"
        return f"Erlang{self.shape}(h={self.transform.name})"

    def in_null_set(self, theta) -> bool:
        return float(theta) in self.null_set

    def rate(self, theta: float) -> float:
        """lambda = h(theta); must be finite and positive."""
        if self.in_null_set(theta):
            raise NullSetError(f"theta={theta} lies in the declared null set of {self.describe()}")
        lam = float(self.transform(theta))
        if not (np.isfinite(lam) and lam > 0):
            raise DomainError(f"{self.describe()}: rate h({theta}) = {lam} is not a positive finite number")
        return lam

    def cdf(self, theta: float, t):
        """F_{h(theta)}(t); 0 for t <= 0."""
        out = self.cdf_from_rate(self.rate(theta), t)
        return float(out) if np.ndim(out) == 0 else out

    def cdf_from_rate(self, lam, t):
        """Vectorized CDF given rates directly (lam broadcasts against t)."""
        x = np.asarray(lam, dtype=float) * np.maximum(np.asarray(t, dtype=float), 0.0)
        if self.is_exponential:
            return -np.expm1(-x)
        return special.gammainc(self.shape, x)

    def sf(self, theta: float, t):
        lam = self.rate(theta)
        t = np.asarray(t, dtype=float)
        if self.is_exponential:
            out = np.exp(-lam * np.maximum(t, 0.0))
        else:
            out = special.gammaincc(self.shape, lam * np.maximum(t, 0.0))
        return float(out) if out.ndim == 0 else out

    def density(self, theta: float, t):
        lam = self.rate(theta)
        t = np.asarray(t, dtype=float)
        if self.is_exponential:
            out = np.where(t >= 0, lam * np.exp(-lam * np.maximum(t, 0.0)), 0.0)
        else:
            out = stats.gamma.pdf(t, self.shape, scale=1.0 / lam)
        return float(out) if np.ndim(out) == 0 else out

    def mean(self, theta: float) -> float:
        return self.shape / self.rate(theta)

    def dominating_bound(self, theta: float) -> float:
        """Declared C(h(theta))."""
        lam = self.rate(theta)
        if self.dominating == "rate":
            return lam
        k = self.shape
        return lam * math.exp((k - 1) * math.log(k - 1) - (k - 1) - special.gammaln(k))

    def sample_interarrivals(self, theta: float, rng: np.random.Generator, size: int) -> np.ndarray:
        """size draws from K(h(theta)); exactly shape uniforms per draw."""
        lam = self.rate(theta)
        u = rng.random((size, self.shape))
        return (-np.log1p(-u) / lam).sum(axis=1)

    def sample_interarrival(self, theta: float, rng: np.random.Generator) -> float:
        return float(self.sample_interarrivals(theta, rng, 1)[0])

    def to_dict(self) -> dict:
        data = {"family": self.family, "dominating": self.dominating}
        if not self.is_exponential:
            data["shape"] = self.shape
        if self.null_set:
            data["null_set"] = list(self.null_set)
        return data


KERNEL_KEYS = {"family", "shape", "dominating", "null_set"}


def kernel_from_dict(data: dict, transform_name: str, where: str = "kernel") -> InterarrivalKernel:
    """Build a kernel from its config section plus the scenario's transform."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    unknown = sorted(set(data) - KERNEL_KEYS)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    family = data.get("family", "exponential")
    if family not in FAMILIES:
        raise ConfigError(f"{where}.family: unknown family {family!r} (known: {', '.join(FAMILIES)})")
    default_dom = "rate" if family == "exponential" else "erlang_peak"
    try:
        return InterarrivalKernel(family=family,
                                  transform=get_transform(transform_name),
                                  shape=data.get("shape", 1 if family == "exponential" else 2),
                                  dominating=data.get("dominating", default_dom),
                                  null_set=tuple(data.get("null_set", ())))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}")
