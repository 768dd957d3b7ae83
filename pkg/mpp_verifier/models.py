"""
Core data models: counting paths, finite-dimensional queries, and the
conversions between counting, arrival and interarrival views.

Also holds the data-directory helpers and the atomic file writer used by
everything that persists output.
"""

import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import OutOfRangeError, ValidationError

OUTPUT_ENV_VAR = "MPP_VERIFIER_OUT"


def get_data_dir() -> Path:
    if getattr(sys, 'frozen', False):
        return Path(sys.executable).parent / "data"
    return Path(__file__).parent.parent / "data"


def get_scenarios_dir() -> Path:
    if getattr(sys, 'frozen', False):
        return Path(sys.executable).parent / "scenarios"
    return Path(__file__).parent.parent / "scenarios"


def get_output_dir(override=None) -> Path:
    """Output directory: explicit override > $MPP_VERIFIER_OUT > data/reports."""
    if override:
        return Path(override)
    env = os.environ.get(OUTPUT_ENV_VAR, "").strip()
    if env:
        return Path(env)
    return get_data_dir() / "reports"


def atomic_write_text(path: Path, text: str):
    """Write text to path via temp file + fsync + rename.

    A killed process leaves either the old file or the new one, never half.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_name(path.name + ".tmp")
    with open(tmp_path, 'w', encoding="utf-8", newline="\n") as f:
        f.write(text)
        f.flush()
        os.fsync(f.fileno())
    tmp_path.replace(path)


# ---------------------------------------------------------------------------
# Counting path
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CountingPath:
    """One realization of a counting process observed on [0, horizon].

    events are the jump times, strictly increasing, all in (0, horizon].
    Nothing is known about the path after the horizon.
    """
    horizon: float
    events: tuple = ()

    def __post_init__(self):
        horizon = float(self.horizon)
        if not np.isfinite(horizon) or horizon < 0:
            raise ValidationError(f"horizon must be finite and >= 0, got {self.horizon}")
        events = tuple(float(e) for e in self.events)
        if events:
            arr = np.asarray(events)
            if not np.all(np.isfinite(arr)):
                raise ValidationError("event times must be finite")
            if arr[0] <= 0:
                raise ValidationError(f"event times must be positive, got {arr[0]}")
            if np.any(np.diff(arr) <= 0):
                raise ValidationError("event times must be strictly increasing "
                                      "(simultaneous events are not allowed)")
            if arr[-1] > horizon:
                raise ValidationError(f"event at {arr[-1]} lies past horizon {horizon}")
        object.__setattr__(self, "horizon", horizon)
        object.__setattr__(self, "events", events)

    @property
    def count(self) -> int:
        return len(self.events)


def arrivals_of(path: CountingPath) -> list:
    """Arrival times T_1 < T_2 < ... (the event list itself)."""
    return list(path.events)


def interarrivals_of(path: CountingPath) -> list:
    """Waiting times W_1 = T_1, W_n = T_n - T_{n-1}."""
    if not path.events:
        return []
    return np.diff(np.asarray(path.events), prepend=0.0).tolist()


def path_from_interarrivals(waits: Sequence[float], horizon: float) -> CountingPath:
    """Cumulative sums of the waiting times, truncated at the horizon."""
    waits = np.asarray(waits, dtype=float)
    if waits.size and np.any(waits <= 0):
        raise ValidationError("interarrival times must be strictly positive")
    arrivals = np.cumsum(waits)
    return CountingPath(horizon, tuple(arrivals[arrivals <= horizon]))


def _check_query_times(path: CountingPath, times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1:
        raise ValidationError("query times must be a flat list")
    if np.any(~np.isfinite(times)) or np.any(times < 0):
        raise ValidationError("query times must be finite and >= 0")
    if np.any(times > path.horizon):
        bad = times[times > path.horizon][0]
        raise OutOfRangeError(f"query time {bad} is past horizon {path.horizon}")
    return times


def count_at(path: CountingPath, times: Sequence[float]) -> list:
    """N_t for each t. An event exactly at t counts (right-continuity)."""
    times = _check_query_times(path, times)
    return np.searchsorted(np.asarray(path.events, dtype=float), times,
                           side="right").astype(int).tolist()


def increments_of(path: CountingPath, query_times: Sequence[float]) -> list:
    """Increments N_{t_j} - N_{t_{j-1}} over the grid, with t_0 = 0."""
    grid = np.asarray(query_times, dtype=float)
    if grid.size == 0:
        raise ValidationError("grid must not be empty")
    if grid[0] <= 0 or np.any(np.diff(grid) <= 0):
        raise ValidationError("grid must be positive and strictly increasing")
    counts = np.asarray(count_at(path, grid))
    return np.diff(counts, prepend=0).tolist()


# ---------------------------------------------------------------------------
# Finite-dimensional query
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FddQuery:
    """The event {N_{t_j} - N_{t_{j-1}} = kappa_j, j = 1..m}, t_0 = 0."""
    times: tuple
    increments: tuple

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        increments = tuple(int(k) for k in self.increments)
        if len(times) == 0 or len(times) != len(increments):
            raise ValidationError("times and increments must be non-empty and of equal length")
        if any(int(k) != k for k in self.increments):
            raise ValidationError("increments must be integers")
        if any(k < 0 for k in increments):
            raise ValidationError("increments must be >= 0")
        arr = np.asarray(times)
        if not np.all(np.isfinite(arr)) or arr[0] <= 0 or np.any(np.diff(arr) <= 0):
            raise ValidationError(f"times must be positive and strictly increasing, got {list(times)}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "increments", increments)

    @classmethod
    def from_cumulative(cls, times, counts):
        """Build from cumulative counts n_1 <= ... <= n_m."""
        counts = [int(c) for c in counts]
        if any(c < 0 for c in counts) or any(b < a for a, b in zip(counts, counts[1:])):
            raise ValidationError(f"cumulative counts must be nondecreasing and >= 0, got {counts}")
        return cls(tuple(times), tuple(np.diff(counts, prepend=0).tolist()))

    @property
    def m(self) -> int:
        return len(self.times)

    @property
    def deltas(self) -> np.ndarray:
        return np.diff(np.asarray(self.times), prepend=0.0)

    @property
    def cumulative(self) -> tuple:
        return tuple(np.cumsum(self.increments).tolist())

    @property
    def total(self) -> int:
        return int(sum(self.increments))

    @property
    def last_time(self) -> float:
        return self.times[-1]

    def key(self):
        """Sort key used for deterministic aggregation."""
        return (self.m, self.times, self.increments)

    def to_dict(self):
        return {"times": list(self.times), "increments": list(self.increments)}

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(data["times"]), tuple(data["increments"]))


def parse_number_list(text: str, kind=float, name: str = "list") -> list:
    """Parse '1,2.5,3' style flag values."""
    try:
        return [kind(x) for x in str(text).replace(" ", "").split(",") if x != ""]
    except ValueError:
        raise ValidationError(f"could not parse {name}: {text!r}")

