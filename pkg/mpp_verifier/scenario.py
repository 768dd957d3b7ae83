"""
Scenario config files (JSON, schema_version 1).

    {
      "schema_version": 1,
      "name": "...", "description": "...", "control": false,
      "mixing": {"law": "inverse_gamma", "shape": 2, "scale": 2},
      "transform": "reciprocal",
      "kernel": {"family": "exponential", "dominating": "rate"},
      "evaluator": "quadrature",
      "simulation": {"horizon": 4, "num_paths": 20000, "master_seed": 20240611,
                     "lead_interarrivals": 4, "threads": 1},
      "battery": {"fdd": [{"times": [1], "increments": [0]}],
                  "random_fdd": {"count": 36, "max_points": 2},
                  "multinomial": [{"times": [1, 2], "counts": [1, 3]}],
                  "splitting": [{"s": 1, "t": 2, "k": 1, "n": 2}],
                  "markov": [{"times": [1, 2, 3], "counts": [1, 2, 2]}],
                  "huang": [[1.0], [1.0, 1.0]],
                  "pit_interarrivals": 4},
      "tolerances": {...}, "assumptions": {...}, "output": {...}
    }

mixing is the law of Theta; the mixed Poisson law is its pushforward
through the transform. Every section is optional except name, mixing and
simulation. Unknown keys anywhere are errors.
"""

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError, MppError
from .kernels import kernel_from_dict
from .laws import EVALUATORS, make_evaluator
from .mixing import TRANSFORMS, get_transform, law_from_dict, pushforward
from .models import FddQuery, get_scenarios_dir

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FORMATS = ("json", "csv", "text")


def _reject_unknown(data, allowed, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) " + ", ".join(f"{where}.{k}" for k in unknown))


def _number(data, key, where, default=None, kind=float):
    value = data.get(key, default)
    if value is None:
        raise ConfigError(f"{where}.{key}: required")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {value!r}")
    if kind is int and int(value) != value:
        raise ConfigError(f"{where}.{key}: expected an integer, got {value!r}")
    return kind(value)


@dataclass
class SimulationSettings:
    horizon: float
    num_paths: int
    master_seed: int = 0
    lead_interarrivals: int = 4
    threads: int = 1

    def validate(self, where="simulation"):
        if not self.horizon > 0:
            raise ConfigError(f"{where}.horizon: must be > 0, got {self.horizon}")
        if self.num_paths < 1:
            raise ConfigError(f"{where}.num_paths: must be >= 1, got {self.num_paths}")
        if self.master_seed < 0:
            raise ConfigError(f"{where}.master_seed: must be >= 0, got {self.master_seed}")
        if self.lead_interarrivals < 0:
            raise ConfigError(f"{where}.lead_interarrivals: must be >= 0")
        if self.threads < 1:
            raise ConfigError(f"{where}.threads: must be >= 1, got {self.threads}")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data, where="simulation"):
        _reject_unknown(data, {f.name for f in dataclasses.fields(cls)}, where)
        return cls(horizon=_number(data, "horizon", where),
                   num_paths=_number(data, "num_paths", where, kind=int),
                   master_seed=_number(data, "master_seed", where, 0, kind=int),
                   lead_interarrivals=_number(data, "lead_interarrivals", where, 4, kind=int),
                   threads=_number(data, "threads", where, 1, kind=int))


@dataclass
class Battery:
    fdd: list = field(default_factory=list)                 # FddQuery
    random_fdd_count: int = 0
    random_fdd_max_points: int = 2
    multinomial: list = field(default_factory=list)         # (times, cumulative counts)
    splitting: list = field(default_factory=list)           # (s, t, k, n)
    markov: list = field(default_factory=list)              # (times, cumulative counts)
    huang: list = field(default_factory=list)               # waits
    pit_interarrivals: int = 4
    pit_bins: int = 4                                        # theta quantile bins

    @property
    def is_empty(self) -> bool:
        return not (self.fdd or self.random_fdd_count or self.multinomial or self.splitting
                    or self.markov or self.huang)

    def latest_time(self) -> float:
        times = [q.last_time for q in self.fdd]
        times += [max(t) for t, _ in self.multinomial + self.markov]
        times += [t for _, t, _, _ in self.splitting]
        return max(times, default=0.0)

    def to_dict(self):
        data = {
            "fdd": [q.to_dict() for q in self.fdd],
            "multinomial": [{"times": list(t), "counts": list(c)} for t, c in self.multinomial],
            "splitting": [{"s": s, "t": t, "k": k, "n": n} for s, t, k, n in self.splitting],
            "markov": [{"times": list(t), "counts": list(c)} for t, c in self.markov],
            "huang": [list(w) for w in self.huang],
            "pit_interarrivals": self.pit_interarrivals,
            "pit_bins": self.pit_bins,
        }
        if self.random_fdd_count:
            data["random_fdd"] = {"count": self.random_fdd_count,
                                  "max_points": self.random_fdd_max_points}
        return data

    @classmethod
    def from_dict(cls, data, where="battery"):
        _reject_unknown(data, {"fdd", "random_fdd", "multinomial", "splitting", "markov",
                               "huang", "pit_interarrivals", "pit_bins"}, where)
        battery = cls()
        try:
            for i, item in enumerate(data.get("fdd", [])):
                _reject_unknown(item, {"times", "increments"}, f"{where}.fdd[{i}]")
                battery.fdd.append(FddQuery.from_dict(item))
            for name in ("multinomial", "markov"):
                for i, item in enumerate(data.get(name, [])):
                    _reject_unknown(item, {"times", "counts"}, f"{where}.{name}[{i}]")
                    times = tuple(float(t) for t in item["times"])
                    counts = tuple(int(c) for c in item["counts"])
                    FddQuery.from_cumulative(times, counts)
                    if name == "markov" and len(times) < 2:
                        raise ConfigError(f"{where}.markov[{i}]: needs at least two times")
                    getattr(battery, name).append((times, counts))
            for i, item in enumerate(data.get("splitting", [])):
                _reject_unknown(item, {"s", "t", "k", "n"}, f"{where}.splitting[{i}]")
                s, t, k, n = float(item["s"]), float(item["t"]), int(item["k"]), int(item["n"])
                if not (0 < s < t and 0 <= k <= n):
                    raise ConfigError(f"{where}.splitting[{i}]: need 0 < s < t and 0 <= k <= n")
                battery.splitting.append((s, t, k, n))
            for i, waits in enumerate(data.get("huang", [])):
                waits = tuple(float(w) for w in waits)
                if not waits or any(w <= 0 for w in waits):
                    raise ConfigError(f"{where}.huang[{i}]: waits must be positive")
                battery.huang.append(waits)
        except KeyError as e:
            raise ConfigError(f"{where}: missing key {e}")
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{where}: {e}")
        if "random_fdd" in data:
            rnd = data["random_fdd"]
            _reject_unknown(rnd, {"count", "max_points"}, f"{where}.random_fdd")
            battery.random_fdd_count = _number(rnd, "count", f"{where}.random_fdd", kind=int)
            battery.random_fdd_max_points = _number(rnd, "max_points", f"{where}.random_fdd", 2, kind=int)
        battery.pit_interarrivals = _number(data, "pit_interarrivals", where, 4, kind=int)
        battery.pit_bins = _number(data, "pit_bins", where, 4, kind=int)
        return battery


@dataclass
class Tolerances:
    exact: float = 1e-8             # exact identity residuals
    z_threshold: float = 3.0        # Monte Carlo z-tests
    coverage: float = 0.95          # share of z-tests within threshold
    control_z: float = 5.0          # a control must reach this |z|
    rate_identity: float = 1e-6
    pit_alpha: float = 0.01

    def validate(self, where="tolerances"):
        for f in dataclasses.fields(self):
            if not getattr(self, f.name) > 0:
                raise ConfigError(f"{where}.{f.name}: must be > 0")
        if not self.coverage <= 1:
            raise ConfigError(f"{where}.coverage: must be <= 1")
        if not self.pit_alpha < 1:
            raise ConfigError(f"{where}.pit_alpha: must be < 1")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data, where="tolerances"):
        names = [f.name for f in dataclasses.fields(cls)]
        _reject_unknown(data, names, where)
        defaults = cls()
        return cls(**{n: _number(data, n, where, getattr(defaults, n)) for n in names})


@dataclass
class AssumptionSettings:
    grid_size: int = 64
    rate_identity_grid: int = 32

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data, where="assumptions"):
        _reject_unknown(data, {"grid_size", "rate_identity_grid"}, where)
        settings = cls(grid_size=_number(data, "grid_size", where, 64, kind=int),
                       rate_identity_grid=_number(data, "rate_identity_grid", where, 32, kind=int))
        if settings.grid_size < 2 or settings.rate_identity_grid < 1:
            raise ConfigError(f"{where}: grid_size must be >= 2 and rate_identity_grid >= 1")
        return settings


@dataclass
class OutputSettings:
    directory: Optional[str] = None
    formats: list = field(default_factory=lambda: ["json", "text"])
    dump_paths: bool = False

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data, where="output"):
        _reject_unknown(data, {"directory", "formats", "dump_paths"}, where)
        formats = list(data.get("formats", ["json", "text"]))
        bad = [f for f in formats if f not in FORMATS]
        if bad or not formats:
            raise ConfigError(f"{where}.formats: expected a non-empty subset of {', '.join(FORMATS)}")
        return cls(directory=data.get("directory"), formats=formats,
                   dump_paths=bool(data.get("dump_paths", False)))


TOP_LEVEL_KEYS = {"schema_version", "name", "description", "control", "mixing", "transform",
                  "kernel", "evaluator", "simulation", "battery", "tolerances", "assumptions",
                  "output", "aliases"}


@dataclass
class ScenarioConfig:
    name: str
    mixing: dict
    simulation: SimulationSettings
    description: str = ""
    control: bool = False
    transform: str = "identity"
    kernel: dict = field(default_factory=lambda: {"family": "exponential"})
    evaluator: str = "quadrature"
    battery: Battery = field(default_factory=Battery)
    tolerances: Tolerances = field(default_factory=Tolerances)
    assumptions: AssumptionSettings = field(default_factory=AssumptionSettings)
    output: OutputSettings = field(default_factory=OutputSettings)
    aliases: list = field(default_factory=list)             # other names the file resolves under
    source: Optional[Path] = field(default=None, compare=False)

    def validate(self):
        """Schema-level and cross-section checks; builds the law and kernel once."""
        if not self.name:
            raise ConfigError("name: required")
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"transform: unknown transform {self.transform!r} "
                              f"(known: {', '.join(sorted(TRANSFORMS))})")
        if self.evaluator not in EVALUATORS:
            raise ConfigError(f"evaluator: unknown evaluator {self.evaluator!r} "
                              f"(known: {', '.join(EVALUATORS)})")
        law = law_from_dict(self.mixing)
        kernel_from_dict(self.kernel, self.transform)
        try:
            mpp_law = pushforward(law, get_transform(self.transform))
        except MppError as e:
            raise ConfigError(f"transform: {e}")
        if abs(mpp_law.positive_mass() - 1.0) > 1e-12:
            raise ConfigError(f"mixing: the rate law {mpp_law.name} puts mass "
                              f"{1.0 - mpp_law.positive_mass():.3g} on (-inf, 0]")
        make_evaluator(self.evaluator, mpp_law)
        self.simulation.validate()
        self.tolerances.validate()
        if self.battery.is_empty:
            raise ConfigError("battery: must contain at least one query")
        latest = self.battery.latest_time()
        if latest > self.simulation.horizon:
            raise ConfigError(f"battery: query time {latest} lies past simulation.horizon "
                              f"{self.simulation.horizon}")
        for waits in self.battery.huang:
            if sum(waits) > self.simulation.horizon:
                raise ConfigError(f"battery.huang: waits {list(waits)} sum past the horizon")
        if not 2 <= self.battery.pit_interarrivals <= self.simulation.lead_interarrivals:
            raise ConfigError("battery.pit_interarrivals: must be in 2..simulation.lead_interarrivals")
        if self.battery.pit_bins < 1:
            raise ConfigError("battery.pit_bins: must be >= 1")
        return self

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "description": self.description,
            "control": self.control,
            "mixing": dict(self.mixing),
            "transform": self.transform,
            "kernel": dict(self.kernel),
            "evaluator": self.evaluator,
            "simulation": self.simulation.to_dict(),
            "battery": self.battery.to_dict(),
            "tolerances": self.tolerances.to_dict(),
            "assumptions": self.assumptions.to_dict(),
            "output": self.output.to_dict(),
            "aliases": list(self.aliases),
        }

    @classmethod
    def from_dict(cls, data: dict, source=None) -> "ScenarioConfig":
        _reject_unknown(data, TOP_LEVEL_KEYS, "scenario")
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version: unsupported version {version!r} (expected {SCHEMA_VERSION})")
        for key in ("name", "mixing", "simulation"):
            if key not in data:
                raise ConfigError(f"{key}: required")
        if not isinstance(data.get("control", False), bool):
            raise ConfigError("control: expected true or false")
        aliases = data.get("aliases", [])
        if not isinstance(aliases, list) or not all(isinstance(a, str) and a for a in aliases):
            raise ConfigError("aliases: expected a list of non-empty names")
        config = cls(
            name=str(data["name"]),
            description=str(data.get("description", "")),
            control=data.get("control", False),
            mixing=dict(data["mixing"]) if isinstance(data["mixing"], dict) else data["mixing"],
            transform=data.get("transform", "identity"),
            kernel=data.get("kernel", {"family": "exponential"}),
            evaluator=data.get("evaluator", "quadrature"),
            simulation=SimulationSettings.from_dict(data["simulation"]),
            battery=Battery.from_dict(data.get("battery", {})),
            tolerances=Tolerances.from_dict(data.get("tolerances", {})),
            assumptions=AssumptionSettings.from_dict(data.get("assumptions", {})),
            output=OutputSettings.from_dict(data.get("output", {})),
            aliases=list(aliases),
            source=source,
        )
        return config.validate()

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        path = resolve_scenario_path(path)
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}")
        except OSError as e:
            raise ConfigError(f"{path}: cannot read ({e})")
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        try:
            config = cls.from_dict(data, source=path)
        except ConfigError as e:
            raise ConfigError(f"{path}: {e}")
        except MppError as e:
            raise ConfigError(f"{path}: {type(e).__name__}: {e}")
        logger.info(f"[CONFIG] loaded scenario '{config.name}' from {path}")
        return config

    def with_overrides(self, seed=None, paths=None, threads=None, out=None, fmt=None) -> "ScenarioConfig":
        """Copy with CLI overrides applied, re-validated."""
        simulation = dataclasses.replace(self.simulation)
        output = dataclasses.replace(self.output, formats=list(self.output.formats))
        if seed is not None:
            simulation.master_seed = seed
        if paths is not None:
            simulation.num_paths = paths
        if threads is not None:
            simulation.threads = threads
        if out is not None:
            output.directory = str(out)
        if fmt is not None:
            if fmt not in FORMATS:
                raise ConfigError(f"--format: expected one of {', '.join(FORMATS)}")
            output.formats = [fmt]
        config = dataclasses.replace(self, simulation=simulation, output=output)
        if any(v is not None for v in (seed, paths, threads, out, fmt)):
            logger.debug(f"[CONFIG] overrides: seed={seed} paths={paths} threads={threads} "
                         f"out={out} format={fmt}")
        return config.validate()


def _alias_index() -> dict:
    """alias -> shipped file, from the "aliases" list of each shipped scenario."""
    index = {}
    for path in sorted(get_scenarios_dir().glob("*.json")):
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.debug(f"[CONFIG] skipping {path} while indexing aliases: {e}")
            continue
        if isinstance(data, dict):
            for alias in data.get("aliases", []):
                index.setdefault(str(alias), path)
    return index


def resolve_scenario_path(path) -> Path:
    """A path as given, or the name (or alias) of a shipped scenario."""
    path = Path(path)
    if path.exists() or path.suffix:
        return path
    shipped = get_scenarios_dir() / f"{path.name}.json"
    if shipped.exists():
        return shipped
    return _alias_index().get(path.name, path)


def shipped_scenarios(with_aliases: bool = False) -> list:
    names = [p.stem for p in get_scenarios_dir().glob("*.json")]
    if with_aliases:
        names += list(_alias_index())
    return sorted(names)
