"""Shared fixtures: kernels, laws, tiny ensembles and scenario dicts."""

import copy
from pathlib import Path

import numpy as np
import pytest

from mpp_verifier.kernels import InterarrivalKernel
from mpp_verifier.mixing import Gamma, InverseGamma, get_transform
from mpp_verifier.models import OUTPUT_ENV_VAR, CountingPath
from mpp_verifier.sim import PathEnsemble

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def identity():
    return get_transform("identity")


@pytest.fixture
def exp_kernel(identity):
    return InterarrivalKernel.exponential(identity)


@pytest.fixture
def erlang_kernel(identity):
    return InterarrivalKernel.erlang(identity, shape=2)


@pytest.fixture
def reciprocal_kernel():
    return InterarrivalKernel.exponential(get_transform("reciprocal"))


@pytest.fixture
def gamma_law():
    return Gamma(2.0, 3.0)


@pytest.fixture
def inverse_gamma_law():
    return InverseGamma(2.0, 2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def out_dir(tmp_path, monkeypatch):
    """Route every report into a temp directory."""
    target = tmp_path / "out"
    monkeypatch.setenv(OUTPUT_ENV_VAR, str(target))
    return target


@pytest.fixture
def hand_ensemble():
    """Four hand-written paths on [0, 3] with known counts."""
    paths = [
        CountingPath(3.0, (0.5, 1.0, 2.5)),
        CountingPath(3.0, ()),
        CountingPath(3.0, (1.5,)),
        CountingPath(3.0, (0.25, 0.75, 1.25, 2.0, 3.0)),
    ]
    return PathEnsemble.from_paths(paths, thetas=[1.0, 2.0, 3.0, 4.0], lead_interarrivals=2)


@pytest.fixture
def empty_ensemble():
    """Deterministic double: every path has zero events."""
    return PathEnsemble.from_paths([CountingPath(2.0, ()) for _ in range(10)])


BASE_SCENARIO = {
    "schema_version": 1,
    "name": "gamma_small",
    "description": "Polya process at test scale",
    "mixing": {"law": "gamma", "shape": 2.0, "rate": 2.0},
    "transform": "identity",
    "kernel": {"family": "exponential"},
    "evaluator": "quadrature",
    "simulation": {"horizon": 2.0, "num_paths": 4000, "master_seed": 7,
                   "lead_interarrivals": 4, "threads": 1},
    "battery": {
        "fdd": [
            {"times": [1.0], "increments": [0]},
            {"times": [1.0], "increments": [1]},
            {"times": [1.0, 2.0], "increments": [1, 0]},
        ],
        "multinomial": [{"times": [1.0, 2.0], "counts": [1, 2]}],
        "splitting": [{"s": 1.0, "t": 2.0, "k": 1, "n": 2}],
        "markov": [{"times": [0.5, 1.0, 2.0], "counts": [0, 1, 2]}],
        "huang": [[0.5], [0.5, 0.5]],
        "pit_interarrivals": 4,
    },
    "tolerances": {"z_threshold": 4.0, "pit_alpha": 0.001},
}


@pytest.fixture
def scenario_dict():
    """A fresh, valid scenario dict the test may mutate."""
    return copy.deepcopy(BASE_SCENARIO)
