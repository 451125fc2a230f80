"""
Shared fixtures: seeded RNG, built-in models, entropy structures and small run configs.
"""
import numpy as np
import pytest

from src.config import parse_run_config
from src.services.constitutive import builtin_model
from src.services.entropy import build_G
from src.services.gasdyn import builtin_gas
from src.services.grid import SlabGrid

QUADRATIC = {"gamma_E": 3.5, "gamma_v": 0.5}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def quadratic2():
    return builtin_model("quadratic", dict(QUADRATIC), dim=2)


@pytest.fixture(scope="session")
def quadratic3():
    return builtin_model("quadratic", dict(QUADRATIC), dim=3)


@pytest.fixture(scope="session")
def polyquad2():
    return builtin_model("polyquad", {}, dim=2)


@pytest.fixture(scope="session")
def polyquad3():
    return builtin_model("polyquad", {}, dim=3)


@pytest.fixture(scope="session")
def gas_model():
    return builtin_model("gas-lagrangean", {}, dim=2)


@pytest.fixture(scope="session")
def quadratic2_structure(quadratic2):
    return build_G(quadratic2)


@pytest.fixture(scope="session")
def polyquad3_structure(polyquad3):
    return build_G(polyquad3)


@pytest.fixture(scope="session")
def default_gas():
    return builtin_gas("polytropic-linear")


@pytest.fixture
def small_grid():
    return SlabGrid(32)


def make_config(**tables):
    """RunConfig on a small grid for fast runs; table dicts override the defaults."""
    data = {
        "model": {"family": "quadratic", "dim": 2, "params": dict(QUADRATIC)},
        "grid": {"n_cells": 32},
        "time": {"t_end": 0.05, "cfl": 0.4, "snapshot_stride": 4},
        "relax": {"epsilon": 0.05},
        "init": {"kind": "sine", "amplitude": 0.02, "velocity_amplitude": 0.05},
    }
    for name, values in tables.items():
        data.setdefault(name, {}).update(values)
    return parse_run_config(data)


@pytest.fixture
def small_config():
    return make_config()


@pytest.fixture
def out_dir(tmp_path):
    return tmp_path / "run"
