from pathlib import Path

import numpy as np
import pytest

from cycleperturb import pipeline
from cycleperturb.config import load_config
from cycleperturb.cycle import build_adjoint_basis, find_cycle
from cycleperturb.model import SetValuedPerturbation, duffing, dry_friction, forcing, harmonic

ROOT = Path(__file__).resolve().parents[1]
REFERENCE_CONFIG = ROOT / "configs" / "duffing_friction.toml"
HARMONIC_CONFIG = ROOT / "configs" / "harmonic.toml"
LADDER = (0.02, 0.01, 0.005, 0.0025)


@pytest.fixture(scope="session")
def duffing_cycle():
    return find_cycle(duffing(1.0), [1.0, 0.0])


@pytest.fixture(scope="session")
def duffing_basis(duffing_cycle):
    return build_adjoint_basis(duffing_cycle)


@pytest.fixture(scope="session")
def harmonic_cycle():
    return find_cycle(harmonic(), [1.0, 0.0])


@pytest.fixture(scope="session")
def reference_pert(duffing_cycle):
    T = duffing_cycle.period
    return SetValuedPerturbation.from_terms(T, [forcing(1.0, T), dry_friction(0.5)])


@pytest.fixture(scope="session")
def reference_config():
    return load_config(REFERENCE_CONFIG)


@pytest.fixture(scope="session")
def reference_setup(reference_config):
    return pipeline.prepare(reference_config)


@pytest.fixture(scope="session")
def reference_ladder(reference_setup):
    return pipeline.run_ladder(reference_setup, LADDER)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
