import numpy as np
import pytest

import database
from campc.model import build_double_integrator
from campc.reach import compute_offline
from campc.sim import resolve_initial_state

SMALL_N_V = 16
SMALL_N = 6
DELTA_BOUND = 0.3


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_problem():
    return build_double_integrator(n_v=SMALL_N_V, N=SMALL_N)


@pytest.fixture(scope="session")
def small_offline(small_problem):
    return compute_offline(small_problem, delta_bound=DELTA_BOUND)


@pytest.fixture(scope="session")
def start_state(small_problem):
    x0, _ = resolve_initial_state(small_problem, (-4.0, -0.4), "scale")
    return x0


@pytest.fixture
def db_manager():
    return database.DatabaseManager("sqlite:///:memory:")


@pytest.fixture
def registry_url(tmp_path, monkeypatch):
    """Points the default registry at a throwaway file."""
    url = f"sqlite:///{tmp_path / 'registry.db'}"
    monkeypatch.setattr(database, "CAMPC_DATABASE_URL", url)
    return url
