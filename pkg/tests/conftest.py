import numpy as np
import pytest

import belief_divide as bd


@pytest.fixture(scope="session")
def params() -> bd.ModelParams:
    return bd.table4_params()


@pytest.fixture(scope="session")
def fast_learner() -> bd.UserProfile:
    return bd.fast_learner_profile()


@pytest.fixture(scope="session")
def slow_learner() -> bd.UserProfile:
    return bd.slow_learner_profile()


@pytest.fixture(scope="session")
def small_dataset(params):
    """Shared small synthetic panel for likelihood/estimation tests."""
    spec = bd.PopulationSpec(n_users=40, horizon_days=30, master_seed=1234)
    dataset, truths = bd.simulate_dataset(spec, params)
    return dataset, truths


@pytest.fixture(scope="session")
def rng() -> np.random.Generator:
    return np.random.default_rng(20240612)
