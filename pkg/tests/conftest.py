import numpy as np
import pytest

from tempeq.economy import EconomyParams, aiyagari_steady_state
from tempeq.stoch import MarkovChain


@pytest.fixture(scope="session")
def benchmark_params():
    return EconomyParams()


@pytest.fixture(scope="session")
def benchmark_steady(benchmark_params):
    # one household steady-state solve shared across the suite (~2s)
    return aiyagari_steady_state(benchmark_params)


@pytest.fixture(scope="session")
def degenerate_params():
    return EconomyParams(z_chain=MarkovChain(np.array([1.0]), np.array([[1.0]])))


@pytest.fixture(scope="session")
def degenerate_steady(degenerate_params):
    return aiyagari_steady_state(degenerate_params)
