import numpy as np
import pytest

from dynsurr import LinearDGPParams, random_linear_params, simulate_linear


@pytest.fixture(scope="session")
def scalar_params():
    """k = p = 1 world with A=1, B=0.5, c=1 and an adaptive policy."""
    return LinearDGPParams(
        a_e=np.array([[1.0]]), a_o=np.array([[1.0]]),
        b=np.array([[0.5]]), c=np.array([1.0]),
        d_e=np.array([[0.4]]), d_o=np.array([[0.4]]),
        g_e=np.array([[0.3]]), g_o=np.array([[0.3]]),
        sigma_eps=1.0, sigma_eta=0.25, sigma_zeta=1.0, M=2,
    )


@pytest.fixture(scope="session")
def small_params():
    return random_linear_params(p=3, k=2, M=3, seed=7, adaptive=True)


@pytest.fixture(scope="session")
def small_data(small_params):
    return simulate_linear(small_params, 400, 400, seed=3)
