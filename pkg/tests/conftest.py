import numpy as np
import pytest

from mixed_bo.ep import MixedGP
from mixed_bo.kernel import Hyperparams, ObservationSet
from mixed_bo.oracle import acquisition_state


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def h2():
    """2-D model with one target and one binary auxiliary."""
    return Hyperparams(
        gamma=[[25.0, 25.0]],
        P=[[200.0, 150.0], [120.0, 180.0]],
        s=[[1.0], [0.8]],
        m=[0.0, -0.2],
        noise_var=1e-3,
    )


@pytest.fixture
def mixed_obs():
    return ObservationSet(
        X=np.array([[0.1, 0.2], [0.7, 0.6], [0.4, 0.9], [0.3, 0.3], [0.8, 0.1], [0.5, 0.5]]),
        idx=np.array([1, 1, 2, 2, 2, 2]),
        y=np.array([0.3, -0.4, 1.0, -1.0, 1.0, -1.0]),
    )


@pytest.fixture
def mixed_gp(h2, mixed_obs):
    return MixedGP(h2, mixed_obs)


@pytest.fixture(scope="session")
def synthetic_state():
    """Fitted model on a synthetic problem with 5 target and 20 auxiliary observations."""
    return acquisition_state(seed=0, n_target=5, n_aux=20)
