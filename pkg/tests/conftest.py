import numpy as np
import pytest

from sviplus.data import ClusterSpec, gen_gmm_synthetic
from sviplus.engine import Settings, fit
from sviplus.models import GaussianMixture


@pytest.fixture(scope="session")
def gmm_data():
    return gen_gmm_synthetic(250, ClusterSpec(), seed=0)


@pytest.fixture(scope="session")
def gmm_model(gmm_data):
    return GaussianMixture.from_data(gmm_data, 4)


@pytest.fixture(scope="session")
def gmm_warm_state(gmm_model, gmm_data):
    """Globals after five batch sweeps, frozen for gradient checks."""
    _, state = fit(gmm_model, gmm_data, Settings("batch", iters=5, seed=0))
    return state


def random_spd(rng, d, scale=1.0):
    A = rng.standard_normal((d, d))
    return scale * (A @ A.T / d + 0.5 * np.eye(d))
