import numpy as np
import pytest

from elastmg.discretization import OperatorSpec
from elastmg.grid import MediaModel, StaggeredGrid


def make_spec(dims=(8, 6), beta=2/3, omega=3.0, alpha=0.0, gamma=0.0, h=None, seed=None,
              lam=2.0, mu=1.0, rho=1.0, precision='double'):
    """Small operator; with ``seed`` the media are random and smooth enough to stay physical."""
    grid = StaggeredGrid(dims, h if h is not None else 1.0/dims[-1])
    if seed is None:
        media = MediaModel.homogeneous(grid, lam, mu, rho, gamma)
    else:
        rng = np.random.default_rng(seed)
        media = MediaModel(lam*rng.uniform(0.5, 2.0, dims), mu*rng.uniform(0.5, 2.0, dims),
                           rho*rng.uniform(0.5, 2.0, dims), gamma*rng.uniform(0.0, 1.0, dims))
    return OperatorSpec(beta, omega, grid, media, shift_alpha=alpha, precision=precision)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_vector(n, rng):
    return rng.standard_normal(n) + 1j*rng.standard_normal(n)


@pytest.fixture(scope='session')
def dispersion_dir(tmp_path_factory):
    return tmp_path_factory.mktemp('dispersion')
