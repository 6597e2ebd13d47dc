import numpy as np
import pytest

from bathyopt.helmholtz import PhysicalParams
from bathyopt.mesh import build_structured_mesh


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def unit_mesh():
    return build_structured_mesh((0.0, 0.0, 1.0, 1.0), 4, 4)


@pytest.fixture(scope="session")
def experiment_params():
    return PhysicalParams(T0=20.0, g_grav=9.81, z0=3.0, direction=(0.0, 1.0))
