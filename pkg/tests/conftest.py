import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rigidlab.media import DiffeoSpec, DisplacementTerm, euclidean, make_bump_density, make_pullback_metric

settings.register_profile(
    "lab", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture]
)
settings.load_profile("lab")

E1 = np.array([1.0, 0.0])
DIAG = np.array([1.0, 1.0]) / np.sqrt(2.0)


def pullback_spec():
    # |d|_inf = 0.1 exactly: the profile peaks at 1 and |offset| = 1
    return DiffeoSpec((DisplacementTerm(0.1, (0.0, 0.0), 0.85, offset=(0.8, 0.6)),))


@pytest.fixture(scope="session")
def flat():
    return euclidean(2)


@pytest.fixture(scope="session")
def bump():
    return make_bump_density(0.2, (0.0, 0.0), 0.8)


@pytest.fixture(scope="session")
def pullback():
    return make_pullback_metric(pullback_spec())
