import os
import sys
from fractions import Fraction

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=500,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def pam_params():
    from renormlab.symbols import DegreeParams

    return DegreeParams.from_kappa(2, Fraction(1, 20))


@pytest.fixture(scope="session")
def d3_params():
    from renormlab.symbols import DegreeParams

    return DegreeParams(3, Fraction(-3, 2))
