from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sportcal.template import builtin_soccer

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def soccer():
    return builtin_soccer()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
