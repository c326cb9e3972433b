import os

import pytest
from hypothesis import HealthCheck, settings

from symstab import corpus

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def ho():
    return corpus.builtin("harmonic_oscillator")


@pytest.fixture
def fp():
    return corpus.builtin("free_particle")


@pytest.fixture
def x3():
    return corpus.builtin("quadratic_blowup")


@pytest.fixture
def pu():
    return corpus.builtin("pais_uhlenbeck")


@pytest.fixture
def kron():
    return corpus.builtin("kronecker")


@pytest.fixture
def sin_r2():
    return corpus.builtin("sin_r2")
