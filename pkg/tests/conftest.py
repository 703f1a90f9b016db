import numpy as np
import pytest

from trapnoise import FockSpace, TrapParams


@pytest.fixture
def natural_params():
    """hbar = m = omega = 1 with unit-slope heating (gamma/2m = 1)."""
    return TrapParams.natural(gamma=2.0)


@pytest.fixture
def fock8():
    return FockSpace(8)


@pytest.fixture
def fock16():
    return FockSpace(16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
