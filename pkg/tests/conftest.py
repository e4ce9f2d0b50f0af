import numpy as np
import pytest

from boxl1 import kernels


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    """Run the decorated test once per kernel backend."""
    prev = kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)
