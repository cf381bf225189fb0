import numpy as np
import pytest


@pytest.fixture(params=range(5))
def rng(request):
    return np.random.default_rng(request.param)
