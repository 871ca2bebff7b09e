import numpy as np
import pytest

from cinescar import ndgrad as nd


@pytest.fixture(autouse=True)
def _float64_mode():
    with nd.precision(64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
