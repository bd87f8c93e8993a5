import numpy as np
import pytest


@pytest.fixture
def np_rng():
    # test-side randomness only; the library never uses numpy's global state
    return np.random.default_rng(12345)
