import warnings

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_sinkhorn():
    # tiny random batches sometimes stop short of the 1e-9 marginal tolerance
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="sinkhorn did not converge", category=RuntimeWarning)
        yield
