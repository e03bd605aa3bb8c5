import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240819)


def rel_err(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    denom = max(np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / denom)


def complex_normal(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
