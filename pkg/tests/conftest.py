import numpy as np
import pytest

from optforge.tasks import MnistData


def synthetic_digits(n=256, seed=0):
    """Random 784-pixel images labelled by a fixed random linear teacher."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, size=(n, 784))
    teacher = rng.standard_normal((784, 10))
    y = np.argmax(x @ teacher, axis=1)
    half = n // 2
    return MnistData(x[:half], y[:half], x[half:], y[half:])


@pytest.fixture(scope="session")
def digits():
    return synthetic_digits()
