import numpy as np
import pytest

from conicnet import make_rng


@pytest.fixture
def rng():
    return make_rng(20240817)


def centered(arr, x, y):
    """Value at centered spatial coordinate (x, y) of an (M, M, ...) array."""
    c = (arr.shape[0] - 1) // 2
    return arr[x + c, y + c]
