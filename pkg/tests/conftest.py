import numpy as np
import pytest


def random_spd(rng, dim, scale=1.0):
    """Well-conditioned random SPD matrix."""
    a = rng.standard_normal((dim, dim))
    return scale * (a @ a.T + dim * np.eye(dim))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
