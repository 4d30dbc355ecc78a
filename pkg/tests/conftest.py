import numpy as np
import pytest

from augcov.spd import SpdMatrix


def random_spd(rng, dim, scale=1.0, cond=10.0):
    """Well-conditioned random SPD matrix with spectrum in [scale/cond, scale]."""
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eigs = scale * (1.0 / cond + (1.0 - 1.0 / cond) * rng.random(dim))
    return SpdMatrix((q * eigs) @ q.T)


def random_symmetric(rng, dim, scale=1.0):
    m = rng.standard_normal((dim, dim)) * scale
    return 0.5 * (m + m.T)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
