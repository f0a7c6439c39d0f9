import numpy as np
import pytest

from dabag import Dataset, RngStream
from dabag import _kernels


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # compile the jit kernels once so individual tests time only themselves
    _kernels.warmup()


@pytest.fixture
def rng():
    return RngStream(12345)


def make_blobs(n_per, centers, scale=1.0, seed=0):
    """Labeled dataset of isotropic Gaussian blobs, one class per center."""
    gen = np.random.default_rng(seed)
    xs, ys = [], []
    for c, mu in enumerate(centers, start=1):
        mu = np.asarray(mu, dtype=np.float64)
        xs.append(mu + scale * gen.standard_normal((n_per, mu.size)))
        ys.append(np.full(n_per, c))
    return Dataset(np.vstack(xs), np.concatenate(ys), len(centers))


@pytest.fixture
def two_blobs():
    return make_blobs(30, [(-3.0, 0.0), (3.0, 0.0)], scale=0.5)
