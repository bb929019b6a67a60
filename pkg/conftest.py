import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from RG.fourier_core import FourierField  # noqa: E402
from RG.kt_basis import golden_basis, plastic_basis  # noqa: E402

GOLDEN = (1 + 5 ** 0.5) / 2


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end runs that take more than a few seconds")


@pytest.fixture(scope="session")
def golden():
    return golden_basis()


@pytest.fixture(scope="session")
def plastic():
    return plastic_basis()


def random_field(dim, K, count, amp, seed, radius=None, real=True, with_mean=False):
    """ω-free random field with `count` mode pairs of size about amp."""
    rng = np.random.default_rng(seed)
    radius = radius or K
    modes = {}
    while len(modes) < 2 * count if real else len(modes) < count:
        k = tuple(int(x) for x in rng.integers(-radius, radius + 1, size=dim))
        if not any(k) or sum(abs(x) for x in k) > min(radius, K) or k in modes:
            continue
        v = amp * (rng.standard_normal(dim) + 1j * rng.standard_normal(dim))
        modes[k] = v
        if real:
            modes[tuple(-x for x in k)] = np.conj(v)
    if with_mean:
        modes[(0,) * dim] = amp * rng.standard_normal(dim)
    return FourierField.from_modes(modes, K, dim=dim, real=real)
