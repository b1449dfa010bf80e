import numpy as np
import pytest

from tgvn.data import make_coil_maps, make_mask
from tgvn.operators import ForwardOp


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def small_op(seed=0, n_coils=2, shape=(6, 6), accel=2, center_fraction=0.17, kind="random"):
    maps = make_coil_maps(n_coils, shape, seed)
    mask = make_mask(shape[1], kind, accel, center_fraction, seed)
    return ForwardOp(maps, mask)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
