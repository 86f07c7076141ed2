import numpy as np
import pytest

from fedmark.data import Dataset, synth_dataset
from fedmark.nn import Conv, Dense, MaxPool, init_model


@pytest.fixture(scope="session")
def small_synth() -> Dataset:
    return synth_dataset(10, 30, 16, 16, seed=5)


@pytest.fixture(scope="session")
def small_synth_test() -> Dataset:
    return synth_dataset(10, 10, 16, 16, seed=5, split=1)


@pytest.fixture
def tiny_arch():
    return (Conv(3, 3), MaxPool(2), Dense(8), Dense(4))


@pytest.fixture
def tiny_model(tiny_arch):
    return init_model(tiny_arch, (8, 8, 1), seed=0)


def random_dataset(n: int, k: int, h: int, w: int, c: int = 1, seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    return Dataset(
        rng.random((n, h, w, c), dtype=np.float32),
        rng.integers(0, k, n),
        k,
    )
