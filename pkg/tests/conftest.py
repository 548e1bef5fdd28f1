import numpy as np
import pytest

from pdcr.bank import PerturbationBank, build_bank
from pdcr.imaging import Image, Mask


def random_image(seed, width=64, height=64, channels=1, low=0, high=256):
    rng = np.random.default_rng(seed)
    data = rng.integers(low, high, size=(height, width, channels), dtype=np.int64)
    return Image(data.astype(np.uint8))


def random_mask(seed, width=64, height=64, density=0.5):
    rng = np.random.default_rng(seed)
    return Mask(rng.random((height, width)) < density)


def constant_bank(value, block_size=8, channels=1, count=4):
    blocks = np.full((count, block_size, block_size, channels), value, dtype=np.uint8)
    return PerturbationBank(blocks=blocks, source_digest=bytes(32))


@pytest.fixture
def small_bank():
    """64 natural-ish blocks cropped from two random source images."""
    sources = [random_image(101, 64, 64), random_image(102, 64, 64)]
    return build_bank(sources, block_size=8, count=64, seed=7)
