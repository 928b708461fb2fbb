import numpy as np
import pytest

from lpjigsaw.core import Piece
from lpjigsaw.ingest import slice_image
from lpjigsaw.synthetic import quadrant_image, smooth_unique_image


def random_piece(rng: np.random.Generator, pid: int = 0, P: int = 8) -> Piece:
    return Piece(id=pid, pixels=rng.integers(0, 65536, size=(P, P, 3), dtype=np.uint16))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def quadrant_bundle():
    return slice_image(quadrant_image(8), 8, seed=3)


@pytest.fixture(scope="session")
def small_bundle():
    """5x5 pieces of a smooth synthetic image, P=16."""
    return slice_image(smooth_unique_image(11, 5, 5, 16), 16, seed=5)
