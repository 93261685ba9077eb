import numpy as np
import pytest

from irspot.image import resize_bilinear


def synthetic_face(seed: int, size: int = 160) -> np.ndarray:
    """Smooth low-frequency random image standing in for an aligned face crop."""
    rng = np.random.default_rng(seed)
    img = resize_bilinear(rng.random((10, 10, 3)), size, size)
    return np.clip(0.15 + 0.6 * img, 0.0, 1.0)


@pytest.fixture
def face():
    return synthetic_face(0)


@pytest.fixture
def face_small():
    return synthetic_face(1, size=48)
