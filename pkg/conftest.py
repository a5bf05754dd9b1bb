import numpy as np
import pytest

from services.image_service import Image, RenderingStack


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_stack(rng, n=4, height=16, width=16, low=0.05, high=0.95):
    return RenderingStack(
        rng.uniform(low, high, size=(n, height, width, 3)),
        rng.uniform(low, high, size=(n, height, width, 1)),
    )


def random_image(rng, height=16, width=16, channels=3):
    return Image(rng.uniform(0.0, 1.0, size=(height, width, channels)))


def disc_mask(height, width, cx, cy, radius):
    yy, xx = np.mgrid[0:height, 0:width]
    return np.clip(radius + 0.5 - np.hypot(xx - cx, yy - cy), 0.0, 1.0)[..., None]


@pytest.fixture
def stack(rng):
    return random_stack(rng)


@pytest.fixture
def moving_disc_stack():
    """Uniform bright disc moving left to right over 6 sub-frames on a 32x32 canvas."""
    masks = np.stack([disc_mask(32, 32, 8 + 3 * i, 16, 4.0) for i in range(6)])
    colors = np.broadcast_to(np.array([0.9, 0.8, 0.2]), (6, 32, 32, 3))
    return RenderingStack(colors * (masks > 0), masks)
