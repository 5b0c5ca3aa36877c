import numpy as np
import pytest
from scipy import ndimage

from diffeo.fields import Grid3, VectorField, identity_coords

ACCEPTANCE_LINES = []


def smooth_random_field(shape, seed, amplitude=0.3, sigma=1.5):
    """Identity plus a smooth random displacement, as a raw (3, nx, ny, nz) array."""
    rng = np.random.default_rng(seed)
    u = np.stack([ndimage.gaussian_filter(rng.standard_normal(shape), sigma) for _ in range(3)])
    u *= amplitude / np.abs(u).max()
    return identity_coords(shape) + u


@pytest.fixture
def grid8():
    return Grid3(8, 8, 8)


@pytest.fixture
def grid16():
    return Grid3(16, 16, 16)


@pytest.fixture
def random_phi(grid8):
    return VectorField(grid8, smooth_random_field(grid8.shape, 0), "transformation")


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
