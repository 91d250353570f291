import numpy as np
import pytest

from spiralstorm.operators import SamplingOperator, simulate_coilmaps
from spiralstorm.trajectory import make_acquisition


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_operator(rng, grid=16, n_frames=3, n_coils=2, samples_per_frame=40, kmax=0.5):
    """Operator with uniformly random k-space points in the box."""
    coords = rng.uniform(-kmax, kmax, (n_frames * samples_per_frame, 2))
    offsets = np.arange(n_frames + 1) * samples_per_frame
    maps = simulate_coilmaps(grid, n_coils)
    return SamplingOperator(coords, offsets, maps, grid)


def random_series(rng, n_frames, grid):
    return rng.standard_normal((n_frames, grid, grid)) + 1j * rng.standard_normal((n_frames, grid, grid))


@pytest.fixture(scope="session")
def small_acq():
    return make_acquisition(grid_size=32, n_interleaves=120, spirals_per_frame=6,
                            samples_per_readout=256, navigator_every=6)
