"""
Shared fixtures: seeded generators, random operators, tiny phantom datasets
"""
import numpy as np
import pytest

from execution.config import PhantomSpec, settings
from execution.mri_operators import CoilMaps, KSpaceVolume, SamplingMask
from execution.phantom import make_dataset


def pytest_collection_modifyitems(config, items):
    if settings.run_slow:
        return
    skip_slow = pytest.mark.skip(reason="slow trend test; set SSDU_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def random_complex(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_maps(rng: np.random.Generator, n_coils: int, H: int, W: int) -> CoilMaps:
    return CoilMaps(random_complex(rng, (n_coils, H, W)) / np.sqrt(2 * n_coils))


def random_mask(rng: np.random.Generator, H: int, W: int, density: float = 0.5) -> SamplingMask:
    grid = rng.random((H, W)) < density
    grid[H // 2, W // 2] = True
    return SamplingMask(grid)


def random_kspace(rng: np.random.Generator, n_coils: int, mask: SamplingMask, slice_id: str = "0") -> KSpaceVolume:
    data = random_complex(rng, (n_coils,) + mask.shape) * mask.grid[None]
    return KSpaceVolume(data, mask, slice_id)


def dense_encoding(maps: CoilMaps, mask: SamplingMask = None) -> np.ndarray:
    """Explicit matrix of E: columns are E applied to unit images (naive centered DFT)"""
    C, H, W = maps.maps.shape
    fy = np.exp(-2j * np.pi * np.outer(np.arange(H) - H // 2, np.arange(H) - H // 2) / H) / np.sqrt(H)
    fx = np.exp(-2j * np.pi * np.outer(np.arange(W) - W // 2, np.arange(W) - W // 2) / W) / np.sqrt(W)
    F = np.kron(fy, fx)
    keep = np.ones(H * W, dtype=bool) if mask is None else mask.grid.ravel()
    blocks = [np.diag(keep.astype(float)) @ F @ np.diag(maps.maps[c].ravel()) for c in range(C)]
    return np.vstack(blocks)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_spec():
    return PhantomSpec(height=16, width=16, n_coils=2, noise_std=0.01)


@pytest.fixture
def tiny_records(tiny_spec):
    return make_dataset(tiny_spec, n_slices=4, seed=3)
