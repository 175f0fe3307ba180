import numpy as np
import pytest

from execution.config import SHEPP_LOGAN, PhantomSpec
from execution.errors import UsageError
from execution.mri_operators import SamplingMask, apply_E
from execution.phantom import coil_sensitivities, make_dataset, make_phantom, rasterize_ellipses, simulate_acquisition
from execution.sampling import equispaced_mask, sheared_mask


# ============================================
# PHANTOM AND COILS
# ============================================

def test_coil_maps_have_unit_rss():
    maps = coil_sensitivities(PhantomSpec(height=32, width=24, n_coils=8))
    rss = maps.rss()
    assert maps.maps.shape == (8, 32, 24)
    assert np.all(rss >= 1 - 1e-9) and np.all(rss <= 1 + 1e-12)


def test_single_coil_maps_are_ones():
    maps = coil_sensitivities(PhantomSpec(height=8, width=8, n_coils=1))
    np.testing.assert_array_equal(maps.maps, np.ones((1, 8, 8)))


def test_phantom_magnitude_range_and_support():
    image = rasterize_ellipses(SHEPP_LOGAN, 64, 64)
    assert image.min() >= 0 and image.max() <= 1.02
    assert image[0, 0] == 0 and image[32, 32] > 0


def test_phantom_is_seeded():
    spec = PhantomSpec(height=32, width=32)
    a, _ = make_phantom(spec, 7)
    b, _ = make_phantom(spec, 7)
    c, _ = make_phantom(spec, 8)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.max(np.abs(np.angle(a[np.abs(a) > 0]))) <= spec.phase_amplitude + 1e-12


def test_noiseless_acquisition_is_exact_and_normalized():
    spec = PhantomSpec(height=16, width=16, n_coils=4)
    x, maps = make_phantom(spec, 0)
    omega = equispaced_mask(16, 16, 2, 4)
    y = simulate_acquisition(x, maps, omega, 0.0, seed=1)
    assert np.max(np.abs(y.data)) == pytest.approx(1.0)
    assert np.all(y.data[:, ~omega.grid] == 0)
    np.testing.assert_allclose(y.physical(), apply_E(x, maps, omega).data, atol=1e-12)


def test_noise_has_requested_level():
    spec = PhantomSpec(height=64, width=64, n_coils=4)
    x, maps = make_phantom(spec, 0)
    full = SamplingMask.full((64, 64))
    clean = simulate_acquisition(x, maps, full, 0.0, seed=1).physical()
    noisy = simulate_acquisition(x, maps, full, 0.1, seed=1).physical()
    assert np.std(noisy - clean) == pytest.approx(0.1, rel=0.03)


def test_dataset_slices_differ_and_repeat(tiny_spec):
    a = make_dataset(tiny_spec, 3, seed=11)
    b = make_dataset(tiny_spec, 3, seed=11)
    assert [r.slice_id for r in a] == ["slice_0000", "slice_0001", "slice_0002"]
    for ra, rb in zip(a, b):
        np.testing.assert_array_equal(ra.full.data, rb.full.data)
    assert not np.allclose(a[0].reference, a[1].reference)


# ============================================
# UNDERSAMPLING MASKS
# ============================================

def test_equispaced_mask_density():
    omega = equispaced_mask(64, 32, 4, 8)
    rows = omega.grid.any(axis=1)
    assert np.all(omega.grid[rows].all(axis=1))
    assert rows.sum() == 16 + 8 - 2
    assert omega.descriptor["R"] == 4


def test_unit_acceleration_is_full():
    assert equispaced_mask(16, 16, 1, 0).count == 256
    assert sheared_mask(16, 16, 1, (0, 0)).count == 256


def test_sheared_mask_density_outside_block():
    omega = sheared_mask(64, 64, 4, (16, 16), shear=1)
    outside = ~np.pad(np.ones((16, 16), dtype=bool), 24)
    assert omega.grid[outside].mean() == pytest.approx(0.25, abs=1e-12)
    assert omega.grid[24:40, 24:40].all()
    assert omega.grid.sum(axis=1).min() >= 16


@pytest.mark.parametrize("build", [
    lambda: equispaced_mask(16, 16, 0, 4),
    lambda: equispaced_mask(16, 16, 2, 20),
    lambda: sheared_mask(16, 16, 2, (32, 32)),
])
def test_invalid_mask_arguments_raise(build):
    with pytest.raises(UsageError):
        build()
