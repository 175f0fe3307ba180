import numpy as np
import pytest

from execution.config import PartitionPolicy
from execution.errors import PolicyError
from execution.mri_operators import SamplingMask
from execution.partition import center_block, partition_mask
from execution.sampling import equispaced_mask


@pytest.fixture
def omega():
    return equispaced_mask(32, 32, 4, 8)


@pytest.mark.parametrize("scheme", ["uniform", "gaussian"])
def test_disjoint_partition_covers_omega(omega, scheme):
    policy = PartitionPolicy(rho=0.4, scheme=scheme)
    theta, lam = partition_mask(omega, policy, 7)

    assert not np.any(theta.grid & lam.grid)
    np.testing.assert_array_equal(theta.grid | lam.grid, omega.grid)
    assert lam.count == int(np.floor(0.4 * omega.count + 0.5))
    assert theta.kind == "theta" and lam.kind == "lambda"
    assert lam.descriptor["seed"] == 7


def test_center_block_stays_in_theta(omega):
    policy = PartitionPolicy(rho=0.6, center_keep=(4, 4))
    theta, lam = partition_mask(omega, policy, 0)
    block = center_block(omega.shape, (4, 4)) & omega.grid
    assert np.all(theta.grid[block])
    assert not np.any(lam.grid[block])


@pytest.mark.parametrize("fraction", [0.25, 0.5, 1.0])
def test_overlap_reincludes_fraction_of_lambda(omega, fraction):
    theta, lam = partition_mask(omega, PartitionPolicy(rho=0.4, overlap_fraction=fraction), 3)
    shared = int(np.sum(theta.grid & lam.grid))
    assert abs(shared - fraction * lam.count) <= 1
    np.testing.assert_array_equal(theta.grid | lam.grid, omega.grid)


def test_identical_policy_returns_omega_twice(omega):
    theta, lam = partition_mask(omega, PartitionPolicy(identical=True), 0)
    np.testing.assert_array_equal(theta.grid, omega.grid)
    np.testing.assert_array_equal(lam.grid, omega.grid)
    assert lam.descriptor["scheme"] == "identical"


def test_same_seed_same_partition(omega):
    policy = PartitionPolicy(rho=0.3)
    a, b = partition_mask(omega, policy, 42), partition_mask(omega, policy, 42)
    np.testing.assert_array_equal(a[1].grid, b[1].grid)
    c = partition_mask(omega, policy, 43)
    assert not np.array_equal(a[1].grid, c[1].grid)


def test_slice_seed_follows_vary_flag():
    varying = PartitionPolicy(per_slice_seed_base=100)
    fixed = PartitionPolicy(per_slice_seed_base=100, vary_across_slices=False)
    assert [varying.slice_seed(i) for i in range(3)] == [100, 101, 102]
    assert [fixed.slice_seed(i) for i in range(3)] == [100, 100, 100]


def test_gaussian_scheme_concentrates_near_center():
    full = SamplingMask.full((32, 32))
    yy, xx = np.mgrid[:32, :32]
    radius = np.hypot(yy - 16, xx - 16)

    def mean_radius(scheme):
        _, lam = partition_mask(full, PartitionPolicy(rho=0.1, scheme=scheme, gaussian_std_fraction=0.1), 5)
        return radius[lam.grid].mean()

    assert mean_radius("gaussian") < 0.6 * mean_radius("uniform")


def test_empty_omega_raises():
    with pytest.raises(PolicyError):
        partition_mask(SamplingMask(np.zeros((8, 8), dtype=bool)), PartitionPolicy(), 0)


def test_rho_selecting_nothing_raises():
    grid = np.zeros((8, 8), dtype=bool)
    grid[4, 4] = True
    with pytest.raises(PolicyError):
        partition_mask(SamplingMask(grid), PartitionPolicy(rho=0.4, center_keep=(0, 0)), 0)


def test_rho_exhausting_candidates_raises():
    grid = center_block((16, 16), (4, 4))
    grid[0, 0] = grid[0, 1] = True
    with pytest.raises(PolicyError):
        partition_mask(SamplingMask(grid), PartitionPolicy(rho=0.9, center_keep=(4, 4)), 0)


def test_center_block_larger_than_grid_raises():
    with pytest.raises(PolicyError):
        center_block((8, 8), (10, 2))
