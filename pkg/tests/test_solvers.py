import numpy as np
import pytest

from execution.config import DCConfig, PhantomSpec
from execution.errors import ConsistencyError, SolverError
from execution.metrics import nmse
from execution.mri_operators import CoilMaps, KSpaceVolume, SamplingMask, apply_E, zero_filled_init
from execution.phantom import coil_sensitivities, make_phantom, simulate_acquisition
from execution.sampling import equispaced_mask
from execution.solvers import cg_sense, conjugate_gradient, dc_solve, normal_operator
from execution.tensor import Tape, Tensor, exp, norm2
from tests.conftest import dense_encoding, random_complex, random_mask, random_maps


def _system(rng, n_coils=4, H=16, W=16):
    maps = random_maps(rng, n_coils, H, W)
    omega = random_mask(rng, H, W, 0.4)
    y = KSpaceVolume(random_complex(rng, (n_coils, H, W)) * omega.grid[None], omega)
    z = random_complex(rng, (H, W))
    return maps, omega, y, z


@pytest.mark.parametrize("mu", [0.01, 0.05, 1.0])
def test_dc_solve_matches_dense_solve(rng, mu):
    maps, omega, y, z = _system(rng)
    E = dense_encoding(maps, omega)
    A = E.conj().T @ E + mu * np.eye(E.shape[1])
    b = E.conj().T @ y.data.reshape(-1) + mu * z.ravel()
    expected = np.linalg.solve(A, b).reshape(z.shape)

    x = dc_solve(z, y, maps, omega, DCConfig(n_cg_iterations=2000, mu=mu))
    assert np.linalg.norm(x.data - expected) < 1e-8 * np.linalg.norm(expected)


def test_dc_solve_is_fixed_point_for_consistent_input(rng):
    maps, omega, _, _ = _system(rng)
    x_true = random_complex(rng, (16, 16))
    y = KSpaceVolume(apply_E(x_true, maps, omega).data, omega)
    x = dc_solve(x_true, y, maps, omega, DCConfig(n_cg_iterations=10, mu=0.05))
    np.testing.assert_allclose(x.data, x_true, atol=1e-10)


def test_dc_solve_with_empty_mask_returns_z(rng):
    maps, omega, y, z = _system(rng)
    empty = SamplingMask(np.zeros((16, 16), dtype=bool))
    x = dc_solve(z, y, maps, empty, DCConfig(n_cg_iterations=5, mu=0.5))
    np.testing.assert_allclose(x.data, z, atol=1e-12)


def test_dc_solve_rejects_singular_and_negative_mu(rng):
    maps, omega, y, z = _system(rng)
    empty = SamplingMask(np.zeros((16, 16), dtype=bool))
    with pytest.raises(SolverError):
        dc_solve(z, y, maps, empty, DCConfig(n_cg_iterations=5, mu=0.0))
    with pytest.raises(SolverError):
        dc_solve(z, y, maps, omega, DCConfig(), mu=Tensor(np.asarray(-1.0)))


def test_dc_solve_rejects_mask_outside_acquired(rng):
    maps, omega, y, z = _system(rng)
    with pytest.raises(ConsistencyError):
        dc_solve(z, y, maps, SamplingMask.full((16, 16)), DCConfig())


def test_cg_converges_on_well_conditioned_system(rng):
    maps, omega, y, z = _system(rng)
    rhs = Tensor(random_complex(rng, (16, 16)))
    _, history = conjugate_gradient(normal_operator(maps, omega, 1.0), rhs, Tensor(np.zeros((16, 16), complex)), 20)
    assert len(history) <= 21
    assert history[-1] < 1e-6 * history[0]


def test_dc_solve_is_differentiable_in_z_and_mu(rng):
    maps, omega, y, z = _system(rng, n_coils=2, H=6, W=6)
    cfg = DCConfig(n_cg_iterations=4)

    def loss(z_value, log_mu):
        tape = Tape()
        zt, mt = tape.leaf(z_value, "z"), tape.leaf(np.asarray(log_mu), "log_mu")
        out = norm2(dc_solve(zt, y, maps, omega, cfg, mu=exp(mt)))
        return out, tape.gradients(out)

    out, grads = loss(z, np.log(0.1))
    eps = 1e-6
    plus, _ = loss(z, np.log(0.1) + eps)
    minus, _ = loss(z, np.log(0.1) - eps)
    assert grads["log_mu"] == pytest.approx((plus.item() - minus.item()) / (2 * eps), rel=1e-5)

    d = np.zeros_like(z)
    d[2, 3] = 1.0
    plus, _ = loss(z + eps * d, np.log(0.1))
    minus, _ = loss(z - eps * d, np.log(0.1))
    assert grads["z"][2, 3].real == pytest.approx((plus.item() - minus.item()) / (2 * eps), rel=1e-5)


def test_cg_sense_recovers_noiseless_phantom_at_r2():
    spec = PhantomSpec(height=32, width=32, n_coils=8, jitter=0.0)
    x_true, maps = make_phantom(spec, seed=0)
    omega = equispaced_mask(32, 32, 2, 0)
    y = KSpaceVolume(apply_E(x_true, maps, omega).data, omega).normalized()
    x = cg_sense(y, maps, omega, n_iter=300, tol=1e-14).data * y.scale
    assert np.sum(np.abs(x - x_true) ** 2) / np.sum(np.abs(x_true) ** 2) < 1e-8


def test_cg_sense_rejects_empty_mask(rng):
    maps, omega, y, _ = _system(rng)
    with pytest.raises(SolverError):
        cg_sense(y, maps, SamplingMask(np.zeros((16, 16), dtype=bool)))


def test_single_coil_full_sampling_is_identity():
    maps = coil_sensitivities(PhantomSpec(height=8, width=8, n_coils=1))
    assert isinstance(maps, CoilMaps)
    rng = np.random.default_rng(0)
    x_true = random_complex(rng, (8, 8))
    full = SamplingMask.full((8, 8))
    y = KSpaceVolume(apply_E(x_true, maps, full).data, full)
    np.testing.assert_allclose(cg_sense(y, maps, full, n_iter=5).data, x_true, atol=1e-10)


def test_dc_solve_with_huge_penalty_returns_z(rng):
    maps, omega, y, z = _system(rng)
    x = dc_solve(z, y, maps, omega, DCConfig(n_cg_iterations=10, mu=1e6))
    assert np.linalg.norm(x.data - z) / np.linalg.norm(z) < 1e-4


def test_cg_sense_tikhonov_shrinks_norm(rng):
    maps, omega, y, _ = _system(rng)
    norms = [np.linalg.norm(cg_sense(y, maps, omega, n_iter=100, l2_reg=lam).data) for lam in (0.01, 0.1, 1.0, 10.0)]
    assert all(a > b for a, b in zip(norms, norms[1:]))


def test_cg_sense_degrades_with_acceleration():
    spec = PhantomSpec(height=32, width=32, n_coils=8, noise_std=0.05)
    x_true, maps = make_phantom(spec, seed=2)
    errors = []
    for R in (2, 8):
        omega = equispaced_mask(32, 32, R, 4)
        y = simulate_acquisition(x_true, maps, omega, spec.noise_std, seed=3)
        x = cg_sense(y, maps, omega, n_iter=50).data * y.scale
        errors.append(np.sum(np.abs(x - x_true) ** 2) / np.sum(np.abs(x_true) ** 2))
    assert errors[1] > errors[0]


def test_zero_filled_aliases_more_than_cg_sense_at_r4():
    spec = PhantomSpec(height=32, width=32, n_coils=8, jitter=0.0)
    x_true, maps = make_phantom(spec, seed=1)
    omega = equispaced_mask(32, 32, 4, 8)
    y = KSpaceVolume(apply_E(x_true, maps, omega).data, omega).normalized()

    zero_filled = zero_filled_init(y, maps, omega).data * y.scale
    sense = cg_sense(y, maps, omega, n_iter=100).data * y.scale
    assert nmse(x_true, zero_filled) > 10 * nmse(x_true, sense)
