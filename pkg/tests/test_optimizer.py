import numpy as np
import pytest

from execution.config import ResNetConfig
from execution.optimizer import adam_step
from execution.unrolled_network import MU_PARAM, init_params


BOWL = ResNetConfig(n_res_blocks=1, n_channels=1, kernel_size=1, io_bias=False)


def _bowl_params():
    params = init_params(BOWL, seed=0)
    start = np.array([0.5, -1.0, 0.8, 0.3, -0.6, 0.9, -0.2])
    offset = 0
    for name in params.names():
        n = params[name].size
        params.values[name] = start[offset:offset + n].reshape(params[name].shape).copy()
        offset += n
    return params


def _set_bowl_gradients(params):
    params.zero_grad()
    for name in params.names():
        params.accumulate_grad(name, 2.0 * params[name])


def test_adam_minimizes_quadratic_bowl():
    params = _bowl_params()
    for _ in range(500):
        _set_bowl_gradients(params)
        adam_step(params, lr=0.1)
    assert params.step == 500
    assert np.sqrt(sum(np.sum(v ** 2) for v in params.values.values())) < 1e-3


def test_first_step_moves_by_learning_rate():
    params = _bowl_params()
    before = {n: params[n].copy() for n in params.names()}
    _set_bowl_gradients(params)
    adam_step(params, lr=0.01)
    for name in params.names():
        np.testing.assert_allclose(params[name], before[name] - 0.01 * np.sign(before[name]), rtol=1e-6)


def test_zero_gradient_leaves_values_unchanged():
    params = _bowl_params()
    before = {n: params[n].copy() for n in params.names()}
    params.zero_grad()
    adam_step(params, lr=0.1)
    for name in params.names():
        np.testing.assert_array_equal(params[name], before[name])


def test_frozen_parameters_are_skipped():
    params = _bowl_params()
    params.frozen.add(MU_PARAM)
    mu_before = params[MU_PARAM].copy()
    _set_bowl_gradients(params)
    adam_step(params, lr=0.1)
    assert params[MU_PARAM] == mu_before
    assert MU_PARAM not in params.adam_m


def test_single_precision_is_kept():
    params = init_params(BOWL, dtype="float32")
    _set_bowl_gradients(params)
    adam_step(params, lr=0.1)
    assert all(params[n].dtype == np.float32 for n in params.names())
    assert params.mu == pytest.approx(np.exp(params[MU_PARAM]))
