"""
Adam optimizer over a ParamStore
"""
from typing import Optional

import numpy as np

from execution.unrolled_network import ParamStore


def adam_step(
    params: ParamStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    t: Optional[int] = None,
) -> ParamStore:
    """
    One bias-corrected Adam update in place

    Args:
        params: store with populated gradients; moments persist in it
        lr: step size
        beta1, beta2: moment decay rates
        eps: denominator guard
        t: 1-based step index (defaults to params.step + 1)

    Returns:
        The same store, updated
    """
    t = params.step + 1 if t is None else t

    for name, value in params.values.items():
        if name in params.frozen:
            continue
        g = params.grads[name]
        m = params.adam_m.get(name, np.zeros_like(value))
        v = params.adam_v.get(name, np.zeros_like(value))

        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)

        params.values[name] = (value - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(value.dtype, copy=False)
        params.adam_m[name] = m
        params.adam_v[name] = v

    params.step = t
    return params
