"""
Training losses
Normalized l1-l2 loss, self-supervised k-space loss on Lambda, supervised image/k-space losses
"""
from typing import Any, Optional

import numpy as np

from execution.config import UnrollConfig
from execution.errors import ConsistencyError, DegenerateReferenceError, DimensionError, LossUndefinedError, UsageError
from execution.mri_operators import (
    CoilMaps,
    KSpaceVolume,
    SamplingMask,
    apply_E,
    ifft2_centered,
    sense1_combine,
)
from execution.tensor import Tape, Tensor, add, as_tensor, div, norm1, norm2, sub
from execution.unrolled_network import ParamStore, unrolled_forward


def normalized_l1l2_loss(u: Any, v: Any) -> Tensor:
    """
    ||u - v||_2 / ||u||_2 + ||u - v||_1 / ||u||_1 over complex moduli

    u is the reference and is not differentiated; v may be tracked.

    Raises:
        DimensionError: shapes differ
        DegenerateReferenceError: u is identically zero
    """
    u, v = as_tensor(u), as_tensor(v)
    if u.shape != v.shape:
        raise DimensionError(f"loss operands differ in shape: {u.shape} vs {v.shape}")
    u_l2 = float(norm2(u.detach()).item())
    u_l1 = float(norm1(u.detach()).item())
    if u_l2 == 0:
        raise DegenerateReferenceError("loss reference is identically zero")

    d = sub(u.detach(), v)
    real = d.data.real.dtype
    return add(
        div(norm2(d), Tensor(np.asarray(u_l2, dtype=real))),
        div(norm1(d), Tensor(np.asarray(u_l1, dtype=real))),
    )


def ssdu_loss_from_output(x_hat: Tensor, y: KSpaceVolume, maps: CoilMaps, lam: SamplingMask) -> Tensor:
    """L(y_Lambda, E_Lambda x_hat) over the Lambda entries of every coil"""
    if lam.is_empty:
        raise LossUndefinedError(f"slice {y.slice_id}: loss mask is empty")
    if not lam.is_subset_of(y.acquired_mask):
        raise ConsistencyError(f"slice {y.slice_id}: loss mask is not a subset of the acquired indices")
    reference = np.where(lam.grid[None], y.data, 0)
    return normalized_l1l2_loss(reference, apply_E(x_hat, maps, lam))


def ssdu_loss(
    y: KSpaceVolume,
    maps: CoilMaps,
    theta: SamplingMask,
    lam: SamplingMask,
    params: ParamStore,
    cfg: UnrollConfig,
    tape: Optional[Tape] = None,
) -> Tensor:
    """
    Self-supervised loss: network run with Theta in DC, compared to measurements on Lambda

    Raises:
        LossUndefinedError: empty Lambda
        ConsistencyError: Theta or Lambda not a subset of the acquired indices
    """
    if lam.is_empty:
        raise LossUndefinedError(f"slice {y.slice_id}: loss mask is empty")
    if not theta.is_subset_of(y.acquired_mask) or not lam.is_subset_of(y.acquired_mask):
        raise ConsistencyError(f"slice {y.slice_id}: Theta/Lambda not subsets of the acquired indices")
    x_hat = unrolled_forward(y, maps, theta, params, cfg, tape)
    return ssdu_loss_from_output(x_hat, y, maps, lam)


def sense1_reference(y_full: KSpaceVolume, maps: CoilMaps) -> np.ndarray:
    """SENSE-1 image of fully-sampled k-space, in the normalized units of y_full"""
    return sense1_combine(ifft2_centered(Tensor(y_full.data)), maps).data


def supervised_loss_from_output(
    x_hat: Tensor,
    y_full: Optional[KSpaceVolume],
    maps: CoilMaps,
    mode: str,
    x_ref: Optional[np.ndarray] = None,
) -> Tensor:
    """
    Supervised loss of a network output

    image mode: L(x_ref, x_hat); k-space mode: L(y_full, E_full x_hat).
    """
    if y_full is None:
        raise UsageError("supervised loss needs fully-sampled reference k-space")
    if mode == "supervised_image":
        if x_ref is None:
            x_ref = sense1_reference(y_full, maps)
        return normalized_l1l2_loss(x_ref, x_hat)
    if mode == "supervised_kspace":
        return normalized_l1l2_loss(y_full.data, apply_E(x_hat, maps, None))
    raise UsageError(f"unknown supervised mode {mode!r}")


def supervised_loss(
    y_full: Optional[KSpaceVolume],
    x_ref: Optional[np.ndarray],
    mode: str,
    y: KSpaceVolume,
    maps: CoilMaps,
    params: ParamStore,
    cfg: UnrollConfig,
    tape: Optional[Tape] = None,
) -> Tensor:
    """
    Supervised loss with all acquired samples in DC

    Args:
        y_full: fully-sampled k-space in the same normalized units as y
        x_ref: SENSE-1 reference (computed from y_full when None)
        mode: supervised_kspace | supervised_image
        y: undersampled input k-space
        maps, params, cfg, tape: as for unrolled_forward

    Raises:
        UsageError: missing reference or unknown mode
    """
    if y_full is None:
        raise UsageError(f"slice {y.slice_id}: supervised training needs fully-sampled reference k-space")
    x_hat = unrolled_forward(y, maps, y.acquired_mask, params, cfg, tape)
    return supervised_loss_from_output(x_hat, y_full, maps, mode, x_ref)
