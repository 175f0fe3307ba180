"""
Conjugate-gradient solvers
Data-consistency subproblem of the unrolled network and the CG-SENSE baseline
"""
import math
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
from loguru import logger

from execution.config import DCConfig
from execution.errors import ConsistencyError, SolverError
from execution.mri_operators import CoilMaps, KSpaceVolume, SamplingMask, apply_E, apply_EH
from execution.tensor import Tensor, as_tensor, scale, vdot_real


# relative residual at which a system counts as solved to working precision
EXACT_RESIDUAL = 1e-14


def conjugate_gradient(
    apply_A: Callable[[Tensor], Tensor],
    rhs: Tensor,
    x0: Tensor,
    n_iter: int,
    tol: Optional[float] = None,
) -> Tuple[Tensor, List[float]]:
    """
    Standard CG recurrences on tensors, recorded on the tape when operands are tracked

    Args:
        apply_A: Hermitian positive (semi)definite operator
        rhs: right-hand side
        x0: start vector
        n_iter: maximum number of iterations
        tol: optional relative residual stopping threshold

    Returns:
        (solution, residual norm history starting with the initial residual)
    """
    rhs_sq = float(np.real(np.vdot(rhs.data, rhs.data)))
    x = x0
    r = rhs - apply_A(x0)
    p = r
    rs_old = vdot_real(r, r)
    history = [math.sqrt(rs_old.item())]

    for i in range(n_iter):
        rs = rs_old.item()
        if rs <= (EXACT_RESIDUAL ** 2) * rhs_sq:
            logger.warning(f"CG: residual vanished after {i} iterations")
            break
        if tol is not None and math.sqrt(rs) <= tol * math.sqrt(rhs_sq):
            logger.debug(f"CG: converged after {i} iterations (rel. residual {math.sqrt(rs / rhs_sq):.2e})")
            break

        Ap = apply_A(p)
        alpha = rs_old / vdot_real(p, Ap)
        x = x + alpha * p
        r = r - alpha * Ap
        rs_new = vdot_real(r, r)
        history.append(math.sqrt(rs_new.item()))
        p = r + (rs_new / rs_old) * p
        rs_old = rs_new

    return x, history


def normal_operator(maps: CoilMaps, mask: SamplingMask, mu: Union[Tensor, float]) -> Callable[[Tensor], Tensor]:
    """v -> (E^H E + mu I) v"""
    if isinstance(mu, Tensor):
        return lambda v: apply_EH(apply_E(v, maps, mask), maps, mask) + mu * v
    return lambda v: apply_EH(apply_E(v, maps, mask), maps, mask) + scale(v, mu)


def dc_solve(
    z: Tensor,
    y: KSpaceVolume,
    maps: CoilMaps,
    mask: SamplingMask,
    cfg: DCConfig,
    mu: Optional[Tensor] = None,
) -> Tensor:
    """
    Data-consistency unit: solve (E^H E + mu I) x = E^H y + mu z by unrolled CG

    Exactly cfg.n_cg_iterations steps warm-started at z; every step is recorded on
    the tape of z / mu when they are tracked.

    Args:
        z: regularizer output [H, W]
        y: measured k-space (restricted to mask inside the solve)
        maps: coil sensitivities
        mask: k-space locations used for consistency
        cfg: CG iterations and default penalty
        mu: penalty as a (possibly trainable) scalar tensor, overrides cfg.mu

    Returns:
        x [H, W]

    Raises:
        SolverError: mu = 0 with an empty mask
        ConsistencyError: mask not a subset of y's acquired indices
    """
    z = as_tensor(z)
    mu_t = Tensor(np.asarray(cfg.mu, dtype=z.data.real.dtype)) if mu is None else mu
    mu_value = float(mu_t.item())
    if mu_value < 0:
        raise SolverError(f"penalty mu must be nonnegative, got {mu_value}")
    if mu_value == 0 and mask.is_empty:
        raise SolverError("singular data-consistency system: mu = 0 and empty mask")
    if not mask.is_subset_of(y.acquired_mask):
        raise ConsistencyError(f"slice {y.slice_id}: DC mask is not a subset of the acquired indices")

    rhs = apply_EH(y.data, maps, mask) + mu_t * z
    x, history = conjugate_gradient(normal_operator(maps, mask, mu_t), rhs, z, cfg.n_cg_iterations)
    if len(history) <= cfg.n_cg_iterations:
        logger.debug(f"dc_solve: system solved exactly after {len(history) - 1} of {cfg.n_cg_iterations} steps")
    return x


def cg_sense(
    y: KSpaceVolume,
    maps: CoilMaps,
    mask: SamplingMask,
    n_iter: int = 50,
    l2_reg: float = 0.0,
    tol: float = 1e-9,
) -> Tensor:
    """
    CG-SENSE: CG on (E^H E + l2_reg I) x = E^H y from a zero start

    Args:
        y: measured k-space
        maps: coil sensitivities
        mask: sampled locations (nonempty)
        n_iter: maximum iterations
        l2_reg: Tikhonov weight
        tol: relative residual stopping threshold

    Returns:
        x [H, W] in the normalized units of y

    Raises:
        SolverError: empty mask or negative regularization
    """
    if mask.is_empty:
        raise SolverError("CG-SENSE needs a nonempty sampling mask")
    if l2_reg < 0:
        raise SolverError(f"l2_reg must be nonnegative, got {l2_reg}")
    if n_iter < 1:
        raise SolverError(f"n_iter must be positive, got {n_iter}")
    if not mask.is_subset_of(y.acquired_mask):
        raise ConsistencyError(f"slice {y.slice_id}: mask is not a subset of the acquired indices")

    rhs = apply_EH(y.data, maps, mask)
    x0 = Tensor(np.zeros(maps.image_shape, dtype=rhs.dtype))
    x, history = conjugate_gradient(normal_operator(maps, mask, l2_reg), rhs, x0, n_iter, tol=tol)
    logger.debug(f"CG-SENSE slice {y.slice_id}: {len(history) - 1} iterations, final residual {history[-1]:.3e}")
    return x
