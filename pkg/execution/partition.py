"""
Loss-mask selection
Splits the acquired set Omega into Theta (data consistency) and Lambda (loss)
"""
import math
from typing import Tuple

import numpy as np
from loguru import logger

from execution.config import PartitionPolicy
from execution.errors import PolicyError
from execution.mri_operators import SamplingMask


# rejection-sampling rounds before giving up on a Gaussian draw
MAX_GAUSSIAN_ROUNDS = 10_000


def center_block(shape: Tuple[int, int], size: Tuple[int, int]) -> np.ndarray:
    """Boolean grid with a centered block of the given size (DC at H//2, W//2)"""
    H, W = shape
    bh, bw = size
    if bh > H or bw > W:
        raise PolicyError(f"center block {size} does not fit in grid {shape}")
    block = np.zeros(shape, dtype=bool)
    y0, x0 = H // 2 - bh // 2, W // 2 - bw // 2
    block[y0:y0 + bh, x0:x0 + bw] = True
    return block


def _gaussian_draw(candidates: np.ndarray, n: int, std_fraction: float, rng: np.random.Generator) -> np.ndarray:
    """
    Variable-density selection of n candidate indices by rejection sampling

    Points are drawn from a 2-D Gaussian centered on the k-space center with
    sigma = std_fraction * extent per axis, rounded to the grid and accepted when
    they hit an unused candidate.
    """
    H, W = candidates.shape
    sigma_y, sigma_x = std_fraction * H, std_fraction * W
    flat_candidates = candidates.ravel()
    chosen = np.zeros(H * W, dtype=bool)
    picked = []

    for _ in range(MAX_GAUSSIAN_ROUNDS):
        missing = n - len(picked)
        if missing == 0:
            return np.asarray(picked, dtype=np.int64)
        batch = max(64, 4 * missing)
        ky = np.rint(rng.normal(H // 2, sigma_y, batch)).astype(np.int64)
        kx = np.rint(rng.normal(W // 2, sigma_x, batch)).astype(np.int64)
        inside = (ky >= 0) & (ky < H) & (kx >= 0) & (kx < W)
        flat = ky[inside] * W + kx[inside]

        _, first = np.unique(flat, return_index=True)
        flat = flat[np.sort(first)]
        flat = flat[flat_candidates[flat] & ~chosen[flat]][:missing]

        chosen[flat] = True
        picked.extend(flat.tolist())

    raise PolicyError(f"Gaussian selection did not collect {n} points in {MAX_GAUSSIAN_ROUNDS} rounds")


def partition_mask(omega: SamplingMask, policy: PartitionPolicy, slice_seed: int) -> Tuple[SamplingMask, SamplingMask]:
    """
    Split Omega into (Theta, Lambda)

    |Lambda| = round(rho * |Omega|) drawn without replacement from Omega minus the
    protected center block; Theta = Omega \\ Lambda plus, for overlap_fraction > 0,
    that fraction of Lambda chosen uniformly. The protected block always stays in Theta.

    Args:
        omega: acquired locations
        policy: selection scheme, rho, overlap, protected center
        slice_seed: seed of this slice's draw

    Returns:
        (theta, lambda) masks

    Raises:
        PolicyError: empty Omega, Lambda would be empty, or rho exhausts Omega minus the center
    """
    if omega.is_empty:
        raise PolicyError("cannot partition an empty mask")

    descriptor = {
        "scheme": policy.scheme,
        "seed": slice_seed,
        "rho": policy.rho,
        "overlap_fraction": policy.overlap_fraction,
    }

    if policy.identical:
        descriptor.update(scheme="identical", rho=1.0, overlap_fraction=1.0)
        return omega.with_kind("theta", **descriptor), omega.with_kind("lambda", **descriptor)

    protected = center_block(omega.shape, policy.center_keep) & omega.grid
    candidates = omega.grid & ~protected
    n_candidates = int(candidates.sum())
    n_lambda = int(math.floor(policy.rho * omega.count + 0.5))

    if n_lambda < 1:
        raise PolicyError(f"rho = {policy.rho} selects no loss points from |Omega| = {omega.count}")
    if n_lambda > n_candidates:
        raise PolicyError(
            f"rho = {policy.rho} needs {n_lambda} loss points but only {n_candidates} "
            f"are outside the protected center block"
        )

    rng = np.random.default_rng(slice_seed)
    if policy.scheme == "uniform":
        picked = rng.choice(np.flatnonzero(candidates), size=n_lambda, replace=False)
    else:
        picked = _gaussian_draw(candidates, n_lambda, policy.gaussian_std_fraction, rng)

    lam = np.zeros(omega.shape, dtype=bool)
    lam.flat[picked] = True
    theta = omega.grid & ~lam

    n_overlap = int(math.floor(policy.overlap_fraction * n_lambda + 0.5))
    if n_overlap > 0:
        shared = rng.choice(np.flatnonzero(lam), size=n_overlap, replace=False)
        theta.flat[shared] = True

    logger.debug(
        f"Partition seed {slice_seed}: |Omega|={omega.count} |Theta|={int(theta.sum())} "
        f"|Lambda|={n_lambda} overlap={n_overlap} ({policy.scheme})"
    )
    return SamplingMask(theta, "theta", descriptor), SamplingMask(lam, "lambda", descriptor)
