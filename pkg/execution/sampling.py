"""
Retrospective undersampling masks
Rows (axis 0) are the phase-encode direction; columns are fully sampled for 1-D patterns
"""
from typing import Tuple

import numpy as np

from execution.errors import UsageError
from execution.mri_operators import SamplingMask
from execution.partition import center_block


def equispaced_mask(H: int, W: int, R: int, acs_lines: int, offset: int = 0) -> SamplingMask:
    """
    Every R-th phase-encode line plus a centered block of ACS lines

    Args:
        H, W: grid size
        R: acceleration (integer >= 1)
        acs_lines: fully-sampled center lines (<= H)
        offset: first sampled line modulo R

    Returns:
        Omega mask
    """
    if R < 1:
        raise UsageError(f"acceleration must be >= 1, got {R}")
    if not 0 <= acs_lines <= H:
        raise UsageError(f"acs_lines must be in [0, {H}], got {acs_lines}")

    grid = np.zeros((H, W), dtype=bool)
    grid[offset % R::R, :] = True
    start = H // 2 - acs_lines // 2
    grid[start:start + acs_lines, :] = True
    return SamplingMask(grid, "omega", {"scheme": "equispaced", "R": R, "acs": acs_lines, "offset": offset})


def sheared_mask(H: int, W: int, R: int, acs_block: Tuple[int, int] = (32, 32), shear: int = 1) -> SamplingMask:
    """
    2-D uniform pattern with a per-row shift, plus a fully-sampled center block

    Row ky samples every R-th column starting at (ky * shear) mod R, so the
    sampling density is 1/R outside the calibration block.

    Args:
        H, W: grid size (ky, kz)
        R: acceleration
        acs_block: centered fully-sampled block
        shear: column shift per row

    Returns:
        Omega mask
    """
    if R < 1:
        raise UsageError(f"acceleration must be >= 1, got {R}")
    if acs_block[0] > H or acs_block[1] > W or min(acs_block) < 0:
        raise UsageError(f"ACS block {acs_block} does not fit in grid {(H, W)}")

    ky, kz = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    grid = (kz - ky * shear) % R == 0
    grid |= center_block((H, W), tuple(acs_block))
    return SamplingMask(grid, "omega", {"scheme": "sheared", "R": R, "acs": f"{acs_block[0]}x{acs_block[1]}", "shear": shear})
