"""
Reconstruction quality metrics and the metrics CSV
"""
import csv
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel
from scipy.ndimage import uniform_filter

from execution.errors import DegenerateReferenceError, DimensionError


SSIM_WINDOW = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def nmse(ref: np.ndarray, est: np.ndarray) -> float:
    """||est - ref||^2 / ||ref||^2 (squared-norm convention)"""
    ref, est = np.asarray(ref), np.asarray(est)
    if ref.shape != est.shape:
        raise DimensionError(f"NMSE operands differ in shape: {ref.shape} vs {est.shape}")
    denom = float(np.sum(np.abs(ref) ** 2))
    if denom == 0:
        raise DegenerateReferenceError("NMSE reference is identically zero")
    return float(np.sum(np.abs(est - ref) ** 2)) / denom


def ssim(
    ref: np.ndarray,
    est: np.ndarray,
    window: int = SSIM_WINDOW,
    k1: float = SSIM_K1,
    k2: float = SSIM_K2,
    data_range: Optional[float] = None,
) -> float:
    """
    Structural similarity of two real images

    Uniform window x window statistics with sample covariance, averaged over the
    windows that lie fully inside the image. data_range defaults to max |ref|.
    """
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape or ref.ndim != 2:
        raise DimensionError(f"SSIM needs two equal 2-D images, got {ref.shape} and {est.shape}")
    if window < 1 or window % 2 == 0 or window > min(ref.shape):
        raise DimensionError(f"SSIM window {window} must be odd and fit in {ref.shape}")

    L = float(np.max(np.abs(ref))) if data_range is None else float(data_range)
    if L <= 0:
        raise DegenerateReferenceError("SSIM data range is zero")
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2

    n = window * window
    cov_norm = n / (n - 1) if n > 1 else 1.0
    mean = lambda a: uniform_filter(a, size=window)  # noqa: E731

    ux, uy = mean(ref), mean(est)
    vx = cov_norm * (mean(ref * ref) - ux * ux)
    vy = cov_norm * (mean(est * est) - uy * uy)
    vxy = cov_norm * (mean(ref * est) - ux * uy)

    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
    pad = (window - 1) // 2
    if pad:
        s = s[pad:-pad, pad:-pad]
    return float(s.mean())


def compare_images(ref: np.ndarray, est: np.ndarray) -> Tuple[float, float]:
    """(NMSE on complex images, SSIM on magnitudes)"""
    return nmse(ref, est), ssim(np.abs(ref), np.abs(est))


class MetricsRow(BaseModel):
    """One evaluated reconstruction"""

    slice_id: str
    method: str
    R: Optional[float] = None
    rho: Optional[float] = None
    scheme: Optional[str] = None
    overlap: Optional[str] = None
    nmse: Optional[float] = None
    ssim: Optional[float] = None
    loss: Optional[float] = None
    wall_time_s: Optional[float] = None


CSV_COLUMNS = [
    "slice_id", "method", "R", "rho", "scheme", "overlap",
    "nmse_sqnorm", "ssim", "loss", "wall_time_s",
    "ssim_window", "ssim_k1", "ssim_k2", "ssim_data_range",
]


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(rows: Sequence[MetricsRow], path: Path, include_timing: bool = True) -> Path:
    """
    Write rows stably sorted by (slice_id, method)

    NMSE uses the squared-norm convention; the SSIM settings are repeated on every row.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ordered = sorted(rows, key=lambda r: (r.slice_id, r.method))
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in ordered:
            writer.writerow([
                r.slice_id, r.method, _cell(r.R), _cell(r.rho), _cell(r.scheme), _cell(r.overlap),
                _cell(r.nmse), _cell(r.ssim), _cell(r.loss),
                _cell(r.wall_time_s) if include_timing else "",
                SSIM_WINDOW, SSIM_K1, SSIM_K2, "max_abs_ref",
            ])
    logger.info(f"Wrote {len(ordered)} metric rows to {path}")
    return path
