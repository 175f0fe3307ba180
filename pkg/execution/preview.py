"""
Greymap previews of reconstructions
8-bit PGM files of image magnitudes, windowed to a high percentile
"""
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from loguru import logger
from PIL import Image

from execution.errors import UsageError


WINDOW_PERCENTILE = 99.5


def to_grey(image: np.ndarray, vmax: Optional[float] = None) -> np.ndarray:
    """Magnitude scaled to uint8 with [0, vmax] -> [0, 255]; vmax defaults to the 99.5th percentile"""
    magnitude = np.abs(np.asarray(image))
    if vmax is None:
        vmax = float(np.percentile(magnitude, WINDOW_PERCENTILE))
    if vmax <= 0:
        vmax = 1.0
    return np.round(np.clip(magnitude / vmax, 0.0, 1.0) * 255).astype(np.uint8)


def write_preview(image: np.ndarray, path: Path, upscale: int = 1, vmax: Optional[float] = None) -> Path:
    """
    Save a binary PGM of |image|

    Args:
        image: 2-D image (complex or real)
        path: destination (.pgm)
        upscale: nearest-neighbour magnification
        vmax: window maximum (percentile window when None)
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img = Image.fromarray(to_grey(image, vmax))
    if upscale > 1:
        img = img.resize((img.width * upscale, img.height * upscale), Image.Resampling.NEAREST)
    img.save(path, "PPM")
    logger.debug(f"Saved preview: {path}")
    return path


def write_strip(images: Sequence[np.ndarray], path: Path, upscale: int = 1) -> Path:
    """Side-by-side panels sharing the window of the first image (typically the reference)"""
    if not images:
        raise UsageError("no images to tile")
    vmax = float(np.percentile(np.abs(images[0]), WINDOW_PERCENTILE))
    strip = np.concatenate([np.abs(im) for im in images], axis=1)
    return write_preview(strip, path, upscale=upscale, vmax=vmax)
