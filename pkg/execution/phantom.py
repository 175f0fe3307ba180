"""
Synthetic multi-coil data
Shepp-Logan-type phantoms with smooth phase, ring-array coil sensitivities, noisy acquisition
"""
import math
from typing import List, Sequence, Tuple

import numpy as np
from loguru import logger

from execution.config import Ellipse, PhantomSpec
from execution.dataset import SliceRecord, slice_name
from execution.mri_operators import CoilMaps, KSpaceVolume, SamplingMask, apply_E, reference_image


def _grid(H: int, W: int) -> Tuple[np.ndarray, np.ndarray]:
    """Pixel-center coordinates in [-1, 1]"""
    yy = (np.arange(H) - H / 2 + 0.5) / (H / 2)
    xx = (np.arange(W) - W / 2 + 0.5) / (W / 2)
    return np.meshgrid(yy, xx, indexing="ij")


def rasterize_ellipses(ellipses: Sequence[Ellipse], H: int, W: int) -> np.ndarray:
    """Sum of ellipse indicators, clipped to [0, 1.02]"""
    yy, xx = _grid(H, W)
    image = np.zeros((H, W))
    for e in ellipses:
        th = math.radians(e.angle_deg)
        dy, dx = yy - e.center_y, xx - e.center_x
        xr = dx * math.cos(th) + dy * math.sin(th)
        yr = -dx * math.sin(th) + dy * math.cos(th)
        image[(xr / e.axis_x) ** 2 + (yr / e.axis_y) ** 2 <= 1.0] += e.intensity
    return np.clip(image, 0.0, 1.02)


def jitter_ellipses(ellipses: Sequence[Ellipse], jitter: float, rng: np.random.Generator) -> List[Ellipse]:
    """Perturb centers, axes and angles so slices differ"""
    if jitter == 0:
        return list(ellipses)
    out = []
    for e in ellipses:
        dy, dx, sy, sx, da = rng.uniform(-1, 1, size=5)
        out.append(e.model_copy(update={
            "center_y": e.center_y + jitter * dy,
            "center_x": e.center_x + jitter * dx,
            "axis_y": e.axis_y * (1 + jitter * sy),
            "axis_x": e.axis_x * (1 + jitter * sx),
            "angle_deg": e.angle_deg + 45 * jitter * da,
        }))
    return out


def smooth_phase(H: int, W: int, amplitude: float, rng: np.random.Generator) -> np.ndarray:
    """Random second-order polynomial phase with peak |phase| = amplitude"""
    if amplitude == 0:
        return np.zeros((H, W))
    yy, xx = _grid(H, W)
    basis = np.stack([np.ones_like(yy), yy, xx, yy * yy, yy * xx, xx * xx])
    phase = np.tensordot(rng.uniform(-1, 1, size=len(basis)), basis, axes=1)
    peak = np.max(np.abs(phase))
    return amplitude * phase / peak if peak > 0 else phase


def coil_sensitivities(spec: PhantomSpec) -> CoilMaps:
    """
    Gaussian bumps on a ring around the object, each with its own phase ramp

    Normalized so the root-sum-of-squares is 1 at every pixel; one coil gives all-ones maps.
    """
    H, W = spec.height, spec.width
    if spec.n_coils == 1:
        return CoilMaps(np.ones((1, H, W), dtype=np.complex128))

    yy, xx = _grid(H, W)
    width = 2 * spec.coil_bump_width
    maps = []
    for c in range(spec.n_coils):
        angle = 2 * math.pi * c / spec.n_coils
        cy, cx = spec.coil_ring_radius * math.sin(angle), spec.coil_ring_radius * math.cos(angle)
        magnitude = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
        ramp = 0.5 * math.pi * ((yy - cy) * math.sin(angle) + (xx - cx) * math.cos(angle))
        maps.append(magnitude * np.exp(1j * (angle + ramp)))
    maps = np.stack(maps)
    maps /= np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return CoilMaps(maps)


def make_phantom(spec: PhantomSpec, seed: int) -> Tuple[np.ndarray, CoilMaps]:
    """
    Complex ground-truth image and coil maps for one slice

    Returns:
        (x_true [H, W] complex128, maps)
    """
    rng = np.random.default_rng(seed)
    ellipses = jitter_ellipses(spec.ellipses, spec.jitter, rng)
    magnitude = rasterize_ellipses(ellipses, spec.height, spec.width)
    phase = smooth_phase(spec.height, spec.width, spec.phase_amplitude, rng)
    return magnitude * np.exp(1j * phase), coil_sensitivities(spec)


def simulate_acquisition(
    x_true: np.ndarray,
    maps: CoilMaps,
    omega: SamplingMask,
    noise_std: float,
    seed: int,
    slice_id: str = "0",
) -> KSpaceVolume:
    """
    y = mask * (E_full x_true + n), n complex white Gaussian with std noise_std per sample

    The result is normalized to unit peak modulus.
    """
    rng = np.random.default_rng(seed)
    k = apply_E(x_true, maps, None).data
    if noise_std > 0:
        sigma = noise_std / math.sqrt(2)
        k = k + sigma * (rng.standard_normal(k.shape) + 1j * rng.standard_normal(k.shape))
    y = np.where(omega.grid[None], k, 0)
    return KSpaceVolume(y, omega, slice_id).normalized()


def make_dataset(spec: PhantomSpec, n_slices: int, seed: int) -> List[SliceRecord]:
    """
    Fully-sampled slices with references

    Each slice draws its phantom and noise from its own child of SeedSequence(seed).
    """
    records = []
    full = SamplingMask.full((spec.height, spec.width))
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n_slices)):
        phantom_seed, noise_seed = child.generate_state(2)
        x_true, maps = make_phantom(spec, int(phantom_seed))
        sid = slice_name(i)
        y_full = simulate_acquisition(x_true, maps, full, spec.noise_std, int(noise_seed), sid)
        records.append(SliceRecord(slice_id=sid, full=y_full, maps=maps, reference=reference_image(y_full, maps)))
    logger.info(
        f"Synthesized {n_slices} slices of {spec.height}x{spec.width}, {spec.n_coils} coils, "
        f"noise std {spec.noise_std} (seed {seed})"
    )
    return records
