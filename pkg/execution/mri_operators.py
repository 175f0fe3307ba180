"""
Multi-coil Cartesian SENSE encoding operator
Forward model E, adjoint E^H, SENSE-1 coil combination and mask handling
"""
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Optional, Tuple

import numpy as np

from execution.errors import ConsistencyError, DegenerateReferenceError, DimensionError
from execution.tensor import (
    Tensor,
    apply_mask,
    as_tensor,
    coil_combine,
    coil_expand,
    fft2_centered,
    ifft2_centered,
)


MASK_KINDS = ("omega", "theta", "lambda")


@dataclass(frozen=True)
class SamplingMask:
    """Boolean grid over k-space indices (Omega, Theta or Lambda)"""

    grid: np.ndarray
    kind: str = "omega"
    descriptor: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=bool)
        if grid.ndim != 2:
            raise DimensionError(f"mask grid must be 2-D, got shape {grid.shape}")
        if self.kind not in MASK_KINDS:
            raise ConsistencyError(f"unknown mask kind {self.kind!r}")
        object.__setattr__(self, "grid", grid)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.grid.shape

    @property
    def count(self) -> int:
        return int(self.grid.sum())

    @property
    def is_empty(self) -> bool:
        return not self.grid.any()

    def is_subset_of(self, other: "SamplingMask") -> bool:
        return self.shape == other.shape and not np.any(self.grid & ~other.grid)

    def with_kind(self, kind: str, **descriptor) -> "SamplingMask":
        return SamplingMask(self.grid.copy(), kind=kind, descriptor={**self.descriptor, **descriptor})

    @classmethod
    def full(cls, shape: Tuple[int, int], kind: str = "omega") -> "SamplingMask":
        return cls(np.ones(shape, dtype=bool), kind=kind, descriptor={"scheme": "full"})


@dataclass(frozen=True)
class CoilMaps:
    """Per-coil complex sensitivity images [n_coils, H, W]"""

    maps: np.ndarray

    def __post_init__(self):
        maps = np.asarray(self.maps)
        if not np.iscomplexobj(maps):
            maps = maps.astype(np.complex128)
        if maps.ndim != 3:
            raise DimensionError(f"coil maps must be [n_coils, H, W], got {maps.shape}")
        if not np.all(np.isfinite(maps)):
            raise ConsistencyError("coil maps contain non-finite values")
        object.__setattr__(self, "maps", maps)

    @property
    def n_coils(self) -> int:
        return self.maps.shape[0]

    @property
    def image_shape(self) -> Tuple[int, int]:
        return self.maps.shape[1:]

    def rss(self) -> np.ndarray:
        """Root-sum-of-squares over coils"""
        return np.sqrt(np.sum(np.abs(self.maps) ** 2, axis=0))

    def astype(self, dtype: np.dtype) -> "CoilMaps":
        return CoilMaps(self.maps.astype(dtype))


@dataclass(frozen=True)
class KSpaceVolume:
    """
    Multi-coil k-space for one slice

    `data` is stored normalized; physical samples are data * scale.
    """

    data: np.ndarray
    acquired_mask: SamplingMask
    slice_id: str = "0"
    scale: float = 1.0

    def __post_init__(self):
        data = np.asarray(self.data)
        if not np.iscomplexobj(data):
            data = data.astype(np.complex128)
        if data.ndim != 3:
            raise DimensionError(f"k-space must be [n_coils, H, W], got {data.shape}")
        if data.shape[1:] != self.acquired_mask.shape:
            raise DimensionError(f"k-space {data.shape} vs mask {self.acquired_mask.shape}")
        if np.any(data[:, ~self.acquired_mask.grid] != 0):
            raise ConsistencyError(f"slice {self.slice_id}: k-space nonzero outside the acquired mask")
        if not self.scale > 0:
            raise ConsistencyError(f"slice {self.slice_id}: normalization scale must be positive, got {self.scale}")
        object.__setattr__(self, "data", data)

    @property
    def n_coils(self) -> int:
        return self.data.shape[0]

    @property
    def image_shape(self) -> Tuple[int, int]:
        return self.data.shape[1:]

    def restrict(self, mask: SamplingMask) -> "KSpaceVolume":
        """Keep only entries inside mask (mask must be a subset of the acquired set)"""
        if not mask.is_subset_of(self.acquired_mask):
            raise ConsistencyError(f"slice {self.slice_id}: mask is not a subset of the acquired indices")
        data = np.where(mask.grid[None], self.data, 0)
        return replace(self, data=data, acquired_mask=mask)

    def normalized(self) -> "KSpaceVolume":
        """Rescale so the maximum modulus is 1; the factor is folded into `scale`"""
        peak = float(np.max(np.abs(self.data)))
        if peak == 0:
            raise DegenerateReferenceError(f"slice {self.slice_id}: k-space is identically zero")
        return replace(self, data=self.data / peak, scale=self.scale * peak)

    def physical(self) -> np.ndarray:
        return self.data * self.scale

    def astype(self, dtype: np.dtype) -> "KSpaceVolume":
        return replace(self, data=self.data.astype(dtype))


def _check_image(x: Tensor, maps: CoilMaps, mask: Optional[SamplingMask]) -> None:
    if x.shape != maps.image_shape:
        raise DimensionError(f"image {x.shape} vs coil maps {maps.image_shape}")
    if mask is not None and mask.shape != x.shape:
        raise DimensionError(f"image {x.shape} vs mask {mask.shape}")


def apply_E(x: Any, maps: CoilMaps, mask: Optional[SamplingMask] = None) -> Tensor:
    """
    Forward encoding: mask * fft2_centered(maps_c * x) for every coil

    Args:
        x: complex image [H, W] (Tensor or array)
        maps: coil sensitivities
        mask: sampled locations; None means the full grid (E_full)

    Returns:
        complex k-space [n_coils, H, W], zero outside the mask
    """
    x = as_tensor(x)
    _check_image(x, maps, mask)
    k = fft2_centered(coil_expand(x, maps.maps))
    return k if mask is None else apply_mask(k, mask.grid)


def apply_EH(y: Any, maps: CoilMaps, mask: Optional[SamplingMask] = None) -> Tensor:
    """
    Adjoint encoding: sum_c conj(maps_c) * ifft2_centered(mask * y_c)

    Args:
        y: complex k-space [n_coils, H, W]
        maps: coil sensitivities
        mask: sampled locations; None means the full grid

    Returns:
        complex image [H, W]
    """
    y = as_tensor(y)
    if y.shape != maps.maps.shape:
        raise DimensionError(f"k-space {y.shape} vs coil maps {maps.maps.shape}")
    if mask is not None and mask.shape != y.shape[1:]:
        raise DimensionError(f"k-space {y.shape} vs mask {mask.shape}")
    if mask is not None:
        y = apply_mask(y, mask.grid)
    return coil_combine(ifft2_centered(y), maps.maps)


def sense1_combine(coil_images: Any, maps: CoilMaps) -> Tensor:
    """SENSE-1 combination sum_c conj(maps_c) * coil_image_c"""
    coil_images = as_tensor(coil_images)
    if coil_images.shape != maps.maps.shape:
        raise DimensionError(f"coil images {coil_images.shape} vs coil maps {maps.maps.shape}")
    return coil_combine(coil_images, maps.maps)


def zero_filled_init(y: KSpaceVolume, maps: CoilMaps, mask: SamplingMask) -> Tensor:
    """
    Initial image E^H y restricted to mask

    Raises:
        ConsistencyError: mask is not a subset of the acquired indices
    """
    if not mask.is_subset_of(y.acquired_mask):
        raise ConsistencyError(f"slice {y.slice_id}: mask is not a subset of the acquired indices")
    return apply_EH(y.data, maps, mask)


def reference_image(y_full: KSpaceVolume, maps: CoilMaps) -> np.ndarray:
    """SENSE-1 combination of fully-sampled k-space in physical units"""
    coil_images = ifft2_centered(Tensor(y_full.data)).data
    return sense1_combine(coil_images, maps).data * y_full.scale
