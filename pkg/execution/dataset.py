"""
Slice directory layout

    <dir>/<slice_id>.kspace.ksp   fully-sampled k-space (normalized, scale in metadata)
    <dir>/<slice_id>.maps.ksp     coil sensitivities
    <dir>/<slice_id>.image.ksp    SENSE-1 reference image, physical units
    <dir>/<slice_id>.recon.ksp    reconstruction, physical units
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from execution.errors import ConsistencyError, FormatError, UsageError
from execution.ksp_container import read_container, write_container
from execution.mri_operators import CoilMaps, KSpaceVolume, SamplingMask
from execution.training import TrainingSlice


@dataclass(frozen=True)
class SliceRecord:
    """One fully-sampled slice with its maps and reference image"""

    slice_id: str
    full: KSpaceVolume
    maps: CoilMaps
    reference: np.ndarray

    def undersample(self, omega: SamplingMask) -> TrainingSlice:
        """Retrospective undersampling; the fully-sampled data rides along for supervised modes and metrics"""
        if omega.shape != self.full.image_shape:
            raise ConsistencyError(f"slice {self.slice_id}: mask {omega.shape} vs k-space {self.full.image_shape}")
        return TrainingSlice(kspace=self.full.restrict(omega).normalized(), maps=self.maps, full=self.full)


def slice_name(index: int) -> str:
    return f"slice_{index:04d}"


def write_record(directory: Path, record: SliceRecord) -> None:
    directory = Path(directory)
    sid = record.slice_id
    meta = {"slice_id": sid, "scale": repr(record.full.scale)}
    write_container(directory / f"{sid}.kspace.ksp", record.full.data, "kspace", meta)
    write_container(directory / f"{sid}.maps.ksp", record.maps.maps, "maps", {"slice_id": sid})
    write_container(directory / f"{sid}.image.ksp", record.reference, "image", {"slice_id": sid, "units": "physical"})


def load_record(directory: Path, slice_id: str) -> SliceRecord:
    directory = Path(directory)
    ksp = read_container(directory / f"{slice_id}.kspace.ksp")
    maps = read_container(directory / f"{slice_id}.maps.ksp")
    image = read_container(directory / f"{slice_id}.image.ksp")
    if (ksp.kind, maps.kind, image.kind) != ("kspace", "maps", "image"):
        raise FormatError(f"slice {slice_id}: unexpected container kinds {ksp.kind}/{maps.kind}/{image.kind}")

    try:
        scale = float(ksp.metadata.get("scale", "1.0"))
    except ValueError as e:
        raise FormatError(f"slice {slice_id}: bad scale {ksp.metadata.get('scale')!r}") from e
    data = ksp.array
    full = KSpaceVolume(data, SamplingMask.full(data.shape[1:]), slice_id, scale=scale)
    return SliceRecord(slice_id=slice_id, full=full, maps=CoilMaps(maps.array), reference=image.array)


def list_slice_ids(directory: Path, suffix: str = "kspace") -> List[str]:
    directory = Path(directory)
    if not directory.is_dir():
        raise UsageError(f"data directory {directory} does not exist")
    return sorted(p.name[: -len(f".{suffix}.ksp")] for p in directory.glob(f"*.{suffix}.ksp"))


def load_records(directory: Path) -> List[SliceRecord]:
    """All slices of a directory, sorted by slice id"""
    ids = list_slice_ids(directory)
    if not ids:
        raise UsageError(f"no *.kspace.ksp files in {directory}")
    records = [load_record(directory, sid) for sid in ids]
    logger.info(f"Loaded {len(records)} slices from {directory}")
    return records


def split_records(
    records: Sequence[SliceRecord], n_test: int, n_val: int = 0
) -> Tuple[List[SliceRecord], List[SliceRecord], List[SliceRecord]]:
    """(train, validation, test): test is the tail, validation the slices just before it"""
    if n_test < 0 or n_val < 0:
        raise UsageError("n_test and n_val must be nonnegative")
    if n_test + n_val >= len(records):
        raise UsageError(f"{len(records)} slices cannot hold out {n_test} test + {n_val} validation slices")
    n_train = len(records) - n_test - n_val
    return list(records[:n_train]), list(records[n_train:n_train + n_val]), list(records[n_train + n_val:])


def write_mask(path: Path, mask: SamplingMask) -> Path:
    meta = {"kind": mask.kind, **{k: v for k, v in mask.descriptor.items()}}
    return write_container(path, mask.grid, "mask", meta)


def load_mask(path: Path) -> SamplingMask:
    container = read_container(path)
    if container.kind != "mask":
        raise FormatError(f"{path} holds {container.kind}, expected a mask")
    meta = dict(container.metadata)
    kind = meta.pop("kind", "omega")
    return SamplingMask(container.array, kind, meta)


def write_image(path: Path, image: np.ndarray, metadata: Optional[Dict[str, object]] = None) -> Path:
    return write_container(path, image, "image", metadata or {})


def load_images(directory: Path, suffix: str) -> Dict[str, np.ndarray]:
    """slice id -> image for every <slice_id>.<suffix>.ksp file"""
    images = {}
    for sid in list_slice_ids(directory, suffix):
        container = read_container(Path(directory) / f"{sid}.{suffix}.ksp")
        if container.kind != "image":
            raise FormatError(f"{sid}.{suffix}.ksp holds {container.kind}, expected an image")
        images[sid] = container.array
    return images
