import struct

import numpy as np
import pytest
from PIL import Image

from execution.dataset import (
    list_slice_ids,
    load_images,
    load_mask,
    load_records,
    split_records,
    write_image,
    write_mask,
    write_record,
)
from execution.errors import FormatError, UsageError
from execution.ksp_container import MAGIC, read_container, write_container
from execution.preview import to_grey, write_preview, write_strip
from execution.sampling import equispaced_mask


# ============================================
# CONTAINER
# ============================================

@pytest.mark.parametrize("dtype", [np.complex64, np.complex128, np.float32, np.float64])
def test_container_preserves_bits_and_metadata(tmp_path, rng, dtype):
    array = (rng.standard_normal((2, 3, 5)) + (1j if np.dtype(dtype).kind == "c" else 0)).astype(dtype)
    path = write_container(tmp_path / "a.ksp", array, "kspace", {"slice_id": "s1", "scale": 0.25})
    container = read_container(path)
    assert container.kind == "kspace"
    assert container.array.dtype == array.dtype
    assert container.array.tobytes() == array.tobytes()
    assert container.metadata == {"slice_id": "s1", "scale": "0.25"}


def test_container_header_layout(tmp_path):
    path = write_container(tmp_path / "m.ksp", np.ones((3, 4), dtype=bool), "mask")
    blob = path.read_bytes()
    assert blob[:4] == MAGIC
    assert struct.unpack("<HBBB", blob[4:9]) == (1, 2, 5, 2)
    assert struct.unpack("<2I", blob[9:17]) == (3, 4)
    assert len(blob) == 17 + 12 + 4


def test_container_rejects_corruption(tmp_path, rng):
    path = write_container(tmp_path / "a.ksp", rng.standard_normal((4, 4)), "image")
    blob = path.read_bytes()
    cases = {
        "magic": b"XXXX" + blob[4:],
        "version": blob[:4] + struct.pack("<H", 9) + blob[6:],
        "kind": blob[:6] + bytes([7]) + blob[7:],
        "dtype": blob[:7] + bytes([0]) + blob[8:],
        "truncated": blob[:-10],
        "trailing": blob + b"\x00",
    }
    for name, bad in cases.items():
        (tmp_path / f"{name}.ksp").write_bytes(bad)
        with pytest.raises(FormatError):
            read_container(tmp_path / f"{name}.ksp")
    with pytest.raises(FormatError):
        read_container(tmp_path / "missing.ksp")


def test_container_rejects_unknown_kind_and_dtype(tmp_path):
    with pytest.raises(UsageError):
        write_container(tmp_path / "a.ksp", np.zeros(2), "volume")
    with pytest.raises(UsageError):
        write_container(tmp_path / "a.ksp", np.zeros(2, dtype=np.int32), "image")


# ============================================
# SLICE DIRECTORIES
# ============================================

def test_records_survive_a_directory(tmp_path, tiny_records):
    for record in tiny_records:
        write_record(tmp_path, record)
    loaded = load_records(tmp_path)
    assert [r.slice_id for r in loaded] == [r.slice_id for r in tiny_records]
    for a, b in zip(loaded, tiny_records):
        np.testing.assert_array_equal(a.full.data, b.full.data)
        assert a.full.scale == b.full.scale
        np.testing.assert_array_equal(a.maps.maps, b.maps.maps)
        np.testing.assert_array_equal(a.reference, b.reference)


def test_missing_or_empty_directory_is_a_usage_error(tmp_path):
    with pytest.raises(UsageError):
        list_slice_ids(tmp_path / "nowhere")
    with pytest.raises(UsageError):
        load_records(tmp_path)


def test_split_holds_out_the_tail(tiny_records):
    train, val, test = split_records(tiny_records, n_test=1, n_val=1)
    assert [r.slice_id for r in test] == ["slice_0003"]
    assert [r.slice_id for r in val] == ["slice_0002"]
    assert len(train) == 2
    with pytest.raises(UsageError):
        split_records(tiny_records, n_test=4)


def test_mask_file_keeps_kind_and_descriptor(tmp_path):
    omega = equispaced_mask(16, 8, 4, 2)
    loaded = load_mask(write_mask(tmp_path / "omega.ksp", omega))
    np.testing.assert_array_equal(loaded.grid, omega.grid)
    assert loaded.grid.dtype == bool
    assert loaded.kind == "omega" and loaded.descriptor["R"] == "4"

    write_image(tmp_path / "img.ksp", np.zeros((2, 2)))
    with pytest.raises(FormatError):
        load_mask(tmp_path / "img.ksp")


def test_images_are_keyed_by_slice(tmp_path, rng):
    for sid in ("b", "a"):
        write_image(tmp_path / f"{sid}.recon.ksp", rng.standard_normal((3, 3)))
    write_mask(tmp_path / "c.recon.ksp", equispaced_mask(4, 4, 2, 0))
    with pytest.raises(FormatError):
        load_images(tmp_path, "recon")
    (tmp_path / "c.recon.ksp").unlink()
    assert list(load_images(tmp_path, "recon")) == ["a", "b"]


# ============================================
# PREVIEWS
# ============================================

def test_grey_window_and_clipping():
    image = np.linspace(0, 2, 16).reshape(4, 4)
    grey = to_grey(image, vmax=1.0)
    assert grey.dtype == np.uint8
    assert grey[0, 0] == 0 and grey[-1, -1] == 255
    assert np.all(to_grey(np.zeros((3, 3))) == 0)


def test_preview_is_a_readable_pgm(tmp_path, rng):
    path = write_preview(rng.standard_normal((6, 5)) + 1j, tmp_path / "p.pgm", upscale=3)
    assert path.read_bytes()[:2] == b"P5"
    with Image.open(path) as img:
        assert img.size == (15, 18) and img.mode == "L"


def test_strip_tiles_side_by_side(tmp_path, rng):
    images = [rng.standard_normal((4, 4)) for _ in range(3)]
    with Image.open(write_strip(images, tmp_path / "s.pgm")) as img:
        assert img.size == (12, 4)
    with pytest.raises(UsageError):
        write_strip([], tmp_path / "empty.pgm")
