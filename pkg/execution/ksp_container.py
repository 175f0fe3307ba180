"""
KSP container: little-endian binary file for k-space, coil maps, masks and images

Layout:
    magic "SSDU" | u16 version | u8 kind | u8 dtype code | u8 rank | u32 extents[rank]
    | payload (C order) | u32 n_meta | n_meta x (u16 length, utf-8 "key=value")
"""
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
from loguru import logger

from execution.errors import FormatError, UsageError


MAGIC = b"SSDU"
VERSION = 1

KIND_CODES: Dict[str, int] = {"kspace": 0, "maps": 1, "mask": 2, "image": 3}
KINDS_BY_CODE = {v: k for k, v in KIND_CODES.items()}

# shared with the checkpoint format
DTYPE_CODES: Dict[str, int] = {"float32": 1, "float64": 2, "complex64": 3, "complex128": 4, "bool": 5}
DTYPES_BY_CODE: Dict[int, np.dtype] = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("<c8"),
    4: np.dtype("<c16"),
    5: np.dtype("u1"),
}

_HEADER = struct.Struct("<4sHBBB")


@dataclass
class Container:
    array: np.ndarray
    kind: str
    metadata: Dict[str, str] = field(default_factory=dict)


def dtype_code(dtype: np.dtype) -> int:
    name = np.dtype(dtype).name
    if name not in DTYPE_CODES:
        raise UsageError(f"dtype {name} cannot be stored")
    return DTYPE_CODES[name]


def encode_array(array: np.ndarray) -> Tuple[int, bytes]:
    """(dtype code, little-endian C-order payload); bool arrays become one byte per entry"""
    code = dtype_code(array.dtype)
    return code, np.ascontiguousarray(array).astype(DTYPES_BY_CODE[code], copy=False).tobytes()


def decode_array(code: int, shape: Tuple[int, ...], payload: bytes) -> np.ndarray:
    if code not in DTYPES_BY_CODE:
        raise FormatError(f"unknown dtype code {code}")
    dtype = DTYPES_BY_CODE[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(payload) != expected:
        raise FormatError(f"payload is {len(payload)} bytes, expected {expected} for shape {shape}")
    array = np.frombuffer(payload, dtype=dtype).reshape(shape)
    if code == DTYPE_CODES["bool"]:
        return array.astype(bool)
    return array.astype(dtype.newbyteorder("="))


class _Reader:
    """Bounds-checked cursor over a byte string"""

    def __init__(self, blob: bytes, path: Path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.path}: truncated file")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def write_container(path: Path, array: np.ndarray, kind: str, metadata: Dict[str, object] = None) -> Path:
    """
    Write one array with metadata

    Args:
        path: destination file
        array: data (complex/real float or bool mask)
        kind: kspace | maps | mask | image
        metadata: key -> value, stored as text

    Returns:
        path
    """
    if kind not in KIND_CODES:
        raise UsageError(f"unknown container kind {kind!r}")
    array = np.asarray(array)
    code, payload = encode_array(array)

    chunks = [
        _HEADER.pack(MAGIC, VERSION, KIND_CODES[kind], code, array.ndim),
        struct.pack(f"<{array.ndim}I", *array.shape),
        payload,
    ]
    entries = [f"{k}={v}".encode("utf-8") for k, v in (metadata or {}).items()]
    chunks.append(struct.pack("<I", len(entries)))
    for entry in entries:
        chunks.append(struct.pack("<H", len(entry)) + entry)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))
    logger.debug(f"Wrote {kind} {array.shape} {array.dtype} to {path}")
    return path


def read_container(path: Path) -> Container:
    """
    Read a KSP file

    Raises:
        FormatError: bad magic, unknown version/kind/dtype, wrong payload length, trailing bytes
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e}") from e

    r = _Reader(blob, path)
    magic, version, kind_code, code, rank = r.unpack(_HEADER.format)
    if magic != MAGIC:
        raise FormatError(f"{path}: not a KSP file")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if kind_code not in KINDS_BY_CODE:
        raise FormatError(f"{path}: unknown kind code {kind_code}")
    if code not in DTYPES_BY_CODE:
        raise FormatError(f"{path}: unknown dtype code {code}")

    shape = r.unpack(f"<{rank}I")
    n_bytes = int(np.prod(shape, dtype=np.int64)) * DTYPES_BY_CODE[code].itemsize
    array = decode_array(code, shape, r.take(n_bytes))

    (n_meta,) = r.unpack("<I")
    metadata = {}
    for _ in range(n_meta):
        (length,) = r.unpack("<H")
        text = r.take(length).decode("utf-8")
        if "=" not in text:
            raise FormatError(f"{path}: malformed metadata entry {text!r}")
        key, value = text.split("=", 1)
        metadata[key] = value
    if r.pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - r.pos} trailing bytes")

    return Container(array=array, kind=KINDS_BY_CODE[kind_code], metadata=metadata)
