"""
Checkpoint format for trained parameters

Layout (little-endian):
    magic "SSDUCKPT" | u16 version | u32 config length | utf-8 key=value config
    | u32 n_tensors | per tensor: u16 name length, name, u8 dtype code, u8 rank,
      u32 extents[rank], payload
"""
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
from loguru import logger
from pydantic import ValidationError

from execution.config import DCConfig, ResNetConfig, UnrollConfig, parse_key_value_text
from execution.errors import ConfigError, FormatError, UsageError
from execution.ksp_container import DTYPES_BY_CODE, decode_array, encode_array
from execution.unrolled_network import MU_PARAM, ParamStore


MAGIC = b"SSDUCKPT"
VERSION = 1


def _config_text(params: ParamStore, unroll: UnrollConfig) -> str:
    fields = {f"resnet.{k}": v for k, v in params.config.model_dump().items()}
    fields.update({
        "unroll.n_unrolls": unroll.n_unrolls,
        "unroll.train_mu": unroll.train_mu,
        "unroll.dc.n_cg_iterations": unroll.dc.n_cg_iterations,
        "unroll.dc.mu": unroll.dc.mu,
        "step": params.step,
        "frozen": ",".join(sorted(params.frozen)),
    })
    return "".join(f"{k} = {v}\n" for k, v in fields.items())


def save_checkpoint(path: Path, params: ParamStore, unroll: UnrollConfig) -> Path:
    """Write parameters plus the architecture needed to rebuild them"""
    config = _config_text(params, unroll).encode("utf-8")
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(config)), config, struct.pack("<I", len(params.values))]
    for name, value in params.values.items():
        encoded = name.encode("utf-8")
        code, payload = encode_array(value)
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack("<BB", code, value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(payload)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))
    logger.info(f"Checkpoint written to {path} ({params.count():,} parameters, step {params.step})")
    return path


def _parse_config(text: str) -> Tuple[ResNetConfig, UnrollConfig, Dict[str, str]]:
    values = parse_key_value_text(text)
    resnet = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("resnet.")}
    try:
        resnet_cfg = ResNetConfig(**resnet)
        unroll_cfg = UnrollConfig(
            n_unrolls=values["unroll.n_unrolls"],
            train_mu=values.get("unroll.train_mu", "true"),
            dc=DCConfig(n_cg_iterations=values["unroll.dc.n_cg_iterations"], mu=values["unroll.dc.mu"]),
        )
    except (KeyError, ValidationError) as e:
        raise FormatError(f"checkpoint config block is invalid: {e}") from e
    return resnet_cfg, unroll_cfg, values


def load_checkpoint(path: Path) -> Tuple[ParamStore, UnrollConfig]:
    """
    Read a checkpoint written by save_checkpoint

    Returns:
        (params, unroll config)

    Raises:
        FormatError: bad magic/version, truncated data, or tensors not matching the stored architecture
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e}") from e

    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError(f"{path}: truncated checkpoint")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    if take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path}: not a checkpoint")
    version, config_len = struct.unpack("<HI", take(6))
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        resnet_cfg, unroll_cfg, values = _parse_config(take(config_len).decode("utf-8"))
    except ConfigError as e:
        raise FormatError(f"{path}: {e}") from e

    (n_tensors,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        code, rank = struct.unpack("<BB", take(2))
        if code not in DTYPES_BY_CODE:
            raise FormatError(f"{path}: tensor {name} has unknown dtype code {code}")
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        n_bytes = int(np.prod(shape, dtype=np.int64)) * DTYPES_BY_CODE[code].itemsize
        tensors[name] = decode_array(code, shape, take(n_bytes))
    if pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - pos} trailing bytes")

    try:
        params = ParamStore(resnet_cfg, tensors)
    except UsageError as e:
        raise FormatError(f"{path}: {e}") from e
    params.step = int(values.get("step", 0))
    params.frozen = {n for n in values.get("frozen", "").split(",") if n}
    if not unroll_cfg.train_mu:
        params.frozen.add(MU_PARAM)

    logger.info(f"Loaded checkpoint {path}: {params.count():,} parameters, step {params.step}")
    return params, unroll_cfg
