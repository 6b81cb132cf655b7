"""Versioned binary checkpoint container.

Layout (little endian):
    magic "MDCK" | u32 version | u32 epoch
    u32 config length | config bytes (UTF-8 key=value echo)
    u32 rng length | rng bytes (JSON generator state)
    u32 tensor count | entries

Each tensor entry: u16 name length | name UTF-8 | u8 dtype tag |
u8 ndim | ndim * u32 shape | raw data.  Model parameters are stored as
32-bit floats; bookkeeping scalars use the f64/i64 tags.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError

MAGIC = b"MDCK"
VERSION = 1

_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_TAG_FOR_KIND = {"f4": 0, "f8": 1, "i8": 2}


@dataclass
class Checkpoint:
    epoch: int
    config_text: str
    rng_state: dict
    arrays: dict[str, np.ndarray]


def _tag_for(arr: np.ndarray) -> int:
    key = f"{arr.dtype.kind}{arr.dtype.itemsize}"
    if key not in _TAG_FOR_KIND:
        raise ContractError(f"unsupported checkpoint dtype {arr.dtype}")
    return _TAG_FOR_KIND[key]


def write_checkpoint(path, epoch: int, config_text: str, rng_state: dict, arrays: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, epoch)]
    config_bytes = config_text.encode("utf-8")
    chunks.append(struct.pack("<I", len(config_bytes)))
    chunks.append(config_bytes)
    rng_bytes = json.dumps(rng_state, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(rng_bytes)))
    chunks.append(rng_bytes)
    chunks.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        shape = arr.shape  # before ascontiguousarray, which promotes 0-d to 1-d
        arr = np.ascontiguousarray(arr)
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<BB", _tag_for(arr), len(shape)))
        chunks.append(struct.pack(f"<{len(shape)}I", *shape))
        chunks.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ContractError(f"{path}: not a checkpoint file (bad magic)")
    offset = 4
    version, epoch = struct.unpack_from("<II", raw, offset)
    offset += 8
    if version != VERSION:
        raise ContractError(f"{path}: checkpoint format version {version} is not supported (expected {VERSION})")
    (config_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    config_text = raw[offset : offset + config_len].decode("utf-8")
    offset += config_len
    (rng_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    rng_state = json.loads(raw[offset : offset + rng_len].decode("utf-8"))
    offset += rng_len
    (count,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        tag, ndim = struct.unpack_from("<BB", raw, offset)
        offset += 2
        shape = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        dtype = _DTYPE_TAGS.get(tag)
        if dtype is None:
            raise ContractError(f"{path}: unknown tensor dtype tag {tag}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        arrays[name] = np.frombuffer(raw[offset : offset + nbytes], dtype=dtype).reshape(shape).copy()
        offset += nbytes
    return Checkpoint(epoch=epoch, config_text=config_text, rng_state=rng_state, arrays=arrays)
