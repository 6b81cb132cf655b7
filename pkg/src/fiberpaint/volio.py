"""Volume file format and cohort manifest.

A volume file is: magic "MDAV" | u32 version=1 | u32 X | u32 Y | u32 Z |
u32 channels | little-endian float32 data in row-major order with the
channel index fastest.  Round trips are bit exact, including NaN payloads
used to mark absent voxels in map grids.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError

MAGIC = b"MDAV"
VERSION = 1
HEADER = struct.Struct("<4sIIIII")


def write_volume(path, data: np.ndarray) -> None:
    data = np.asarray(data)
    if data.ndim == 3:
        data = data[..., None]
    if data.ndim != 4:
        raise ContractError(f"volume data must be [X,Y,Z,C], got shape {data.shape}")
    x, y, z, c = data.shape
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    Path(path).write_bytes(HEADER.pack(MAGIC, VERSION, x, y, z, c) + payload)


def read_volume(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise ContractError(f"{path}: truncated volume file")
    magic, version, x, y, z, c = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ContractError(f"{path}: not a volume file (bad magic)")
    if version != VERSION:
        raise ContractError(f"{path}: volume format version {version} is not supported (expected {VERSION})")
    expected = HEADER.size + 4 * x * y * z * c
    if len(raw) != expected:
        raise ContractError(f"{path}: file length {len(raw)} does not match header (expected {expected})")
    return np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(x, y, z, c).copy()


def write_labels(path, labels: np.ndarray) -> None:
    write_volume(path, labels.astype(np.float32)[..., None])


def read_labels(path) -> np.ndarray:
    data = read_volume(path)
    if data.shape[3] != 1:
        raise ContractError(f"{path}: label volume must have one channel, got {data.shape[3]}")
    return np.rint(data[..., 0]).astype(np.uint8)


@dataclass(frozen=True)
class ManifestRow:
    scan_id: int
    split: str
    seed: int
    volume_file: str
    labels_file: str


MANIFEST_COLUMNS = ("scan_id", "split", "seed", "volume_file", "labels_file")


def write_manifest(path, rows: list[ManifestRow]) -> None:
    lines = ["\t".join(MANIFEST_COLUMNS)]
    for row in rows:
        lines.append(f"{row.scan_id}\t{row.split}\t{row.seed}\t{row.volume_file}\t{row.labels_file}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> list[ManifestRow]:
    lines = Path(path).read_text().splitlines()
    if not lines or tuple(lines[0].split("\t")) != MANIFEST_COLUMNS:
        raise ContractError(f"{path}: bad manifest header")
    rows = []
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != len(MANIFEST_COLUMNS):
            raise ContractError(f"{path}: malformed manifest line: {line!r}")
        if parts[1] not in ("train", "val", "test"):
            raise ContractError(f"{path}: unknown split name {parts[1]!r}")
        rows.append(
            ManifestRow(
                scan_id=int(parts[0]),
                split=parts[1],
                seed=int(parts[2]),
                volume_file=parts[3],
                labels_file=parts[4],
            )
        )
    return rows
