import numpy as np
import pytest

from fiberpaint.errors import ContractError
from fiberpaint.volio import (
    HEADER,
    ManifestRow,
    read_labels,
    read_manifest,
    read_volume,
    write_labels,
    write_manifest,
    write_volume,
)


@pytest.mark.parametrize("dims", [(1, 1, 1), (2, 3, 4), (16, 16, 16), (64, 5, 2)])
@pytest.mark.parametrize("channels", [1, 3])
def test_roundtrip_is_bit_exact(tmp_path, dims, channels):
    rng = np.random.default_rng(hash((dims, channels)) % 2**31)
    data = rng.normal(size=(*dims, channels)).astype(np.float32)
    path = tmp_path / "vol.mdav"
    write_volume(path, data)
    back = read_volume(path)
    assert back.dtype == np.float32
    assert np.array_equal(back.view(np.uint32), data.view(np.uint32))  # bitwise, NaN-safe


def test_roundtrip_preserves_nan_payload(tmp_path):
    data = np.full((2, 2, 2, 1), np.nan, dtype=np.float32)
    data[0, 0, 0, 0] = 1.0
    path = tmp_path / "nan.mdav"
    write_volume(path, data)
    back = read_volume(path)
    assert np.array_equal(back.view(np.uint32), data.view(np.uint32))


def test_file_length_matches_header_fields(tmp_path):
    data = np.zeros((3, 4, 5, 3), dtype=np.float32)
    path = tmp_path / "len.mdav"
    write_volume(path, data)
    assert path.stat().st_size == HEADER.size + 4 * 3 * 4 * 5 * 3


def test_three_dim_input_gains_channel_axis(tmp_path):
    data = np.zeros((2, 2, 2), dtype=np.float32)
    path = tmp_path / "c1.mdav"
    write_volume(path, data)
    assert read_volume(path).shape == (2, 2, 2, 1)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.mdav"
    path.write_bytes(b"XXXX" + b"\x00" * 40)
    with pytest.raises(ContractError, match="magic"):
        read_volume(path)


def test_truncated_payload_rejected(tmp_path):
    data = np.zeros((2, 2, 2, 1), dtype=np.float32)
    path = tmp_path / "trunc.mdav"
    write_volume(path, data)
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(ContractError, match="length"):
        read_volume(path)


def test_unsupported_version_rejected(tmp_path):
    path = tmp_path / "ver.mdav"
    path.write_bytes(HEADER.pack(b"MDAV", 99, 1, 1, 1, 1) + b"\x00" * 4)
    with pytest.raises(ContractError, match="version"):
        read_volume(path)


def test_labels_roundtrip(tmp_path):
    labels = np.random.default_rng(0).integers(0, 4, size=(6, 6, 6)).astype(np.uint8)
    path = tmp_path / "labels.mdav"
    write_labels(path, labels)
    assert np.array_equal(read_labels(path), labels)


def test_manifest_roundtrip(tmp_path):
    rows = [
        ManifestRow(0, "train", 12345, "scan_000.mdav", "scan_000_labels.mdav"),
        ManifestRow(1, "test", 678, "scan_001.mdav", "scan_001_labels.mdav"),
    ]
    path = tmp_path / "manifest.tsv"
    write_manifest(path, rows)
    assert read_manifest(path) == rows


def test_manifest_rejects_bad_header_and_split(tmp_path):
    path = tmp_path / "manifest.tsv"
    path.write_text("nope\n")
    with pytest.raises(ContractError, match="header"):
        read_manifest(path)
    path.write_text("scan_id\tsplit\tseed\tvolume_file\tlabels_file\n0\tvalidation\t1\ta\tb\n")
    with pytest.raises(ContractError, match="split"):
        read_manifest(path)
