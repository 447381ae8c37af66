"""
Tests for the RVOL volume format
"""

import numpy as np
import pytest

from src.bcgan.errors import (BcganError, RvolBadMagicError, RvolDimensionError, RvolDtypeError, RvolError,
                              RvolTruncatedError)
from src.bcgan.rvol import HEADER_SIZE, read_rvol, write_rvol


@pytest.fixture
def volume(rng):
    return rng.normal(size=(3, 4, 5)).astype(np.float32)


def test_round_trip_is_bitwise(volume, tmp_path):
    path = str(tmp_path / "v.rvol")
    write_rvol(volume, path)
    restored = read_rvol(path)
    assert restored.dtype == np.float32
    np.testing.assert_array_equal(restored, volume)


def test_header_and_x_fastest_layout(volume, tmp_path):
    path = tmp_path / "v.rvol"
    write_rvol(volume, str(path))
    raw = path.read_bytes()
    assert raw[:5] == b"RVOL1"
    assert raw[5] == 0x01
    assert np.frombuffer(raw, dtype="<u4", count=3, offset=6).tolist() == [3, 4, 5]
    payload = np.frombuffer(raw, dtype="<f4", offset=HEADER_SIZE)
    assert payload[1] == volume[1, 0, 0]
    assert payload[3] == volume[0, 1, 0]
    assert len(raw) == HEADER_SIZE + 4 * volume.size


def test_boolean_volume_is_stored_as_zero_one(tmp_path):
    mask = np.zeros((2, 2, 2), dtype=bool)
    mask[1, 0, 1] = True
    write_rvol(mask, str(tmp_path / "m.rvol"))
    restored = read_rvol(str(tmp_path / "m.rvol"))
    assert restored.sum() == 1.0 and restored[1, 0, 1] == 1.0


def test_bad_magic(volume, tmp_path):
    path = tmp_path / "v.rvol"
    write_rvol(volume, str(path))
    raw = bytearray(path.read_bytes())
    raw[0] = ord("X")
    path.write_bytes(bytes(raw))
    with pytest.raises(RvolBadMagicError, match="bad magic"):
        read_rvol(str(path))


def test_missing_file_is_an_rvol_error(tmp_path):
    with pytest.raises(RvolError, match="cannot read") as excinfo:
        read_rvol(str(tmp_path / "absent.rvol"))
    assert isinstance(excinfo.value, BcganError)
    assert isinstance(excinfo.value.__cause__, OSError)


def test_truncated_payload(volume, tmp_path):
    path = tmp_path / "v.rvol"
    write_rvol(volume, str(path))
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(RvolTruncatedError, match="truncated payload"):
        read_rvol(str(path))


def test_truncated_header(tmp_path):
    path = tmp_path / "v.rvol"
    path.write_bytes(b"RVOL1\x01\x02\x00")
    with pytest.raises(RvolTruncatedError):
        read_rvol(str(path))


def test_unknown_dtype_tag(volume, tmp_path):
    path = tmp_path / "v.rvol"
    write_rvol(volume, str(path))
    raw = bytearray(path.read_bytes())
    raw[5] = 0x07
    path.write_bytes(bytes(raw))
    with pytest.raises(RvolDtypeError):
        read_rvol(str(path))


def test_dim_overflow(tmp_path):
    path = tmp_path / "v.rvol"
    path.write_bytes(b"RVOL1\x01" + np.array([2 ** 20, 2 ** 20, 2 ** 20], dtype="<u4").tobytes())
    with pytest.raises(RvolDimensionError, match="dim overflow"):
        read_rvol(str(path))


def test_write_rejects_wrong_rank(tmp_path):
    with pytest.raises(RvolDimensionError):
        write_rvol(np.zeros((2, 2)), str(tmp_path / "v.rvol"))
