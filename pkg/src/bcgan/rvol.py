"""
RVOL volume files
Magic "RVOL1", dtype tag, three u32 extents, then float32 voxels with x varying fastest
"""

import os

import numpy as np

from src.bcgan.errors import RvolBadMagicError, RvolDimensionError, RvolDtypeError, RvolError, RvolTruncatedError

MAGIC = b"RVOL1"
DTYPE_FLOAT32 = 0x01
HEADER_SIZE = len(MAGIC) + 1 + 12
MAX_VOXELS = 2 ** 31 - 1
_EXTENTS = np.dtype("<u4")
_PAYLOAD = np.dtype("<f4")


def write_rvol(volume: np.ndarray, path: str) -> None:
    """
    Write a rank-3 volume (boolean volumes are stored as 0/1)

    Raises:
        RvolDimensionError: Wrong rank, an empty extent, or too many voxels
    """
    volume = np.asarray(volume)
    if volume.ndim != 3:
        raise RvolDimensionError(f"RVOL stores rank-3 volumes, got shape {volume.shape}")
    if min(volume.shape) < 1 or volume.size > MAX_VOXELS:
        raise RvolDimensionError(f"volume extents {volume.shape} out of range")
    header = MAGIC + bytes([DTYPE_FLOAT32]) + np.asarray(volume.shape, dtype=_EXTENTS).tobytes()
    payload = volume.astype(_PAYLOAD).tobytes(order="F")
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def read_rvol(path: str) -> np.ndarray:
    """
    Read an RVOL file into a float32 array indexed [x, y, z]

    Raises:
        RvolBadMagicError: File does not start with "RVOL1"
        RvolDtypeError: Unknown dtype tag
        RvolDimensionError: Empty extent or voxel count overflow
        RvolTruncatedError: Header or payload length disagrees with the extents
        RvolError: The file cannot be opened or read
    """
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise RvolError(f"cannot read {path}: {exc}") from exc
    if raw[:len(MAGIC)] != MAGIC:
        raise RvolBadMagicError(f"{path}: bad magic")
    if len(raw) < HEADER_SIZE:
        raise RvolTruncatedError(f"{path}: truncated header ({len(raw)} bytes)")
    tag = raw[len(MAGIC)]
    if tag != DTYPE_FLOAT32:
        raise RvolDtypeError(f"{path}: unsupported dtype tag 0x{tag:02x}")
    extents = [int(v) for v in np.frombuffer(raw, dtype=_EXTENTS, count=3, offset=len(MAGIC) + 1)]
    voxels = extents[0] * extents[1] * extents[2]
    if min(extents) < 1 or voxels > MAX_VOXELS:
        raise RvolDimensionError(f"{path}: dim overflow in extents {extents}")
    payload = len(raw) - HEADER_SIZE
    if payload != voxels * _PAYLOAD.itemsize:
        raise RvolTruncatedError(f"{path}: truncated payload, {payload} bytes for extents {extents}")
    data = np.frombuffer(raw, dtype=_PAYLOAD, count=voxels, offset=HEADER_SIZE)
    return data.reshape(extents, order="F").astype(np.float32)
