"""
Parameter checkpoints
Reads and writes named float32 tensors in the BCGW1 binary format
"""

import io
import logging
import os
from typing import Dict, Mapping

import numpy as np

from src.bcgan.errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"BCGW1"
_U32 = np.dtype("<u4")
_F32 = np.dtype("<f4")


def save_checkpoint(path: str, tensors: Mapping[str, np.ndarray]) -> None:
    """
    Write named tensors to a BCGW1 file

    Layout: magic, tensor count, then per tensor name length, name bytes,
    rank, extents (all u32 little-endian) and raw little-endian float32 data.

    Args:
        path: Destination file
        tensors: Name -> array, written in mapping order
    """
    buffer = io.BytesIO()
    buffer.write(MAGIC)
    buffer.write(np.array([len(tensors)], dtype=_U32).tobytes())
    for name, array in tensors.items():
        encoded = name.encode("utf-8")
        array = np.asarray(array)
        buffer.write(np.array([len(encoded)], dtype=_U32).tobytes())
        buffer.write(encoded)
        buffer.write(np.array([array.ndim, *array.shape], dtype=_U32).tobytes())
        buffer.write(np.ascontiguousarray(array, dtype=_F32).tobytes())
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(buffer.getvalue())
    logger.debug("wrote %d tensors to %s", len(tensors), path)


def load_checkpoint(path: str) -> Dict[str, np.ndarray]:
    """
    Read a BCGW1 file

    Returns:
        Name -> float32 array, in file order

    Raises:
        CheckpointError: On bad magic, truncation or duplicate names
    """
    try:
        with open(path, "rb") as f:
            payload = f.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    if payload[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    offset = len(MAGIC)

    def read_u32(count: int):
        nonlocal offset
        end = offset + 4 * count
        if end > len(payload):
            raise CheckpointError(f"{path}: truncated header")
        values = np.frombuffer(payload, dtype=_U32, count=count, offset=offset)
        offset = end
        return [int(v) for v in values]

    (count,) = read_u32(1)
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_length,) = read_u32(1)
        if offset + name_length > len(payload):
            raise CheckpointError(f"{path}: truncated name")
        name = payload[offset:offset + name_length].decode("utf-8")
        offset += name_length
        (rank,) = read_u32(1)
        extents = read_u32(rank)
        size = int(np.prod(extents)) if extents else 1
        end = offset + 4 * size
        if end > len(payload):
            raise CheckpointError(f"{path}: truncated data for '{name}'")
        if name in tensors:
            raise CheckpointError(f"{path}: duplicate tensor '{name}'")
        data = np.frombuffer(payload, dtype=_F32, count=size, offset=offset)
        tensors[name] = data.astype(np.float32).reshape(extents)
        offset = end
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} trailing bytes")
    return tensors
