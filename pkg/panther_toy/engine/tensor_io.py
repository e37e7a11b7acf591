"""
Tensor dump files.

Layout: magic bytes ``PTHR1``, little-endian u32 rank, one u32 per dimension,
then the row-major float32 payload.
"""
from typing import Union
import os
import struct

import numpy as np

from panther_toy.engine.tensor import Tensor
from panther_toy.errors import TensorFormatError


MAGIC = b"PTHR1"
PathLike = Union[str, "os.PathLike[str]"]


def write_tensor(path: PathLike, value: Union[Tensor, np.ndarray]):
    """Write a tensor dump; values are stored as float32."""
    array = value.data if isinstance(value, Tensor) else np.asarray(value)
    header = MAGIC + struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def read_tensor(path: PathLike) -> np.ndarray:
    """
    Read a tensor dump.

    Returns:
        float32 array with the stored shape.

    Raises:
        TensorFormatError: On a wrong magic, truncated header or payload size mismatch.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise TensorFormatError(f"{path}: not a tensor dump (bad magic)")
    offset = len(MAGIC)
    try:
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
    except struct.error as e:
        raise TensorFormatError(f"{path}: truncated header ({e})") from e
    expected = int(np.prod(shape)) * 4
    payload = blob[offset:]
    if len(payload) != expected:
        raise TensorFormatError(
            f"{path}: payload has {len(payload)} bytes, shape {tuple(shape)} needs {expected}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
