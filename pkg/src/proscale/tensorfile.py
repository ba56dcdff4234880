"""PSTF binary tensor files.

Layout (little-endian)::

    magic     4 bytes  b"PSTF"
    version   u8       1
    dtype     u8       0 = float32, 1 = float64
    ndim      u8
    reserved  u8       0
    extents   ndim x u64
    payload   row-major values
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import TensorFormatError
from .numerics import Tensor

MAGIC = b"PSTF"
VERSION = 1
DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
CODE_DTYPES = {code: dt for dt, code in DTYPE_CODES.items()}
_HEADER = struct.Struct("<4sBBBB")


def encode_tensor(array) -> bytes:
    arr = np.asarray(array.data if isinstance(array, Tensor) else array)
    dt = arr.dtype.newbyteorder("<")
    if dt not in DTYPE_CODES:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > 255:
        raise TensorFormatError("too many dimensions")
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_CODES[dt], arr.ndim, 0)
    extents = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + extents + np.ascontiguousarray(arr, dtype=dt).tobytes()


def decode_tensor(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise TensorFormatError("file too short for header")
    magic, version, code, ndim, reserved = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}")
    if code not in CODE_DTYPES:
        raise TensorFormatError(f"unknown dtype code {code}")
    if reserved != 0:
        raise TensorFormatError("reserved byte must be zero")
    offset = _HEADER.size + 8 * ndim
    if len(blob) < offset:
        raise TensorFormatError("truncated extents")
    shape = struct.unpack_from(f"<{ndim}Q", blob, _HEADER.size)
    dt = CODE_DTYPES[code]
    expected = int(np.prod(shape, dtype=object)) * dt.itemsize
    if len(blob) - offset != expected:
        raise TensorFormatError(f"payload is {len(blob) - offset} bytes, expected {expected}")
    return np.frombuffer(blob, dtype=dt, offset=offset).reshape(shape).astype(dt.newbyteorder("="))


def atomic_write(path, data: bytes) -> None:
    """Write to a temporary sibling, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_tensor(path, array) -> None:
    atomic_write(path, encode_tensor(array))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())
