"""VPC1 binary tensor container.

Little-endian header: magic "VPC1", dtype code (u8), ndim (u8), dims as
four u32 (unused trailing dims = 1), then C-order raw data. This is the
wire format the decode CLI emits and the training bindings consume.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import ConfigurationError

MAGIC = b"VPC1"
HEADER = struct.Struct("<4sBB4I")

_CODE_TO_DTYPE = {0: np.uint8, 1: np.float32, 2: np.int64, 3: np.uint16}
_DTYPE_TO_CODE = {np.dtype(v): k for k, v in _CODE_TO_DTYPE.items()}


def write_vpc1(fh: BinaryIO, array: np.ndarray) -> int:
    """Write one tensor; returns bytes written."""
    dtype = np.dtype(array.dtype)
    if dtype not in _DTYPE_TO_CODE:
        raise ConfigurationError(f"unsupported dtype {dtype}")
    if array.ndim < 1 or array.ndim > 4:
        raise ConfigurationError(f"ndim {array.ndim} outside 1..4")
    dims = list(array.shape) + [1] * (4 - array.ndim)
    header = HEADER.pack(MAGIC, _DTYPE_TO_CODE[dtype], array.ndim, *dims)
    fh.write(header)
    data = np.ascontiguousarray(array).tobytes(order="C")
    fh.write(data)
    return len(header) + len(data)


def read_vpc1(fh: BinaryIO) -> np.ndarray:
    raw = fh.read(HEADER.size)
    if len(raw) != HEADER.size:
        raise ConfigurationError("truncated VPC1 header")
    magic, code, ndim, d0, d1, d2, d3 = HEADER.unpack(raw)
    if magic != MAGIC:
        raise ConfigurationError(f"bad magic {magic!r}")
    if code not in _CODE_TO_DTYPE or not (1 <= ndim <= 4):
        raise ConfigurationError(f"bad VPC1 header (code={code}, ndim={ndim})")
    dims = (d0, d1, d2, d3)[:ndim]
    dtype = np.dtype(_CODE_TO_DTYPE[code])
    count = int(np.prod(dims))
    data = fh.read(count * dtype.itemsize)
    if len(data) != count * dtype.itemsize:
        raise ConfigurationError("truncated VPC1 payload")
    return np.frombuffer(data, dtype=dtype).reshape(dims)
