"""Flat little-endian tensor records.

Record layout::

    uint8   dtype code (1 = float32, 2 = float64, 3 = int64)
    uint8   rank
    uint32  dims[rank]
    bytes   values, C order, little endian
"""

from __future__ import annotations

import io
import struct
from typing import BinaryIO

import numpy as np

DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2, np.dtype("<i8"): 3}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


class SerializationError(ValueError):
    pass


def write_tensor(stream: BinaryIO, array: np.ndarray) -> int:
    arr = np.asarray(array)
    le = arr.dtype.newbyteorder("<")
    if le not in DTYPE_CODES:
        raise SerializationError(f"unsupported dtype {arr.dtype}")
    header = struct.pack("<BB", DTYPE_CODES[le], arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=le).tobytes()
    stream.write(header)
    stream.write(payload)
    return len(header) + len(payload)


def read_tensor(stream: BinaryIO) -> np.ndarray:
    head = stream.read(2)
    if len(head) < 2:
        raise SerializationError("truncated tensor header")
    code, rank = struct.unpack("<BB", head)
    if code not in CODE_DTYPES:
        raise SerializationError(f"unknown dtype code {code}")
    dims = struct.unpack(f"<{rank}I", stream.read(4 * rank))
    dtype = CODE_DTYPES[code]
    count = int(np.prod(dims)) if rank else 1
    raw = stream.read(count * dtype.itemsize)
    if len(raw) != count * dtype.itemsize:
        raise SerializationError("truncated tensor payload")
    return np.frombuffer(raw, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def to_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, array)
    return buf.getvalue()


def from_bytes(data: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(data))
