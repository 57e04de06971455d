"""Binary tensor files (``FMAP``).

Layout, little-endian throughout::

    b"FMAP"  u16 version=1  u8 dtype  [u8 frac_bits if dtype == 1]
    u8 ndim  ndim x u32 dims  row-major data

``dtype`` 0 is float32 and 1 is int16 fixed point.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .core_types import FixedPointFormat, to_fixed
from .errors import MalformedStreamError

TENSOR_MAGIC = b"FMAP"
TENSOR_VERSION = 1
DTYPE_F32 = 0
DTYPE_I16 = 1


def tensor_to_bytes(data, frac_bits: int | None = None) -> bytes:
    """Serialize an array; ``frac_bits`` selects the int16 fixed-point encoding."""
    arr = np.asarray(data)
    if arr.ndim > 255:
        raise ValueError("too many dimensions")
    if frac_bits is None:
        head = struct.pack("<4sHBB", TENSOR_MAGIC, TENSOR_VERSION, DTYPE_F32, arr.ndim)
        body = arr.astype("<f4").tobytes()
    else:
        fmt = FixedPointFormat(16, frac_bits)
        head = struct.pack("<4sHBBB", TENSOR_MAGIC, TENSOR_VERSION, DTYPE_I16,
                           frac_bits, arr.ndim)
        body = to_fixed(arr, fmt).astype("<i2").tobytes()
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + dims + body


def tensor_from_bytes(buf: bytes) -> tuple[np.ndarray, int | None]:
    """Parse a tensor file. Returns ``(float64 array, frac_bits or None)``."""
    try:
        magic, version, dtype = struct.unpack_from("<4sHB", buf, 0)
    except struct.error:
        raise MalformedStreamError("tensor file truncated in header") from None
    if magic != TENSOR_MAGIC:
        raise MalformedStreamError(f"bad tensor magic {magic!r}")
    if version != TENSOR_VERSION:
        raise MalformedStreamError(f"unsupported tensor version {version}")
    pos = 7
    frac = None
    try:
        if dtype == DTYPE_I16:
            (frac,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            FixedPointFormat(16, frac)
        elif dtype != DTYPE_F32:
            raise MalformedStreamError(f"unknown tensor dtype {dtype}")
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        dims = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
    except struct.error:
        raise MalformedStreamError("tensor file truncated in header") from None
    except ValueError as exc:
        raise MalformedStreamError(str(exc)) from None
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    width = 4 if dtype == DTYPE_F32 else 2
    if len(buf) - pos != count * width:
        raise MalformedStreamError(
            f"tensor body is {len(buf) - pos} bytes, expected {count * width}"
        )
    if dtype == DTYPE_F32:
        arr = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).astype(np.float64)
    else:
        raw = np.frombuffer(buf, dtype="<i2", count=count, offset=pos)
        arr = raw.astype(np.float64) / (1 << frac)
    return arr.reshape(dims), frac


def write_tensor(path: str | os.PathLike, data, frac_bits: int | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(data, frac_bits))


def read_tensor(path: str | os.PathLike) -> tuple[np.ndarray, int | None]:
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())
