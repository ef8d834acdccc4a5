"""Binary tensor fixture format.

Layout: 4 magic bytes (``TNS4`` for float32 payloads, ``TNS8`` for float64),
rank as a little-endian uint64, each extent as a little-endian uint64, then
the elements as raw little-endian floats in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .core import Tensor

_MAGICS = {b"TNS4": "<f4", b"TNS8": "<f8"}
_BY_ITEMSIZE = {4: b"TNS4", 8: b"TNS8"}


class FixtureFormatError(ValueError):
    """Raised when a fixture file is truncated or malformed."""


def dump_tensor(value: Union[Tensor, np.ndarray]) -> bytes:
    arr = value.data if isinstance(value, Tensor) else np.asarray(value)
    if arr.dtype not in (np.float32, np.float64):
        raise FixtureFormatError(f"unsupported dtype {arr.dtype}; expected float32/float64")
    magic = _BY_ITEMSIZE[arr.dtype.itemsize]
    header = magic + struct.pack("<Q", arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    payload = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
    return header + payload


def parse_tensor(blob: bytes) -> np.ndarray:
    if len(blob) < 12:
        raise FixtureFormatError("fixture shorter than its fixed header")
    magic, rest = blob[:4], blob[4:]
    if magic not in _MAGICS:
        raise FixtureFormatError(f"bad magic {magic!r}")
    dtype = np.dtype(_MAGICS[magic])
    (rank,) = struct.unpack("<Q", rest[:8])
    rest = rest[8:]
    if len(rest) < 8 * rank:
        raise FixtureFormatError("fixture truncated inside the extent list")
    shape = struct.unpack(f"<{rank}Q", rest[: 8 * rank]) if rank else ()
    body = rest[8 * rank :]
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    if len(body) != count * dtype.itemsize:
        raise FixtureFormatError(
            f"payload holds {len(body)} bytes, expected {count * dtype.itemsize}"
        )
    arr = np.frombuffer(body, dtype=dtype).reshape(shape)
    return arr.astype(arr.dtype.newbyteorder("="))


def save_tensor(path: Union[str, Path], value: Union[Tensor, np.ndarray]) -> None:
    Path(path).write_bytes(dump_tensor(value))


def load_tensor(path: Union[str, Path]) -> np.ndarray:
    return parse_tensor(Path(path).read_bytes())
