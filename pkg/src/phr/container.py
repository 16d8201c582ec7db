"""Binary tensor container ("PHT1") shared by checkpoints and map dumps.

Record layout, all little-endian:
    magic  b"PHT1"
    u8     dtype tag (0 = float32, 1 = float64)
    u8     rank
    u32[r] dims
    raw row-major payload
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"PHT1"

_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class ContainerError(Exception):
    pass


def write_tensor(fh, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array)
    tag = _DTYPE_TAGS.get(arr.dtype)
    if tag is None:
        raise ContainerError(f"cannot serialize dtype {arr.dtype}")
    fh.write(MAGIC)
    fh.write(struct.pack("<BB", tag, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_tensor(fh) -> np.ndarray:
    magic = fh.read(4)
    if magic != MAGIC:
        raise ContainerError(f"bad tensor magic {magic!r}, expected {MAGIC!r}")
    tag, rank = struct.unpack("<BB", _read_exact(fh, 2))
    if tag not in _TAG_DTYPES:
        raise ContainerError(f"unknown dtype tag {tag}")
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
    dtype = _TAG_DTYPES[tag]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = _read_exact(fh, count * dtype.itemsize)
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("="), copy=False)


def save_tensor(path, array: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, array)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ContainerError(f"truncated tensor record: wanted {n} bytes, got {len(buf)}")
    return buf
