"""RAFA1 binary tensor container used for checkpoints and feature files.

Layout (all integers little-endian u32)::

    b"RAFA1" | count | { name_len | utf-8 name | rank | dims... | float64 LE data }*
"""

from __future__ import annotations

import os
import struct
from typing import Mapping, Union

import numpy as np

from rafanet.errors import FormatError
from rafanet.tensor import Tensor

MAGIC = b"RAFA1"

PathLike = Union[str, os.PathLike]


def _as_array(value) -> np.ndarray:
    data = value.data if isinstance(value, Tensor) else value
    return np.array(data, dtype="<f8", order="C")  # ascontiguousarray would promote 0-d to 1-d


def encode_tensors(tensors: Mapping[str, object]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        arr = _as_array(value)
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_tensors(payload: bytes) -> dict:
    if payload[: len(MAGIC)] != MAGIC:
        raise FormatError(f"bad magic {payload[:len(MAGIC)]!r}, expected {MAGIC!r}")
    pos = len(MAGIC)

    def read(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(payload):
            raise FormatError(f"truncated payload at byte {pos}")
        out = struct.unpack_from(fmt, payload, pos)
        pos += size
        return out

    (count,) = read("<I")
    result = {}
    for _ in range(count):
        (name_len,) = read("<I")
        if pos + name_len > len(payload):
            raise FormatError(f"truncated tensor name at byte {pos}")
        try:
            name = payload[pos : pos + name_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"tensor name is not utf-8 at byte {pos}") from exc
        pos += name_len
        (rank,) = read("<I")
        dims = read(f"<{rank}I") if rank else ()
        nbytes = 8 * int(np.prod(dims, dtype=np.int64))
        if pos + nbytes > len(payload):
            raise FormatError(f"truncated data for tensor {name!r}")
        arr = np.frombuffer(payload, dtype="<f8", count=nbytes // 8, offset=pos).reshape(dims)
        pos += nbytes
        result[name] = arr.astype(np.float64)
    if pos != len(payload):
        raise FormatError(f"{len(payload) - pos} trailing bytes after last tensor")
    return result


def save_tensors(path: PathLike, tensors: Mapping[str, object]) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tensors(tensors))


def load_tensors(path: PathLike) -> dict:
    """Read a RAFA1 file into ``{name: float64 ndarray}`` (insertion-ordered)."""
    with open(path, "rb") as fh:
        return decode_tensors(fh.read())
