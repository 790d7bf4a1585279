"""Binary PPM (P6, maxval 255) reading and writing."""

from __future__ import annotations

import os
from typing import Union

import numpy as np

from rafanet.errors import FormatError

PathLike = Union[str, os.PathLike]


def _header_tokens(buf: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(buf):
            raise FormatError("truncated PPM header")
        if buf[pos : pos + 1] == b"#":
            end = buf.find(b"\n", pos)
            if end < 0:
                raise FormatError("truncated PPM header")
            pos = end + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    return tokens, pos + 1


def decode_ppm(buf: bytes) -> np.ndarray:
    tokens, offset = _header_tokens(buf, 4)
    if tokens[0] != b"P6":
        raise FormatError(f"not a binary PPM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"non-integer PPM header field in {tokens[1:]}") from None
    if maxval != 255:
        raise FormatError(f"unsupported PPM maxval {maxval}")
    if width < 1 or height < 1:
        raise FormatError(f"empty PPM image {width}x{height}")
    nbytes = width * height * 3
    raster = buf[offset : offset + nbytes]
    if len(raster) != nbytes:
        raise FormatError(f"PPM raster truncated: {len(raster)} of {nbytes} bytes")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3).copy()


def encode_ppm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise FormatError(f"PPM needs a uint8 [h, w, 3] array, got {img.dtype} {img.shape}")
    h, w, _ = img.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def read_ppm(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def write_ppm(path: PathLike, img: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(img))
