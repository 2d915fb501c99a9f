"""Binary PGM (P5) and PPM (P6) codecs.

Gray and binary images are P5 with maxval 255, depth images are P5 with
maxval 65535 (big-endian samples), RGB tactile frames are P6 with maxval 255.
Arrays are row-major with the origin at the top-left pixel.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np


class PNMError(ValueError):
    """Raised for malformed or unsupported PNM data."""


def _tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Read `count` whitespace separated header integers, skipping comments."""
    values: list[int] = []
    pos = 2
    n = len(data)
    while len(values) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise PNMError("truncated or malformed header")
        values.append(int(data[start:pos]))
    # exactly one whitespace byte separates the header from the raster
    if pos >= n or not data[pos : pos + 1].isspace():
        raise PNMError("missing raster separator")
    return values, pos + 1


def decode(data: bytes) -> np.ndarray:
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise PNMError(f"unsupported magic {magic!r}")
    (width, height, maxval), offset = _tokens(data, 3)
    if width <= 0 or height <= 0:
        raise PNMError("non-positive dimensions")
    if not 0 < maxval < 65536:
        raise PNMError(f"bad maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    expected = width * height * channels * dtype.itemsize
    raster = data[offset : offset + expected]
    if len(raster) != expected:
        raise PNMError(f"raster holds {len(raster)} bytes, expected {expected}")
    arr = np.frombuffer(raster, dtype=dtype)
    arr = arr.astype(np.uint16 if maxval > 255 else np.uint8)
    if channels == 3:
        return arr.reshape(height, width, 3)
    return arr.reshape(height, width)


def encode(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[2] == 3:
        magic = b"P6"
    elif image.ndim == 2:
        magic = b"P5"
    else:
        raise PNMError(f"cannot encode array of shape {image.shape}")
    if image.dtype == np.uint8:
        maxval, raster = 255, image.tobytes()
    elif image.dtype == np.uint16:
        if magic == b"P6":
            raise PNMError("16-bit PPM is not supported")
        maxval, raster = 65535, image.astype(">u2").tobytes()
    else:
        raise PNMError(f"unsupported dtype {image.dtype}")
    h, w = image.shape[:2]
    return magic + f"\n{w} {h}\n{maxval}\n".encode("ascii") + raster


def read(path: str | os.PathLike) -> np.ndarray:
    return decode(Path(path).read_bytes())


def write(path: str | os.PathLike, image: np.ndarray) -> None:
    Path(path).write_bytes(encode(image))
