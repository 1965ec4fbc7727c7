"""Binary PGM (P5) / PPM (P6) rasters with maxval 255, plus read-only PNG.

Arrays are ``uint8``: ``(h, w)`` for grayscale, ``(h, w, 3)`` for colour.
"""
from __future__ import annotations

import os

import numpy as np

from rdsnet.checkpoint import atomic_write_bytes


class RasterError(ValueError):
    """A file is not a readable raster."""


PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _header_tokens(data, count):
    tokens, i, n = [], 2, len(data)
    while len(tokens) < count:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i < n and data[i:i + 1] == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not data[i:i + 1].isspace() and data[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise RasterError("truncated header")
        tokens.append(data[start:i])
    if i >= n or not data[i:i + 1].isspace():
        raise RasterError("header must end with a single whitespace byte")
    return tokens, i + 1


def decode_pnm(data):
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise RasterError(f"unsupported magic {magic!r}; expected P5 or P6")
    tokens, offset = _header_tokens(data, 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise RasterError(f"non-numeric header field: {exc}") from None
    if width < 1 or height < 1:
        raise RasterError(f"invalid extents {width}x{height}")
    if maxval != 255:
        raise RasterError(f"only maxval 255 is supported, got {maxval}")
    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    body = data[offset:offset + need]
    if len(body) < need:
        raise RasterError(f"pixel data truncated: {len(body)} of {need} bytes")
    arr = np.frombuffer(body, dtype=np.uint8).copy()
    return arr.reshape((height, width) if channels == 1 else (height, width, 3))


def encode_pnm(array):
    a = np.asarray(array)
    if a.dtype != np.uint8:
        raise RasterError(f"raster data must be uint8, got {a.dtype}")
    if a.ndim == 2:
        magic = b"P5"
    elif a.ndim == 3 and a.shape[2] == 3:
        magic = b"P6"
    else:
        raise RasterError(f"cannot encode array of shape {a.shape}")
    h, w = a.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(a).tobytes()


def decode_png(data):
    try:
        from PIL import Image
    except ImportError:
        raise RasterError("PNG input needs Pillow (pip install 'rdsnet[png]')") from None
    import io

    try:
        with Image.open(io.BytesIO(data)) as im:
            im = im.convert("L") if im.mode in ("1", "L", "I", "I;16", "F") else im.convert("RGB")
            return np.asarray(im, dtype=np.uint8).copy()
    except OSError as exc:
        raise RasterError(f"bad PNG: {exc}") from None


def decode(data):
    if data[:8] == PNG_MAGIC:
        return decode_png(data)
    return decode_pnm(data)


def read_image(path):
    """Read a PGM, PPM or PNG file, detecting the format from its leading bytes."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise RasterError(f"{path}: {exc.strerror or exc}") from None
    try:
        return decode(data)
    except RasterError as exc:
        raise RasterError(f"{path}: {exc}") from None


def write_pnm(path, array):
    atomic_write_bytes(path, encode_pnm(array))


def to_uint8(m):
    """Quantise a [0, 1] map to 8 bits with rounding."""
    return np.rint(np.clip(np.asarray(m, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def as_rgb(a):
    """Promote a grayscale raster to three channels."""
    a = np.asarray(a)
    return np.repeat(a[..., None], 3, axis=2) if a.ndim == 2 else a


def as_gray(a):
    """Collapse a colour raster to one channel by the rounded channel mean."""
    a = np.asarray(a)
    if a.ndim == 2:
        return a
    return np.rint(a.astype(np.float64).mean(axis=2)).astype(np.uint8)


def stem(path):
    return os.path.splitext(os.path.basename(path))[0]
