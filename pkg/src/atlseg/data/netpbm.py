"""Binary Netpbm (P5 grey, P6 RGB) reading and writing, 8-bit samples only."""

from __future__ import annotations

import os

import numpy as np

from .errors import HeaderError, UnreadableFileError


def _parse_header(buf: bytes, path) -> tuple[str, int, int, int, int]:
    tokens: list[bytes] = []
    i, n = 0, len(buf)
    while len(tokens) < 4:
        while i < n and buf[i:i + 1].isspace():
            i += 1
        if i < n and buf[i:i + 1] == b"#":
            while i < n and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not buf[i:i + 1].isspace() and buf[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise HeaderError(f"{path}: truncated Netpbm header")
        tokens.append(buf[start:i])
    # exactly one whitespace byte separates the header from the raster
    i += 1
    magic = tokens[0].decode("ascii", "replace")
    if magic not in ("P5", "P6"):
        raise HeaderError(f"{path}: unsupported Netpbm magic {magic!r} (need P5 or P6)")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise HeaderError(f"{path}: non-numeric Netpbm header fields") from None
    if width <= 0 or height <= 0 or not 0 < maxval < 256:
        raise HeaderError(f"{path}: invalid size {width}x{height} or maxval {maxval}")
    return magic, width, height, maxval, i


def read_netpbm(path) -> tuple[np.ndarray, int]:
    """Return ``(array, maxval)``; array is ``[H,W]`` for P5 and ``[H,W,3]`` for P6."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise UnreadableFileError(f"cannot read {path}: {exc.strerror or exc}") from exc
    magic, w, h, maxval, offset = _parse_header(buf, path)
    channels = 3 if magic == "P6" else 1
    need = w * h * channels
    raster = buf[offset:offset + need]
    if len(raster) < need:
        raise HeaderError(f"{path}: raster has {len(raster)} bytes, header promises {need}")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape((h, w, 3) if channels == 3 else (h, w))
    return arr.copy(), maxval


def write_pgm(path, array: np.ndarray) -> None:
    arr = np.asarray(array, dtype=np.uint8)
    if arr.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {arr.shape}")
    _write(path, b"P5", arr)


def write_ppm(path, array: np.ndarray) -> None:
    """``array`` is ``[H,W,3]`` uint8."""
    arr = np.asarray(array, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"PPM needs an [H,W,3] array, got shape {arr.shape}")
    _write(path, b"P6", arr)


def _write(path, magic: bytes, arr: np.ndarray) -> None:
    h, w = arr.shape[:2]
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(arr).tobytes())
