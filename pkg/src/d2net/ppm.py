"""Bit-exact binary portable pixmap (P6) reader and writer.

Only 8-bit P6 with maxval 255 is supported; that keeps the byte stream an
exact function of the pixel array, so write -> read and read -> write both
round-trip losslessly.  Images travel as (3, H, W) uint8 arrays; helpers
convert to and from the network's [0, 1] float domain.
"""

from __future__ import annotations

import numpy as np

from .errors import ImageFormatError


def _tokens(data: bytes):
    """Yield whitespace-separated header tokens, skipping '#' comments;
    also yields the byte offset just past the consumed token."""
    i = 0
    n = len(data)
    while i < n:
        c = data[i:i + 1]
        if c == b"#":
            while i < n and data[i:i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            start = i
            while i < n and not data[i:i + 1].isspace() and data[i:i + 1] != b"#":
                i += 1
            yield data[start:i], i
    return


def read_ppm(source) -> np.ndarray:
    """Read a P6 stream into a (3, H, W) uint8 array."""
    if hasattr(source, "read"):
        data = source.read()
    else:
        with open(source, "rb") as fh:
            data = fh.read()
    tok = _tokens(data)
    try:
        magic, _ = next(tok)
        if magic != b"P6":
            raise ImageFormatError(f"not a binary pixmap: magic {magic!r}, expected b'P6'")
        (w_raw, _), (h_raw, _), (max_raw, end) = next(tok), next(tok), next(tok)
    except StopIteration:
        raise ImageFormatError("truncated pixmap header") from None
    try:
        width, height, maxval = int(w_raw), int(h_raw), int(max_raw)
    except ValueError:
        raise ImageFormatError(f"non-numeric header fields {w_raw!r} {h_raw!r} {max_raw!r}") from None
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"bad extents {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"only maxval 255 is supported, got {maxval}")
    # exactly one whitespace byte separates the header from the raster
    if end >= len(data) or not data[end:end + 1].isspace():
        raise ImageFormatError("missing whitespace after maxval")
    raster = data[end + 1:end + 1 + 3 * width * height]
    if len(raster) != 3 * width * height:
        raise ImageFormatError(
            f"raster truncated: wanted {3 * width * height} bytes, got {len(raster)}"
        )
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_ppm(sink, img: np.ndarray) -> None:
    """Write a (3, H, W) uint8 array as canonical P6."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ImageFormatError(f"expected (3, H, W) image, got {img.shape}")
    if img.dtype != np.uint8:
        raise ImageFormatError(f"expected uint8 pixels, got {img.dtype}")
    _, h, w = img.shape
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    payload = np.ascontiguousarray(img.transpose(1, 2, 0)).tobytes()
    if hasattr(sink, "write"):
        sink.write(header + payload)
    else:
        with open(sink, "wb") as fh:
            fh.write(header + payload)


def to_float(img: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 (3, H, W) -> float (1, 3, H, W) in [0, 1]."""
    return (np.asarray(img, dtype=np.float64)[None] / 255.0).astype(dtype)


def to_uint8(x: np.ndarray) -> np.ndarray:
    """float (.., 3, H, W) in approximately [0, 1] -> uint8 (3, H, W);
    values are clamped, then rounded half-to-even (deterministic)."""
    x = np.asarray(x)
    if x.ndim == 4:
        if x.shape[0] != 1:
            raise ImageFormatError(f"expected a single image, got batch {x.shape[0]}")
        x = x[0]
    scaled = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.rint(scaled).astype(np.uint8)
