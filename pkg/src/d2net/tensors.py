"""Dense 4-axis tensors and the layout operations everything else builds on.

A tensor is a numpy array of shape (batch, channel, height, width), row-major
with width fastest, in one of two precisions: float32 for training and
inference, float64 for oracles and gradient checks.  All operations here are
pure functions; nothing mutates its inputs.

Optional debug guards (``set_debug_guards``) verify that no operation
produces NaN/Inf from finite inputs; they are off by default for speed.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import NonFiniteError, PrecisionError, ShapeError

SINGLE = np.float32
DOUBLE = np.float64

_PRECISIONS = {"single": SINGLE, "double": DOUBLE}

_debug_guards = bool(int(os.environ.get("D2NET_DEBUG", "0")))


def set_debug_guards(enabled: bool) -> None:
    """Enable/disable NaN/Inf checking on every tensor op output."""
    global _debug_guards
    _debug_guards = bool(enabled)


def debug_guards_enabled() -> bool:
    return _debug_guards


def dtype_of(precision: str) -> np.dtype:
    """Map 'single'/'double' onto the numpy scalar type."""
    try:
        return _PRECISIONS[precision]
    except KeyError:
        raise PrecisionError(f"unknown precision {precision!r}; expected 'single' or 'double'")


def _guard(out: np.ndarray) -> np.ndarray:
    if _debug_guards and not np.all(np.isfinite(out)):
        raise NonFiniteError("operation produced NaN/Inf from finite inputs")
    return out


def ensure_nchw(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    """Validate that ``x`` is a real 4-D (N, C, H, W) array in a supported precision."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (N, C, H, W), got ndim={x.ndim} shape={x.shape}")
    if x.dtype not in (SINGLE, DOUBLE):
        raise PrecisionError(f"{name} must be float32 or float64, got {x.dtype}")
    return x


def _check_pair(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise PrecisionError(f"{op}: precision mismatch {a.dtype} vs {b.dtype}")


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = ensure_nchw(a, "a"), ensure_nchw(b, "b")
    _check_pair(a, b, "add")
    return _guard(a + b)


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = ensure_nchw(a, "a"), ensure_nchw(b, "b")
    _check_pair(a, b, "sub")
    return _guard(a - b)


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = ensure_nchw(a, "a"), ensure_nchw(b, "b")
    _check_pair(a, b, "mul")
    return _guard(a * b)


def scale(a: np.ndarray, s: float) -> np.ndarray:
    a = ensure_nchw(a, "a")
    return _guard(a * a.dtype.type(s))


def split_channels(x: np.ndarray, sizes: list[int]) -> list[np.ndarray]:
    """Split along the channel axis into contiguous groups of the given sizes.

    ``concat_channels`` inverts the split exactly.
    """
    x = ensure_nchw(x)
    c = x.shape[1]
    if any(s < 0 for s in sizes) or sum(sizes) != c:
        raise ShapeError(f"split sizes {sizes} must be non-negative and sum to C={c}")
    parts = []
    start = 0
    for s in sizes:
        parts.append(x[:, start:start + s])
        start += s
    return parts


def concat_channels(parts: list[np.ndarray]) -> np.ndarray:
    if not parts:
        raise ShapeError("concat_channels needs at least one part")
    first = ensure_nchw(parts[0], "parts[0]")
    for i, p in enumerate(parts[1:], start=1):
        p = ensure_nchw(p, f"parts[{i}]")
        n, _, h, w = p.shape
        if (n, h, w) != (first.shape[0], first.shape[2], first.shape[3]):
            raise ShapeError(
                f"concat_channels: parts[{i}] has (N,H,W)=({n},{h},{w}), "
                f"expected ({first.shape[0]},{first.shape[2]},{first.shape[3]})"
            )
        if p.dtype != first.dtype:
            raise PrecisionError(f"concat_channels: parts[{i}] is {p.dtype}, expected {first.dtype}")
    return np.concatenate(parts, axis=1)


def pad_reflect(x: np.ndarray, bottom: int, right: int) -> np.ndarray:
    """Reflect-pad the bottom/right borders (no edge repeat).

    Used to round H, W up to a required multiple; undone exactly by ``crop``.
    """
    x = ensure_nchw(x)
    _, _, h, w = x.shape
    if bottom < 0 or right < 0:
        raise ShapeError("pad amounts must be non-negative")
    if bottom >= h or right >= w:
        raise ShapeError(f"reflect pad ({bottom},{right}) must be < extent ({h},{w})")
    if bottom == 0 and right == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (0, bottom), (0, right)), mode="reflect")


def crop(x: np.ndarray, h: int, w: int) -> np.ndarray:
    """Keep the top-left h x w window of each channel."""
    x = ensure_nchw(x)
    if h > x.shape[2] or w > x.shape[3]:
        raise ShapeError(f"crop to ({h},{w}) exceeds extents {x.shape[2:]}")
    return np.ascontiguousarray(x[:, :, :h, :w])
