"""Neural primitives with hand-written forward/backward pairs.

Every forward returns ``(out, cache)`` where ``cache`` carries exactly the
values its backward needs; backwards are pure vector-Jacobian products that
never mutate the cache, so replaying them is bitwise reproducible.

Convolutions use "same" spatial padding realized by reflection.  Two
evaluation strategies coexist: the training path (``conv2d``) favors
throughput (im2col plus one GEMM for full kernels), while the inference
path (``conv2d_infer``) favors memory, accumulating one pointwise pass per
kernel offset so its transient footprint stays a couple of input-sized
buffers regardless of kernel area; the activation-memory accounting
instruments that path.  The two differ only in floating-point summation
order and agree to rounding tolerance.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import ShapeError

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


def _floats(arr: np.ndarray) -> int:
    return arr.size * (2 if np.iscomplexobj(arr) else 1)


# ---------------------------------------------------------------------------
# reflect padding on all four borders (convolution "same" padding) + adjoint

def pad_reflect4(x: np.ndarray, pt: int, pb: int, pl: int, pr: int) -> np.ndarray:
    if max(pt, pb) >= x.shape[2] or max(pl, pr) >= x.shape[3]:
        raise ShapeError(
            f"reflect pad ({pt},{pb},{pl},{pr}) needs extents > pad, got {x.shape[2:]}"
        )
    if pt == pb == pl == pr == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), mode="reflect")


def pad_reflect4_adjoint(g: np.ndarray, pt: int, pb: int, pl: int, pr: int) -> np.ndarray:
    """Adjoint of ``pad_reflect4``: folds border gradients onto their sources."""
    h = g.shape[2] - pt - pb
    w = g.shape[3] - pl - pr
    out = g[:, :, pt:pt + h, :].copy()
    if pt:
        out[:, :, 1:1 + pt, :] += g[:, :, :pt, :][:, :, ::-1, :]
    if pb:
        out[:, :, h - 1 - pb:h - 1, :] += g[:, :, pt + h:, :][:, :, ::-1, :]
    res = out[:, :, :, pl:pl + w].copy()
    if pl:
        res[:, :, :, 1:1 + pl] += out[:, :, :, :pl][:, :, :, ::-1]
    if pr:
        res[:, :, :, w - 1 - pr:w - 1] += out[:, :, :, pl + w:][:, :, :, ::-1]
    return res


# ---------------------------------------------------------------------------
# convolution (stride 1, same padding, odd kernels; full or depthwise)

def _check_conv_args(x, w, b, depthwise):
    if x.ndim != 4:
        raise ShapeError(f"conv input must be 4-D, got {x.shape}")
    if depthwise:
        if w.ndim != 3 or w.shape[0] != x.shape[1]:
            raise ShapeError(
                f"depthwise weight (C,kh,kw) must match C={x.shape[1]}, got {w.shape}"
            )
        kh, kw = w.shape[1:]
    else:
        if w.ndim != 4 or w.shape[1] != x.shape[1]:
            raise ShapeError(
                f"conv weight (O,C,kh,kw) must have C={x.shape[1]}, got {w.shape}"
            )
        kh, kw = w.shape[2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel extents must be odd, got ({kh},{kw})")
    out_ch = w.shape[0]
    if b is not None and b.shape != (out_ch,):
        raise ShapeError(f"bias shape {b.shape} must be ({out_ch},)")
    return kh, kw


def _conv_offsets(x, w, b, depthwise, ledger=None, label="conv"):
    """Offset-accumulation evaluation: one pointwise pass per kernel offset.

    Transient footprint is a couple of input-sized buffers regardless of
    kernel area, which is what the inference path's linear-memory accounting
    measures.  Slower than the im2col route on full kernels.
    """
    kh, kw = _check_conv_args(x, w, b, depthwise)
    n, c, h, wd = x.shape
    ph, pw = kh // 2, kw // 2
    xp = pad_reflect4(x, ph, ph, pw, pw)
    if ledger is not None and xp is not x:
        ledger.alloc(f"{label}.pad", _floats(xp))
    o = w.shape[0]
    out = np.zeros((n, o, h, wd), dtype=x.dtype)
    if ledger is not None:
        ledger.alloc(f"{label}.out", _floats(out))
        scratch = (0 if (ph == 0 and pw == 0) else n * c * h * wd) + out.size
        ledger.alloc(f"{label}.scratch", scratch)
    if depthwise:
        for dy in range(kh):
            for dx in range(kw):
                sl = xp[:, :, dy:dy + h, dx:dx + wd]
                out += w[:, dy, dx][None, :, None, None] * sl
    else:
        of = out.reshape(n, o, h * wd)
        for dy in range(kh):
            for dx in range(kw):
                sl = xp[:, :, dy:dy + h, dx:dx + wd].reshape(n, c, h * wd)
                of += np.matmul(w[:, :, dy, dx], sl)
    if b is not None:
        out += b[None, :, None, None]
    if ledger is not None:
        ledger.free(scratch)
        if xp is not x:
            ledger.free(_floats(xp))
    return out


def conv2d_infer(x, w, b, *, depthwise=False, ledger=None, label="conv"):
    """Memory-lean forward used by the inference/accounting path."""
    return _conv_offsets(x, w, b, depthwise, ledger=ledger, label=label)


def conv2d(x, w, b, *, depthwise=False):
    """Training forward.  Returns (out, cache) for ``conv2d_backward``.

    Full kernels larger than 1x1 go through im2col and a single GEMM (fast,
    at the cost of a kernel-area-sized column buffer retained in the cache);
    depthwise and pointwise kernels use direct evaluations.
    """
    kh, kw = _check_conv_args(x, w, b, depthwise)
    n, c, h, wd = x.shape
    ph, pw = kh // 2, kw // 2
    if depthwise:
        out = _conv_offsets(x, w, b, True)
        return out, ("dw", pad_reflect4(x, ph, ph, pw, pw), x.shape, w, (ph, pw))
    if kh == 1 and kw == 1:
        out = np.matmul(w[:, :, 0, 0], x.reshape(n, c, h * wd)).reshape(n, -1, h, wd)
        if b is not None:
            out = out + b[None, :, None, None]
        return out, ("pw", x, x.shape, w, (0, 0))
    xp = pad_reflect4(x, ph, ph, pw, pw)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    col = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * h * wd, c * kh * kw
    )
    out = col @ w.reshape(w.shape[0], -1).T
    out = np.ascontiguousarray(out.reshape(n, h, wd, -1).transpose(0, 3, 1, 2))
    if b is not None:
        out += b[None, :, None, None]
    return out, ("col", col, x.shape, w, (ph, pw))


def conv2d_backward(cache, gy):
    """Returns (gx, gw, gb)."""
    kind, saved, x_shape, w, (ph, pw) = cache
    n, c, h, wd = x_shape
    gb = gy.sum(axis=(0, 2, 3))
    if kind == "pw":
        x = saved
        gyf = gy.reshape(n, -1, h * wd)
        xf = x.reshape(n, c, h * wd)
        gw = np.matmul(gyf, xf.transpose(0, 2, 1)).sum(axis=0)[:, :, None, None]
        gx = np.matmul(w[:, :, 0, 0].T, gyf).reshape(n, c, h, wd)
        return gx, gw, gb
    if kind == "col":
        col = saved
        o, _, kh, kw = w.shape
        gyf = np.ascontiguousarray(gy.transpose(0, 2, 3, 1)).reshape(n * h * wd, o)
        gw = (gyf.T @ col).reshape(w.shape)
        gcol = (gyf @ w.reshape(o, -1)).reshape(n, h, wd, c, kh, kw)
        gxp = np.zeros((n, c, h + 2 * ph, wd + 2 * pw), dtype=gy.dtype)
        for dy in range(kh):
            for dx in range(kw):
                gxp[:, :, dy:dy + h, dx:dx + wd] += gcol[:, :, :, :, dy, dx].transpose(0, 3, 1, 2)
        gx = pad_reflect4_adjoint(gxp, ph, ph, pw, pw) if (ph or pw) else gxp
        return gx, gw, gb
    # depthwise
    xp = saved
    _, kh, kw = w.shape
    gw = np.zeros_like(w)
    gxp = np.zeros_like(xp)
    for dy in range(kh):
        for dx in range(kw):
            sl = xp[:, :, dy:dy + h, dx:dx + wd]
            gw[:, dy, dx] = np.einsum("nchw,nchw->c", gy, sl)
            gxp[:, :, dy:dy + h, dx:dx + wd] += w[:, dy, dx][None, :, None, None] * gy
    gx = pad_reflect4_adjoint(gxp, ph, ph, pw, pw) if (ph or pw) else gxp
    return gx, gw, gb


# ---------------------------------------------------------------------------
# activations and normalization

def gelu(x):
    """Exact Gaussian-error linear unit x * Phi(x) (erf form, no tanh fit)."""
    phi = 0.5 * (1.0 + erf(x * x.dtype.type(_INV_SQRT2)))
    return x * phi, (x, phi)


def gelu_infer(x, ledger=None, label="gelu"):
    out, _ = gelu(x)
    if ledger is not None:
        ledger.alloc(f"{label}.out", _floats(out))
        ledger.alloc(f"{label}.scratch", out.size)
        ledger.free(out.size)
    return out


def gelu_backward(cache, gy):
    x, phi = cache
    pdf = x.dtype.type(_INV_SQRT2PI) * np.exp(-0.5 * x * x)
    return gy * (phi + x * pdf)


def softmax_pair(a, b):
    """Stable two-way softmax over paired tensors; weights sum to 1 elementwise."""
    if a.shape != b.shape:
        raise ShapeError(f"softmax_pair: shape mismatch {a.shape} vs {b.shape}")
    m = np.maximum(a, b)
    ea = np.exp(a - m)
    eb = np.exp(b - m)
    s = ea + eb
    wa = ea / s
    wb = eb / s
    return (wa, wb), (wa, wb)


def softmax_pair_backward(cache, gwa, gwb):
    wa, wb = cache
    d = wa * wb
    ga = (gwa - gwb) * d
    return ga, -ga


def layer_norm(x, gain, offset, eps=1e-6):
    """Normalize across channels at each (batch, y, x) position, then affine."""
    if gain.shape != (x.shape[1],) or offset.shape != (x.shape[1],):
        raise ShapeError(
            f"layer_norm: gain/offset must have C={x.shape[1]} entries, "
            f"got {gain.shape}/{offset.shape}"
        )
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv
    out = gain[None, :, None, None] * xhat + offset[None, :, None, None]
    return out, (xhat, inv, gain)


def layer_norm_infer(x, gain, offset, eps=1e-6, ledger=None, label="norm"):
    out, _ = layer_norm(x, gain, offset, eps)
    if ledger is not None:
        ledger.alloc(f"{label}.out", _floats(out))
        ledger.alloc(f"{label}.scratch", out.size)
        ledger.free(out.size)
    return out


def layer_norm_backward(cache, gy):
    xhat, inv, gain = cache
    ggain = np.einsum("nchw,nchw->c", gy, xhat)
    goffset = gy.sum(axis=(0, 2, 3))
    gxh = gy * gain[None, :, None, None]
    m1 = gxh.mean(axis=1, keepdims=True)
    m2 = np.mean(gxh * xhat, axis=1, keepdims=True)
    gx = inv * (gxh - m1 - xhat * m2)
    return gx, ggain, goffset


# ---------------------------------------------------------------------------
# exact resampling permutations (pixel unshuffle / shuffle, factor 2)

def space_to_depth(x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"space_to_depth needs even extents, got ({h},{w}); pad first")
    t = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(t).reshape(n, c * 4, h // 2, w // 2)


def depth_to_space(x):
    n, c, h, w = x.shape
    if c % 4:
        raise ShapeError(f"depth_to_space needs C divisible by 4, got {c}")
    t = x.reshape(n, c // 4, 2, 2, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(t).reshape(n, c // 4, h * 2, w * 2)
