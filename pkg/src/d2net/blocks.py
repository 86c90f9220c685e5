"""The restoration building blocks: Fourier-domain global attention,
multi-scale local convolution, gated skip fusion, and the feedforward
stage, composed into the repeated feature-extraction block.

The attention block computes, per channel and per non-overlapping patch,
the inverse transform of the product of the query and key spectra.  Under
the unitary transform this equals their circular convolution divided by
sqrt(patch*patch); the result modulates the value map elementwise, so no
position-by-position attention matrix ever exists and transient memory
stays linear in H*W.

``infer`` paths run the same arithmetic cache-free, releasing intermediates
as soon as they are dead and reporting every allocation to an optional
memory ledger.
"""

from __future__ import annotations

import numpy as np

from . import ops, spectral
from .config import BlockConfig
from .errors import ShapeError
from .layers import Conv2d, ConvGroup, GradStore, Identity, Layer, LayerNorm
from .tensors import concat_channels, split_channels

_RESIDUE_FACTOR = {np.dtype(np.float32): 1e-6, np.dtype(np.float64): 1e-9}


def _floats(arr) -> int:
    return arr.size * (2 if np.iscomplexobj(arr) else 1)


def _alloc(ledger, label, arr):
    if ledger is not None:
        ledger.alloc(label, _floats(arr))


def _free(ledger, *arrays):
    if ledger is not None:
        for arr in arrays:
            ledger.free(_floats(arr))


class FourierAttention(Layer):
    """Global feature coupling via per-patch spectral products (the
    linear-memory stand-in for spatial self-attention)."""

    def __init__(self, channels, freq_patch, *, group_order="pointwise-then-dwconv",
                 rng, dtype):
        self.to_query = ConvGroup(channels, group_order, rng=rng, dtype=dtype)
        self.to_key = ConvGroup(channels, group_order, rng=rng, dtype=dtype)
        self.to_value = ConvGroup(channels, group_order, rng=rng, dtype=dtype)
        self.project = Conv2d(channels, channels, 1, 1, rng=rng, dtype=dtype)
        self._patch = int(freq_patch)

    # -- geometry -----------------------------------------------------------
    def _pads(self, h, w):
        p = self._patch
        pb, pr = (-h) % p, (-w) % p
        if (pb and pb > h - 1) or (pr and pr > w - 1):
            raise ShapeError(
                f"extents ({h},{w}) too small to reflect-pad to a multiple of {p}"
            )
        return pb, pr

    def _residue_tol(self, q, k):
        factor = _RESIDUE_FACTOR[q.dtype]
        return factor * float(np.max(np.abs(q), initial=0.0)) * float(
            np.max(np.abs(k), initial=0.0)
        )

    def attention_map(self, q, k):
        """Per-patch inverse transform of the spectral product of q and k.

        Equals circconv(q_patch, k_patch) / patch for every patch; feeding a
        unit impulse scaled by patch as q returns k unchanged.
        """
        h, w = q.shape[2], q.shape[3]
        pb, pr = self._pads(h, w)
        qp = ops.pad_reflect4(q, 0, pb, 0, pr)
        kp = ops.pad_reflect4(k, 0, pb, 0, pr)
        fq = spectral.patchwise_dft(qp, self._patch)
        fk = spectral.patchwise_dft(kp, self._patch)
        m = spectral.patchwise_idft(
            fq * fk, h + pb, w + pr, imag_tol=self._residue_tol(q, k)
        ).astype(q.dtype, copy=False)
        return m[:, :, :h, :w] if (pb or pr) else m, (fq, fk, pb, pr)

    # -- training path ------------------------------------------------------
    def forward(self, x, need_cache: bool = False):
        q, qc = self.to_query.forward(x)
        k, kc = self.to_key.forward(x)
        v, vc = self.to_value.forward(x)
        m, (fq, fk, pb, pr) = self.attention_map(q, k)
        vm = v * m
        out, pc = self.project.forward(vm)
        cache = (qc, kc, vc, pc, fq, fk, v, m, (x.shape, pb, pr))
        return out, cache

    def backward(self, cache, gy, grads: GradStore, prefix: str = ""):
        qc, kc, vc, pc, fq, fk, v, m, (x_shape, pb, pr) = cache
        n, c, h, w = x_shape
        p = self._patch
        gvm = self.project.backward(pc, gy, grads, prefix + "project.")
        gv = gvm * m
        gm = gvm * v
        if pb or pr:
            gmp = np.zeros((n, c, h + pb, w + pr), dtype=gm.dtype)
            gmp[:, :, :h, :w] = gm
        else:
            gmp = gm
        gprod = spectral.dft2(spectral.extract_patches(gmp, p))
        # adjoint of Re(idft2(.)) is dft2 of the (real) output gradient;
        # the elementwise spectral product differentiates conjugate-wise
        gfq = gprod * np.conj(fk)
        gfk = gprod * np.conj(fq)
        gq = spectral.merge_patches(
            spectral.idft2(gfq), h + pb, w + pr
        ).astype(gm.dtype, copy=False)
        gk = spectral.merge_patches(
            spectral.idft2(gfk), h + pb, w + pr
        ).astype(gm.dtype, copy=False)
        if pb or pr:
            gq = ops.pad_reflect4_adjoint(gq, 0, pb, 0, pr)
            gk = ops.pad_reflect4_adjoint(gk, 0, pb, 0, pr)
        gx = self.to_query.backward(qc, gq, grads, prefix + "to_query.")
        gx = gx + self.to_key.backward(kc, gk, grads, prefix + "to_key.")
        gx = gx + self.to_value.backward(vc, gv, grads, prefix + "to_value.")
        return gx

    # -- inference path (ledger-instrumented, eager frees) ------------------
    def infer(self, x, ledger=None, label: str = "attn"):
        p = self._patch
        h, w = x.shape[2], x.shape[3]
        pb, pr = self._pads(h, w)
        hp, wp = h + pb, w + pr

        q = self.to_query.infer(x, ledger, f"{label}.q")
        k = self.to_key.infer(x, ledger, f"{label}.k")
        tol = self._residue_tol(q, k)

        def spectrum(t, tag):
            tp = ops.pad_reflect4(t, 0, pb, 0, pr)
            if tp is not t:
                _alloc(ledger, f"{label}.{tag}.pad", tp)
                _free(ledger, t)
            pt = spectral.extract_patches(tp, p)
            _alloc(ledger, f"{label}.{tag}.patches", pt)
            _free(ledger, tp)
            ft = spectral.dft2(pt)
            _alloc(ledger, f"{label}.{tag}.spectrum", ft)
            _free(ledger, pt)
            return ft

        fq = spectrum(q, "q")
        fk = spectrum(k, "k")
        prod = fq * fk
        _alloc(ledger, f"{label}.product", prod)
        _free(ledger, fq, fk)

        if ledger is not None:  # complex inverse + residue scan scratch
            ledger.alloc(f"{label}.ifft", 3 * prod.size)
        mp = spectral.idft2(prod, imag_tol=tol)
        _alloc(ledger, f"{label}.map.patches", mp)
        if ledger is not None:
            ledger.free(3 * prod.size)
        _free(ledger, prod)

        m = spectral.merge_patches(mp, hp, wp).astype(x.dtype, copy=False)
        _alloc(ledger, f"{label}.map", m)
        _free(ledger, mp)
        if pb or pr:
            mc = np.ascontiguousarray(m[:, :, :h, :w])
            _alloc(ledger, f"{label}.map.crop", mc)
            _free(ledger, m)
            m = mc

        v = self.to_value.infer(x, ledger, f"{label}.v")
        vm = v * m
        _alloc(ledger, f"{label}.modulated", vm)
        _free(ledger, v, m)
        out = self.project.infer(vm, ledger, f"{label}.project")
        _free(ledger, vm)
        return out


class MultiScaleConv(Layer):
    """Channel-split local mixing: one square depthwise kernel, one
    horizontal and one vertical band kernel, and an untouched remainder."""

    def __init__(self, channels, cfg: BlockConfig, *, rng, dtype):
        g = cfg.branch_channels(channels)
        self.square = Conv2d(g, g, cfg.square_kernel, cfg.square_kernel,
                             depthwise=True, rng=rng, dtype=dtype)
        self.horizontal = Conv2d(g, g, 1, cfg.band_kernel, depthwise=True,
                                 rng=rng, dtype=dtype)
        self.vertical = Conv2d(g, g, cfg.band_kernel, 1, depthwise=True,
                               rng=rng, dtype=dtype)
        self._g = g
        self._channels = channels

    @property
    def split_sizes(self):
        g = self._g
        return [g, g, g, self._channels - 3 * g]

    def forward(self, x, need_cache: bool = False):
        p_sq, p_h, p_v, p_id = split_channels(x, self.split_sizes)
        o_sq, c_sq = self.square.forward(p_sq)
        o_h, c_h = self.horizontal.forward(p_h)
        o_v, c_v = self.vertical.forward(p_v)
        out = concat_channels([o_sq, o_h, o_v, p_id])
        return out, (c_sq, c_h, c_v)

    def backward(self, cache, gy, grads: GradStore, prefix: str = ""):
        c_sq, c_h, c_v = cache
        g_sq, g_h, g_v, g_id = split_channels(gy, self.split_sizes)
        gx_sq = self.square.backward(c_sq, g_sq, grads, prefix + "square.")
        gx_h = self.horizontal.backward(c_h, g_h, grads, prefix + "horizontal.")
        gx_v = self.vertical.backward(c_v, g_v, grads, prefix + "vertical.")
        return concat_channels([gx_sq, gx_h, gx_v, g_id])

    def infer(self, x, ledger=None, label: str = "local"):
        p_sq, p_h, p_v, p_id = split_channels(x, self.split_sizes)
        o_sq = self.square.infer(p_sq, ledger, f"{label}.square")
        o_h = self.horizontal.infer(p_h, ledger, f"{label}.horizontal")
        o_v = self.vertical.infer(p_v, ledger, f"{label}.vertical")
        out = concat_channels([o_sq, o_h, o_v, p_id])
        _alloc(ledger, f"{label}.concat", out)
        _free(ledger, o_sq, o_h, o_v)
        return out


class SkipFusionGate(Layer):
    """Gated fusion of encoder and decoder features at the same level.

    Produces elementwise softmax weights from the joint projection, so the
    output is a per-element convex combination of the two projected inputs.
    """

    def __init__(self, channels, *, rng, dtype):
        self.proj_enc = Conv2d(channels, channels, 1, 1, rng=rng, dtype=dtype)
        self.proj_dec = Conv2d(channels, channels, 1, 1, rng=rng, dtype=dtype)
        self.gate = Conv2d(2 * channels, 2 * channels, 1, 1, rng=rng, dtype=dtype)
        self._channels = channels

    def forward(self, f_enc, f_dec, need_cache: bool = False):
        if f_enc.shape != f_dec.shape:
            raise ShapeError(
                f"skip fusion inputs must match, got {f_enc.shape} vs {f_dec.shape}"
            )
        a, ca = self.proj_enc.forward(f_enc)
        b, cb = self.proj_dec.forward(f_dec)
        m, cm = self.gate.forward(concat_channels([a, b]))
        m0, m1 = split_channels(m, [self._channels, self._channels])
        (w0, w1), cs = ops.softmax_pair(m0, m1)
        out = a * w0 + b * w1
        return out, (ca, cb, cm, cs, a, b, w0, w1)

    def backward(self, cache, gy, grads: GradStore, prefix: str = ""):
        ca, cb, cm, cs, a, b, w0, w1 = cache
        gm0, gm1 = ops.softmax_pair_backward(cs, gy * a, gy * b)
        gm = concat_channels([gm0, gm1])
        gcat = self.gate.backward(cm, gm, grads, prefix + "gate.")
        ga_extra, gb_extra = split_channels(gcat, [self._channels, self._channels])
        ga = gy * w0 + ga_extra
        gb = gy * w1 + gb_extra
        g_enc = self.proj_enc.backward(ca, ga, grads, prefix + "proj_enc.")
        g_dec = self.proj_dec.backward(cb, gb, grads, prefix + "proj_dec.")
        return g_enc, g_dec

    def infer(self, f_enc, f_dec, ledger=None, label: str = "fuse"):
        a = self.proj_enc.infer(f_enc, ledger, f"{label}.enc")
        b = self.proj_dec.infer(f_dec, ledger, f"{label}.dec")
        cat = concat_channels([a, b])
        _alloc(ledger, f"{label}.concat", cat)
        m = self.gate.infer(cat, ledger, f"{label}.gate")
        _free(ledger, cat)
        m0, m1 = split_channels(m, [self._channels, self._channels])
        (w0, w1), _ = ops.softmax_pair(m0, m1)
        if ledger is not None:
            ledger.alloc(f"{label}.weights", w0.size + w1.size)
            ledger.alloc(f"{label}.softmax.scratch", 3 * w0.size)
            ledger.free(3 * w0.size)
        _free(ledger, m)
        out = a * w0
        out += b * w1
        _alloc(ledger, f"{label}.out", out)
        if ledger is not None:
            ledger.alloc(f"{label}.scratch", out.size)
            ledger.free(out.size)
            ledger.free(w0.size + w1.size)
        _free(ledger, a, b)
        return out


class FeedForward(Layer):
    """Expand with a 3x3 convolution, gate with exact GELU, contract to C."""

    def __init__(self, channels, expand, *, rng, dtype):
        hidden = max(1, int(round(channels * expand)))
        self.conv_in = Conv2d(channels, hidden, 3, 3, rng=rng, dtype=dtype)
        self.conv_out = Conv2d(hidden, channels, 1, 1, rng=rng, dtype=dtype)

    def forward(self, x, need_cache: bool = False):
        t, c_in = self.conv_in.forward(x)
        a, c_act = ops.gelu(t)
        out, c_out = self.conv_out.forward(a)
        return out, (c_in, c_act, c_out)

    def backward(self, cache, gy, grads: GradStore, prefix: str = ""):
        c_in, c_act, c_out = cache
        ga = self.conv_out.backward(c_out, gy, grads, prefix + "conv_out.")
        gt = ops.gelu_backward(c_act, ga)
        return self.conv_in.backward(c_in, gt, grads, prefix + "conv_in.")

    def infer(self, x, ledger=None, label: str = "ffn"):
        t = self.conv_in.infer(x, ledger, f"{label}.conv_in")
        a = ops.gelu_infer(t, ledger, f"{label}.gelu")
        _free(ledger, t)
        out = self.conv_out.infer(a, ledger, f"{label}.conv_out")
        _free(ledger, a)
        return out


class RestorationBlock(Layer):
    """One feature-extraction block: pre-normalized residual sub-stages of
    global (spectral), local (multi-scale), and feedforward mixing.

    With every learnable weight zeroed the block is the identity map.
    """

    def __init__(self, channels, cfg: BlockConfig, *, rng, dtype):
        def make_norm():
            return LayerNorm(channels, dtype=dtype) if cfg.norm == "layernorm" else Identity()

        self.norm_attn = make_norm()
        self.attn = FourierAttention(channels, cfg.freq_patch,
                                     group_order=cfg.conv_group_order, rng=rng, dtype=dtype)
        self.norm_local = make_norm()
        self.local = MultiScaleConv(channels, cfg, rng=rng, dtype=dtype)
        self.norm_ffn = make_norm()
        self.ffn = FeedForward(channels, cfg.ffn_expand, rng=rng, dtype=dtype)

    def forward(self, x, need_cache: bool = False):
        t1, cn1 = self.norm_attn.forward(x)
        a, c1 = self.attn.forward(t1)
        x1 = x + a
        t2, cn2 = self.norm_local.forward(x1)
        b, c2 = self.local.forward(t2)
        x2 = x1 + b
        t3, cn3 = self.norm_ffn.forward(x2)
        f, c3 = self.ffn.forward(t3)
        return x2 + f, (cn1, c1, cn2, c2, cn3, c3)

    def backward(self, cache, gy, grads: GradStore, prefix: str = ""):
        cn1, c1, cn2, c2, cn3, c3 = cache
        gt3 = self.ffn.backward(c3, gy, grads, prefix + "ffn.")
        gx2 = gy + self.norm_ffn.backward(cn3, gt3, grads, prefix + "norm_ffn.")
        gt2 = self.local.backward(c2, gx2, grads, prefix + "local.")
        gx1 = gx2 + self.norm_local.backward(cn2, gt2, grads, prefix + "norm_local.")
        gt1 = self.attn.backward(c1, gx1, grads, prefix + "attn.")
        return gx1 + self.norm_attn.backward(cn1, gt1, grads, prefix + "norm_attn.")

    def infer(self, x, ledger=None, label: str = "block"):
        t1 = self.norm_attn.infer(x, ledger, f"{label}.norm_attn")
        a = self.attn.infer(t1, ledger, f"{label}.attn")
        if t1 is not x:
            _free(ledger, t1)
        x1 = x + a
        _alloc(ledger, f"{label}.res1", x1)
        _free(ledger, a)
        t2 = self.norm_local.infer(x1, ledger, f"{label}.norm_local")
        b = self.local.infer(t2, ledger, f"{label}.local")
        if t2 is not x1:
            _free(ledger, t2)
        x2 = x1 + b
        _alloc(ledger, f"{label}.res2", x2)
        _free(ledger, b, x1)
        t3 = self.norm_ffn.infer(x2, ledger, f"{label}.norm_ffn")
        f = self.ffn.infer(t3, ledger, f"{label}.ffn")
        if t3 is not x2:
            _free(ledger, t3)
        out = x2 + f
        _alloc(ledger, f"{label}.out", out)
        _free(ledger, f, x2)
        return out
