"""Activation-memory accounting and the attention-complexity benchmark.

Memory is measured by an explicit ledger of transient array elements
(floats; a complex element counts as two), not by OS-level probes, so the
numbers are exact, deterministic, and independent of scalar precision.

The benchmark contrasts the spectral attention block, whose peak transient
count grows linearly in H*W, against a reference spatial self-attention
that materializes the full position-by-position map and therefore grows
quadratically.  The reference refuses inputs beyond a small guard size;
that refusal is the point.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .blocks import FourierAttention
from .errors import MemoryGuardError, ShapeError
from .layers import Conv2d, Layer

NAIVE_GUARD_PIXELS = 4096


class MemoryLedger:
    """Scoped tally of live transient floats with peak tracking.

    ``alloc``/``free`` bracket the lifetime of each array the instrumented
    code materializes; ``scope`` prefixes labels for nested blocks.  With
    ``max_single`` set, any one allocation above that many floats raises,
    which is how quadratic buffers are ruled out at runtime.
    """

    def __init__(self, max_single: int | None = None):
        self.records: list[tuple[str, int]] = []
        self.live = 0
        self.peak = 0
        self.max_single = max_single
        self._prefix: list[str] = []

    def alloc(self, label: str, nfloats: int) -> None:
        nfloats = int(nfloats)
        if self.max_single is not None and nfloats > self.max_single:
            raise MemoryGuardError(
                f"allocation '{label}' of {nfloats} floats exceeds the "
                f"linear-memory budget of {self.max_single}"
            )
        full = ".".join(self._prefix + [label]) if self._prefix else label
        self.records.append((full, nfloats))
        self.live += nfloats
        if self.live > self.peak:
            self.peak = self.live

    def free(self, nfloats: int) -> None:
        self.live -= int(nfloats)

    def scope(self, name: str):
        ledger = self

        class _Scope:
            def __enter__(self):
                ledger._prefix.append(name)

            def __exit__(self, *exc):
                ledger._prefix.pop()

        return _Scope()


def _nfloats(arr: np.ndarray) -> int:
    return arr.size * (2 if np.iscomplexobj(arr) else 1)


class NaiveSpatialAttention(Layer):
    """Reference softmax(Q K^T / sqrt(C)) V over flattened spatial positions.

    Exists solely as the quadratic-memory baseline; guarded to H*W <= 4096
    because the attention map alone holds (H*W)^2 entries.
    """

    def __init__(self, channels, *, rng, dtype=np.float64):
        self.to_query = Conv2d(channels, channels, 1, 1, rng=rng, dtype=dtype)
        self.to_key = Conv2d(channels, channels, 1, 1, rng=rng, dtype=dtype)
        self.to_value = Conv2d(channels, channels, 1, 1, rng=rng, dtype=dtype)

    def infer(self, x, ledger=None, label: str = "naive"):
        n, c, h, w = x.shape
        hw = h * w
        if hw > NAIVE_GUARD_PIXELS:
            raise MemoryGuardError(
                f"naive spatial attention refused: H*W={hw} exceeds {NAIVE_GUARD_PIXELS}; "
                f"its attention map alone would hold {hw}*{hw} elements"
            )
        q = self.to_query.infer(x, ledger, f"{label}.q").reshape(n, c, hw)
        k = self.to_key.infer(x, ledger, f"{label}.k").reshape(n, c, hw)
        v = self.to_value.infer(x, ledger, f"{label}.v").reshape(n, c, hw)
        scores = np.einsum("ncp,ncq->npq", q, k) / np.sqrt(c)
        if ledger is not None:
            ledger.alloc(f"{label}.scores", _nfloats(scores))
        m = scores.max(axis=2, keepdims=True)
        attn = np.exp(scores - m)
        if ledger is not None:
            ledger.alloc(f"{label}.attn", _nfloats(attn) + m.size)
            ledger.free(_nfloats(scores))
        attn /= attn.sum(axis=2, keepdims=True)
        out = np.einsum("npq,ncq->ncp", attn, v)
        if ledger is not None:
            ledger.alloc(f"{label}.out", _nfloats(out))
            ledger.free(_nfloats(attn) + m.size)
            ledger.free(_nfloats(q) + _nfloats(k) + _nfloats(v))
        return out.reshape(n, c, h, w)

    def forward(self, x, need_cache: bool = False):
        return self.infer(x), None


@dataclass
class ScalingRow:
    label: str
    h: int
    w: int
    peak_floats: int
    refused: bool


@dataclass
class ScalingReport:
    rows: list[ScalingRow]
    spectral_exponent: float
    naive_exponent: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("label,H,W,peak_floats,refused\n")
        for r in self.rows:
            buf.write(f"{r.label},{r.h},{r.w},{r.peak_floats},{int(r.refused)}\n")
        return buf.getvalue()


def _fit_exponent(sizes: list[int], peaks: list[int]) -> float:
    logs = np.log(np.asarray(sizes, dtype=np.float64))
    logp = np.log(np.asarray(peaks, dtype=np.float64))
    slope, _ = np.polyfit(logs, logp, 1)
    return float(slope)


def measure_spectral_peak(h: int, w: int, *, channels: int = 1, freq_patch: int = 8,
                          seed: int = 0) -> int:
    rng = np.random.default_rng(seed)
    block = FourierAttention(channels, freq_patch, rng=rng, dtype=np.float64)
    x = rng.standard_normal((1, channels, h, w))
    ledger = MemoryLedger()
    block.infer(x, ledger)
    return ledger.peak


def measure_naive_peak(h: int, w: int, *, channels: int = 1, seed: int = 0) -> int:
    rng = np.random.default_rng(seed)
    block = NaiveSpatialAttention(channels, rng=rng)
    x = rng.standard_normal((1, channels, h, w))
    ledger = MemoryLedger()
    block.infer(x, ledger)
    return ledger.peak


def memory_scaling_report(sizes: list[tuple[int, int]], *, channels: int = 1,
                          freq_patch: int = 8, seed: int = 0) -> ScalingReport:
    """Measure peak transient floats for both attention routes at each size
    and fit log-log exponents in H*W.

    The spectral route should come out with exponent ~1, the naive route
    with ~2 where it runs at all; oversized naive probes are reported as
    refused rather than measured.
    """
    rows: list[ScalingRow] = []
    spec_sizes, spec_peaks = [], []
    naive_sizes, naive_peaks = [], []
    for h, w in sizes:
        if h % freq_patch or w % freq_patch:
            raise ShapeError(f"bench size ({h},{w}) must be a multiple of {freq_patch}")
        peak = measure_spectral_peak(h, w, channels=channels, freq_patch=freq_patch, seed=seed)
        rows.append(ScalingRow("spectral", h, w, peak, False))
        spec_sizes.append(h * w)
        spec_peaks.append(peak)
        try:
            npeak = measure_naive_peak(h, w, channels=channels, seed=seed)
            rows.append(ScalingRow("naive", h, w, npeak, False))
            naive_sizes.append(h * w)
            naive_peaks.append(npeak)
        except MemoryGuardError:
            rows.append(ScalingRow("naive", h, w, 0, True))
    spec_exp = _fit_exponent(spec_sizes, spec_peaks) if len(spec_peaks) >= 2 else float("nan")
    naive_exp = _fit_exponent(naive_sizes, naive_peaks) if len(naive_peaks) >= 2 else float("nan")
    return ScalingReport(rows, spec_exp, naive_exp)
