"""Learnable layers over the functional primitives in ``ops``.

A ``Layer`` discovers its parameters and sub-layers by walking its public
attributes in creation order, which gives every parameter a stable,
path-like name ("enc1.0.ffn.conv_in.weight").  That ordered registry is what
the optimizer, the checkpoint format, and the gradient checker all iterate.

Forward methods return ``(out, cache)``; backward methods consume the cache,
accumulate parameter gradients into a ``GradStore`` under a caller-supplied
prefix, and return the input gradient.  Underscore attributes are private
buffers, never parameters.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError


class GradStore:
    """Flat accumulator of parameter gradients keyed by registry name."""

    def __init__(self):
        self._g: dict[str, np.ndarray] = {}

    def add(self, name: str, g: np.ndarray) -> None:
        if name in self._g:
            self._g[name] = self._g[name] + g
        else:
            self._g[name] = g

    def __getitem__(self, name: str) -> np.ndarray:
        return self._g[name]

    def __contains__(self, name: str) -> bool:
        return name in self._g

    def get(self, name: str, default=None):
        return self._g.get(name, default)

    def asdict(self) -> dict[str, np.ndarray]:
        return dict(self._g)


class Layer:
    """Base class: parameter registry plus forward/backward contract."""

    def named_params(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, value in self.__dict__.items():
            if key.startswith("_"):
                continue
            if isinstance(value, np.ndarray):
                yield prefix + key, value
            elif isinstance(value, Layer):
                yield from value.named_params(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Layer):
                        yield from item.named_params(f"{prefix}{key}.{i}.")

    def params(self) -> dict[str, np.ndarray]:
        return dict(self.named_params())

    def count_params(self) -> int:
        return sum(int(v.size) for _, v in self.named_params())

    def set_param(self, name: str, value: np.ndarray) -> None:
        """Rebind one parameter by registry name (checkpoint loading)."""
        obj = self
        parts = name.split(".")
        for part in parts[:-1]:
            obj = obj[int(part)] if part.isdigit() else getattr(obj, part)
        leaf = parts[-1]
        current = getattr(obj, leaf)
        if not isinstance(current, np.ndarray):
            raise KeyError(f"{name} is not a parameter")
        if current.shape != value.shape:
            raise ShapeError(f"{name}: shape {value.shape} != expected {current.shape}")
        setattr(obj, leaf, np.ascontiguousarray(value))

    def forward(self, x, need_cache: bool = False):
        raise NotImplementedError

    def backward(self, cache, gy, grads: GradStore, prefix: str = ""):
        raise NotImplementedError

    def infer(self, x, ledger=None, label: str = ""):
        """Cache-free forward; default falls back on ``forward``."""
        out, _ = self.forward(x)
        return out


def _uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = float(np.sqrt(1.0 / max(fan_in, 1)))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Layer):
    """Stride-1, same-padded (reflect) convolution; full or depthwise.

    Weights are fan-in-scaled uniform, biases zero; ``zero_init`` zeroes the
    weights too (used by the network tail so a fresh model is the identity).
    """

    def __init__(self, in_ch, out_ch, kh, kw, *, depthwise=False, rng, dtype,
                 zero_init=False):
        if kh % 2 == 0 or kw % 2 == 0:
            raise ConfigError(f"kernel extents must be odd, got ({kh},{kw})")
        if depthwise and out_ch != in_ch:
            raise ConfigError("depthwise convolution requires out_ch == in_ch")
        self._depthwise = depthwise
        shape = (in_ch, kh, kw) if depthwise else (out_ch, in_ch, kh, kw)
        fan_in = kh * kw if depthwise else in_ch * kh * kw
        if zero_init:
            self.weight = np.zeros(shape, dtype=dtype)
        else:
            self.weight = _uniform_init(rng, shape, fan_in, dtype)
        self.bias = np.zeros(out_ch, dtype=dtype)

    def forward(self, x, need_cache: bool = False):
        return ops.conv2d(x, self.weight, self.bias, depthwise=self._depthwise)

    def backward(self, cache, gy, grads: GradStore, prefix: str = ""):
        gx, gw, gb = ops.conv2d_backward(cache, gy)
        grads.add(prefix + "weight", gw)
        grads.add(prefix + "bias", gb)
        return gx

    def infer(self, x, ledger=None, label: str = "conv"):
        return ops.conv2d_infer(x, self.weight, self.bias,
                                depthwise=self._depthwise, ledger=ledger, label=label)


class LayerNorm(Layer):
    """Per-position channel normalization with learnable gain/offset."""

    def __init__(self, channels, *, dtype):
        self.gain = np.ones(channels, dtype=dtype)
        self.offset = np.zeros(channels, dtype=dtype)

    def forward(self, x, need_cache: bool = False):
        return ops.layer_norm(x, self.gain, self.offset)

    def backward(self, cache, gy, grads: GradStore, prefix: str = ""):
        gx, ggain, goffset = ops.layer_norm_backward(cache, gy)
        grads.add(prefix + "gain", ggain)
        grads.add(prefix + "offset", goffset)
        return gx

    def infer(self, x, ledger=None, label: str = "norm"):
        return ops.layer_norm_infer(x, self.gain, self.offset, ledger=ledger, label=label)


class Identity(Layer):
    def forward(self, x, need_cache: bool = False):
        return x, None

    def backward(self, cache, gy, grads: GradStore, prefix: str = ""):
        return gy

    def infer(self, x, ledger=None, label: str = ""):
        return x


class ConvGroup(Layer):
    """Two-stage projection producing one of Q/K/V.

    ``order="pointwise-then-dwconv"`` (default config) is a 1x1 channel mix
    followed by a 3x3 depthwise spatial mix; ``order="literal"`` is a 1x1
    depthwise scaling followed by a full 3x3 convolution.
    """

    def __init__(self, channels, order, *, rng, dtype):
        if order == "literal":
            self.first = Conv2d(channels, channels, 1, 1, depthwise=True, rng=rng, dtype=dtype)
            self.second = Conv2d(channels, channels, 3, 3, rng=rng, dtype=dtype)
        elif order == "pointwise-then-dwconv":
            self.first = Conv2d(channels, channels, 1, 1, rng=rng, dtype=dtype)
            self.second = Conv2d(channels, channels, 3, 3, depthwise=True, rng=rng, dtype=dtype)
        else:
            raise ConfigError(f"unknown conv group order {order!r}")

    def forward(self, x, need_cache: bool = False):
        t, c1 = self.first.forward(x)
        y, c2 = self.second.forward(t)
        return y, (c1, c2)

    def backward(self, cache, gy, grads: GradStore, prefix: str = ""):
        c1, c2 = cache
        gt = self.second.backward(c2, gy, grads, prefix + "second.")
        return self.first.backward(c1, gt, grads, prefix + "first.")

    def infer(self, x, ledger=None, label: str = "group"):
        t = self.first.infer(x, ledger, f"{label}.first")
        y = self.second.infer(t, ledger, f"{label}.second")
        if ledger is not None:
            ledger.free(t.size)
        return y


class Downsample(Layer):
    """Halve the resolution, double the channels: pixel unshuffle + 1x1 conv."""

    def __init__(self, channels, *, rng, dtype):
        self.proj = Conv2d(4 * channels, 2 * channels, 1, 1, rng=rng, dtype=dtype)

    def forward(self, x, need_cache: bool = False):
        s = ops.space_to_depth(x)
        y, c = self.proj.forward(s)
        return y, c

    def backward(self, cache, gy, grads: GradStore, prefix: str = ""):
        gs = self.proj.backward(cache, gy, grads, prefix + "proj.")
        return ops.depth_to_space(gs)

    def infer(self, x, ledger=None, label: str = "down"):
        s = ops.space_to_depth(x)
        if ledger is not None:
            ledger.alloc(f"{label}.unshuffle", s.size)
        y = self.proj.infer(s, ledger, f"{label}.proj")
        if ledger is not None:
            ledger.free(s.size)
        return y


class Upsample(Layer):
    """Double the resolution, halve the channels: 1x1 conv + pixel shuffle."""

    def __init__(self, channels, *, rng, dtype):
        self.proj = Conv2d(channels, 2 * channels, 1, 1, rng=rng, dtype=dtype)

    def forward(self, x, need_cache: bool = False):
        t, c = self.proj.forward(x)
        return ops.depth_to_space(t), c

    def backward(self, cache, gy, grads: GradStore, prefix: str = ""):
        gt = ops.space_to_depth(gy)
        return self.proj.backward(cache, gt, grads, prefix + "proj.")

    def infer(self, x, ledger=None, label: str = "up"):
        t = self.proj.infer(x, ledger, f"{label}.proj")
        y = ops.depth_to_space(t)
        if ledger is not None:
            ledger.alloc(f"{label}.shuffle", y.size)
            ledger.free(t.size)
        return y
