"""The full restoration network and its checkpoint format.

A 4-level encoder-decoder: each encoder level stacks feature-extraction
blocks and halves the resolution while doubling channels (the latent level
sits at quarter or eighth resolution depending on config); the decoder
mirrors the stack, fusing same-level encoder features through gated skip
fusion.  A 3x3 head lifts RGB into feature space, a zero-initialized 3x3
tail predicts an RGB residual, and the output is input + residual, so a
freshly built network is the identity map.

Checkpoints are a little-endian binary stream ("D2NT", version 1) storing
every parameter as float32 under its registry name; loading validates the
magic, version, and the complete name/shape agreement with a freshly built
registry before touching any live parameter.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .blocks import RestorationBlock, SkipFusionGate
from .config import NetworkConfig
from .errors import (
    BadMagicError,
    BadVersionError,
    DataError,
    RegistryMismatchError,
    ShapeError,
    TruncatedError,
)
from .layers import Conv2d, Downsample, GradStore, Layer, Upsample
from .membench import MemoryLedger
from .tensors import crop, dtype_of, ensure_nchw, pad_reflect

CHECKPOINT_MAGIC = b"D2NT"
CHECKPOINT_VERSION = 1
_DTYPE_TAG_F32 = 0


def _floats(arr) -> int:
    return arr.size * (2 if np.iscomplexobj(arr) else 1)


class D2Net(Layer):
    """Residual encoder-decoder restorer over (N, 3, H, W) images."""

    def __init__(self, config: NetworkConfig, seed: int = 0, precision: str = "single"):
        config.validate()
        dtype = dtype_of(precision)
        rng = np.random.default_rng(seed)
        self._config = config
        self._dtype = dtype
        blk = config.block
        c1, c2, c3, c4 = config.level_channels
        d = config.level_depths

        def stack(channels, depth):
            return [RestorationBlock(channels, blk, rng=rng, dtype=dtype)
                    for _ in range(depth)]

        self.head = Conv2d(3, c1, 3, 3, rng=rng, dtype=dtype)
        self.enc1 = stack(c1, d[0])
        self.down1 = Downsample(c1, rng=rng, dtype=dtype)
        self.enc2 = stack(c2, d[1])
        self.down2 = Downsample(c2, rng=rng, dtype=dtype)
        self.enc3 = stack(c3, d[2])
        if config.latent_at == "eighth":
            self.down3 = Downsample(c3, rng=rng, dtype=dtype)
        self.latent = stack(c4, d[3])
        if config.latent_at == "eighth":
            self.up_latent = Upsample(c4, rng=rng, dtype=dtype)
        self.fuse3 = SkipFusionGate(c3, rng=rng, dtype=dtype)
        self.dec3 = stack(c3, config.decoder_depths[0])
        self.up2 = Upsample(c3, rng=rng, dtype=dtype)
        self.fuse2 = SkipFusionGate(c2, rng=rng, dtype=dtype)
        self.dec2 = stack(c2, config.decoder_depths[1])
        self.up1 = Upsample(c2, rng=rng, dtype=dtype)
        self.fuse1 = SkipFusionGate(c1, rng=rng, dtype=dtype)
        self.dec1 = stack(c1, config.decoder_depths[2])
        self.refine = stack(c1, config.refine_depth)
        self.tail = Conv2d(c1, 3, 3, 3, rng=rng, dtype=dtype, zero_init=True)

    @property
    def config(self) -> NetworkConfig:
        return self._config

    @property
    def dtype(self):
        return self._dtype

    def _check_input(self, x):
        x = ensure_nchw(x, "input")
        if x.shape[1] != 3:
            raise ShapeError(f"network input must have 3 channels, got {x.shape[1]}")
        if x.dtype != self._dtype:
            raise ShapeError(f"input dtype {x.dtype} does not match network {self._dtype}")
        m = self._config.pad_multiple
        if x.shape[2] % m or x.shape[3] % m:
            raise ShapeError(
                f"extents {x.shape[2:]} must be multiples of {m}; "
                "use forward_full_resolution for arbitrary sizes"
            )
        return x

    # -- training path ------------------------------------------------------
    def forward(self, x, need_cache: bool = False):
        x = self._check_input(x)
        eighth = self._config.latent_at == "eighth"

        def run(blocks, f):
            caches = []
            for b in blocks:
                f, c = b.forward(f)
                caches.append(c)
            return f, caches

        f, c_head = self.head.forward(x)
        f, c_enc1 = run(self.enc1, f)
        skip1 = f
        f, c_down1 = self.down1.forward(f)
        f, c_enc2 = run(self.enc2, f)
        skip2 = f
        f, c_down2 = self.down2.forward(f)
        f, c_enc3 = run(self.enc3, f)
        skip3 = f
        c_down3 = None
        if eighth:
            f, c_down3 = self.down3.forward(f)
        f, c_lat = run(self.latent, f)
        c_up_lat = None
        if eighth:
            f, c_up_lat = self.up_latent.forward(f)
        f, c_fuse3 = self.fuse3.forward(skip3, f)
        f, c_dec3 = run(self.dec3, f)
        f, c_up2 = self.up2.forward(f)
        f, c_fuse2 = self.fuse2.forward(skip2, f)
        f, c_dec2 = run(self.dec2, f)
        f, c_up1 = self.up1.forward(f)
        f, c_fuse1 = self.fuse1.forward(skip1, f)
        f, c_dec1 = run(self.dec1, f)
        f, c_ref = run(self.refine, f)
        r, c_tail = self.tail.forward(f)
        y = x + r
        cache = (c_head, c_enc1, c_down1, c_enc2, c_down2, c_enc3, c_down3,
                 c_lat, c_up_lat, c_fuse3, c_dec3, c_up2, c_fuse2, c_dec2,
                 c_up1, c_fuse1, c_dec1, c_ref, c_tail)
        return y, cache

    def backward(self, cache, gy, grads: GradStore, prefix: str = ""):
        (c_head, c_enc1, c_down1, c_enc2, c_down2, c_enc3, c_down3,
         c_lat, c_up_lat, c_fuse3, c_dec3, c_up2, c_fuse2, c_dec2,
         c_up1, c_fuse1, c_dec1, c_ref, c_tail) = cache
        eighth = self._config.latent_at == "eighth"

        def run_back(blocks, caches, name, g):
            for i in range(len(blocks) - 1, -1, -1):
                g = blocks[i].backward(caches[i], g, grads, f"{prefix}{name}.{i}.")
            return g

        g = self.tail.backward(c_tail, gy, grads, prefix + "tail.")
        g = run_back(self.refine, c_ref, "refine", g)
        g = run_back(self.dec1, c_dec1, "dec1", g)
        gs1, g = self.fuse1.backward(c_fuse1, g, grads, prefix + "fuse1.")
        g = self.up1.backward(c_up1, g, grads, prefix + "up1.")
        g = run_back(self.dec2, c_dec2, "dec2", g)
        gs2, g = self.fuse2.backward(c_fuse2, g, grads, prefix + "fuse2.")
        g = self.up2.backward(c_up2, g, grads, prefix + "up2.")
        g = run_back(self.dec3, c_dec3, "dec3", g)
        gs3, g = self.fuse3.backward(c_fuse3, g, grads, prefix + "fuse3.")
        if eighth:
            g = self.up_latent.backward(c_up_lat, g, grads, prefix + "up_latent.")
        g = run_back(self.latent, c_lat, "latent", g)
        if eighth:
            g = self.down3.backward(c_down3, g, grads, prefix + "down3.")
        g = g + gs3
        g = run_back(self.enc3, c_enc3, "enc3", g)
        g = self.down2.backward(c_down2, g, grads, prefix + "down2.") + gs2
        g = run_back(self.enc2, c_enc2, "enc2", g)
        g = self.down1.backward(c_down1, g, grads, prefix + "down1.") + gs1
        g = run_back(self.enc1, c_enc1, "enc1", g)
        gx = self.head.backward(c_head, g, grads, prefix + "head.")
        return gy + gx

    # -- inference path -----------------------------------------------------
    def infer(self, x, ledger=None, label: str = "net"):
        x = self._check_input(x)
        eighth = self._config.latent_at == "eighth"

        def free(arr):
            if ledger is not None:
                ledger.free(_floats(arr))

        def run(blocks, f, name, owns_input):
            for i, b in enumerate(blocks):
                f2 = b.infer(f, ledger, f"{label}.{name}.{i}")
                if owns_input:
                    free(f)
                f, owns_input = f2, True
            return f, owns_input

        f = self.head.infer(x, ledger, f"{label}.head")
        f, _ = run(self.enc1, f, "enc1", True)
        skip1 = f
        f = self.down1.infer(f, ledger, f"{label}.down1")
        f, _ = run(self.enc2, f, "enc2", True)
        skip2 = f
        f = self.down2.infer(f, ledger, f"{label}.down2")
        f, owns = run(self.enc3, f, "enc3", True)
        skip3 = f
        if eighth:
            f = self.down3.infer(f, ledger, f"{label}.down3")
            owns = True
        else:
            owns = False  # latent shares the skip tensor until the first block
        f, owns = run(self.latent, f, "latent", owns)
        if eighth:
            f2 = self.up_latent.infer(f, ledger, f"{label}.up_latent")
            if owns:
                free(f)
            f, owns = f2, True
        f2 = self.fuse3.infer(skip3, f, ledger, f"{label}.fuse3")
        if owns and f is not skip3:
            free(f)
        free(skip3)
        f = f2
        f, _ = run(self.dec3, f, "dec3", True)
        f2 = self.up2.infer(f, ledger, f"{label}.up2")
        free(f)
        f = f2
        f2 = self.fuse2.infer(skip2, f, ledger, f"{label}.fuse2")
        free(f)
        free(skip2)
        f = f2
        f, _ = run(self.dec2, f, "dec2", True)
        f2 = self.up1.infer(f, ledger, f"{label}.up1")
        free(f)
        f = f2
        f2 = self.fuse1.infer(skip1, f, ledger, f"{label}.fuse1")
        free(f)
        free(skip1)
        f = f2
        f, _ = run(self.dec1, f, "dec1", True)
        f, _ = run(self.refine, f, "refine", True)
        r = self.tail.infer(f, ledger, f"{label}.tail")
        free(f)
        y = x + r
        if ledger is not None:
            ledger.alloc(f"{label}.out", y.size)
        free(r)
        return y

    def forward_full_resolution(self, x, ledger: MemoryLedger | None = None):
        """Restore images of arbitrary extent: reflect-pad to the required
        multiple, run the network, crop back.  Pixel values must be in [0, 1].

        Runs under a memory ledger whose single-allocation budget is linear
        in H*W, so any quadratic buffer would be refused at runtime.
        """
        x = ensure_nchw(x, "input")
        if x.shape[1] != 3:
            raise ShapeError(f"expected RGB input, got C={x.shape[1]}")
        lo, hi = float(x.min()), float(x.max())
        if not np.isfinite([lo, hi]).all() or lo < 0.0 or hi > 1.0:
            raise DataError(
                f"pixel values must lie in [0, 1], got range [{lo}, {hi}]; "
                "normalize before calling"
            )
        n, _, h, w = x.shape
        m = self._config.pad_multiple
        pb, pr = (-h) % m, (-w) % m
        xp = pad_reflect(x, pb, pr)
        if ledger is None:
            ledger = MemoryLedger()
        if ledger.max_single is None:
            ledger.max_single = 8 * self._config.base_channels * xp.size // 3
        if xp is not x:
            ledger.alloc("input.pad", xp.size)
        y = self.infer(xp, ledger)
        out = crop(y, h, w)
        if out is not y:
            ledger.alloc("output.crop", out.size)
            ledger.free(y.size)
        if xp is not x:
            ledger.free(xp.size)
        return out


def count_params(net: Layer) -> int:
    """Exact total number of learnable scalar parameters."""
    return net.count_params()


# ---------------------------------------------------------------------------
# checkpoint serialization

def _write_u32(fh, value: int) -> None:
    fh.write(struct.pack("<I", value))


def save_checkpoint(net: Layer, sink) -> None:
    """Serialize all parameters as float32 in registry order."""
    own = isinstance(sink, (str, bytes)) or hasattr(sink, "__fspath__")
    fh = open(sink, "wb") if own else sink
    try:
        params = list(net.named_params())
        fh.write(CHECKPOINT_MAGIC)
        _write_u32(fh, CHECKPOINT_VERSION)
        _write_u32(fh, len(params))
        for name, tensor in params:
            raw = name.encode("utf-8")
            _write_u32(fh, len(raw))
            fh.write(raw)
            fh.write(struct.pack("<B", _DTYPE_TAG_F32))
            _write_u32(fh, tensor.ndim)
            for extent in tensor.shape:
                _write_u32(fh, extent)
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    finally:
        if own:
            fh.close()


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedError(f"checkpoint ended early: wanted {n} bytes, got {len(data)}")
    return data


def read_checkpoint(source) -> dict[str, np.ndarray]:
    """Parse a checkpoint stream into {name: float32 array}; no validation
    against any registry."""
    own = isinstance(source, (str, bytes)) or hasattr(source, "__fspath__")
    fh = open(source, "rb") if own else source
    try:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise BadMagicError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != CHECKPOINT_VERSION:
            raise BadVersionError(f"unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, name_len).decode("utf-8")
            (tag,) = struct.unpack("<B", _read_exact(fh, 1))
            if tag != _DTYPE_TAG_F32:
                raise BadVersionError(f"unknown dtype tag {tag} for tensor {name!r}")
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(ndim)
            )
            n_elem = int(np.prod(shape, dtype=np.int64)) if shape else 1
            payload = _read_exact(fh, 4 * n_elem)
            out[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        return out
    finally:
        if own:
            fh.close()


def load_checkpoint(source, net: Layer) -> None:
    """Load a checkpoint into ``net`` after validating full name/shape
    agreement with its registry.  All-or-nothing: on any error the network
    is untouched."""
    stored = read_checkpoint(source)
    expected = list(net.named_params())
    for name, tensor in expected:
        if name not in stored:
            raise RegistryMismatchError(f"checkpoint is missing parameter {name!r}")
        if stored[name].shape != tensor.shape:
            raise RegistryMismatchError(
                f"parameter {name!r}: checkpoint shape {stored[name].shape} "
                f"!= expected {tensor.shape}"
            )
    extra = set(stored) - {name for name, _ in expected}
    if extra:
        raise RegistryMismatchError(
            f"checkpoint has {len(extra)} unknown parameter(s), first: {sorted(extra)[0]!r}"
        )
    dtype = getattr(net, "dtype", np.float32)
    for name, _ in expected:
        net.set_param(name, stored[name].astype(dtype))
