"""Desk-scale training: L1 objective, Adam with cosine annealing, seeded
synthetic degradations (low light, haze, blur), and a reproducible loop.

The published recipe (512x512 crops, batch 16, 300k iterations on licensed
UHD datasets) is not a desktop target; the defaults here train on 64x64
crops of a procedurally generated clean corpus for a couple of thousand
steps, with every knob reachable for larger runs.  Everything is
deterministic given the seeds: same seed, same checkpoint, bit for bit.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .config import NetworkConfig
from .errors import ConfigError, DataError, NonFiniteError, ShapeError, TrainingDivergedError
from .layers import GradStore
from .metrics import psnr
from .network import D2Net

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8
DEFAULT_BASE_LR = 2e-4


# ---------------------------------------------------------------------------
# objective

def l1_loss(pred: np.ndarray, target: np.ndarray):
    """Mean absolute error and its gradient w.r.t. ``pred``.

    The subgradient at exact ties is 0 (np.sign convention).
    """
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    value = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.dtype.type(diff.size)
    return value, grad


# ---------------------------------------------------------------------------
# optimizer

def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """base * 0.5 * (1 + cos(pi * t / T)); reaches exactly 0 at t == T."""
    t = min(max(step, 0), total_steps)
    return base_lr * 0.5 * (1.0 + float(np.cos(np.pi * t / total_steps)))


@dataclass
class AdamState:
    base_lr: float
    total_steps: int
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPS
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_adam(params: dict[str, np.ndarray], base_lr: float = DEFAULT_BASE_LR,
              total_steps: int = 2000) -> AdamState:
    state = AdamState(base_lr=base_lr, total_steps=total_steps)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p)
        state.v[name] = np.zeros_like(p)
    return state


def adam_step(params: dict[str, np.ndarray], grads, state: AdamState) -> float:
    """One bias-corrected Adam update, in place; returns the lr used.

    Aborts (before touching any parameter) if any gradient is non-finite.
    """
    for name in params:
        g = grads.get(name)
        if g is None:
            raise KeyError(f"missing gradient for parameter {name!r}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name!r}; aborting the step")
    state.t += 1
    lr = cosine_lr(state.base_lr, state.t, state.total_steps)
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        mhat = m / c1
        vhat = v / c2
        p -= p.dtype.type(lr) * mhat / (np.sqrt(vhat) + p.dtype.type(state.eps))
    return lr


# ---------------------------------------------------------------------------
# synthetic degradations

_KINDS = ("lowlight", "haze", "blur")
_BLUR_KERNELS = ("box", "motion-h", "motion-v")


@dataclass(frozen=True)
class DegradationSpec:
    """Parameters of one synthetic corruption, deterministic given ``seed``.

    lowlight: out = clip(in**gamma * scale + N(0, read_noise))
    haze:     out = clip(in * transmission + airlight * (1 - transmission))
    blur:     out = clip(in (*) normalized box / motion-line kernel)
    """

    kind: str = "lowlight"
    gamma: float = 2.5
    scale: float = 0.35
    read_noise: float = 0.01
    transmission: float = 0.5
    airlight: float = 0.9
    blur_kernel: str = "box"
    blur_length: int = 5
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in _KINDS:
            raise ConfigError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        if not 1.0 <= self.gamma <= 5.0:
            raise ConfigError(f"gamma must lie in [1, 5], got {self.gamma}")
        if not 0.1 <= self.scale <= 1.0:
            raise ConfigError(f"scale must lie in [0.1, 1], got {self.scale}")
        if not 0.0 <= self.read_noise <= 0.02:
            raise ConfigError(f"read_noise must lie in [0, 0.02], got {self.read_noise}")
        if not 0.3 <= self.transmission <= 0.9:
            raise ConfigError(f"transmission must lie in [0.3, 0.9], got {self.transmission}")
        if not 0.7 <= self.airlight <= 1.0:
            raise ConfigError(f"airlight must lie in [0.7, 1], got {self.airlight}")
        if self.blur_kernel not in _BLUR_KERNELS:
            raise ConfigError(f"blur_kernel must be one of {_BLUR_KERNELS}")
        if not (3 <= self.blur_length <= 9 and self.blur_length % 2 == 1):
            raise ConfigError(
                f"blur_length must be odd and in [3, 9], got {self.blur_length}"
            )


def _blur_weights(spec: DegradationSpec, channels: int, dtype) -> np.ndarray:
    k = spec.blur_length
    if spec.blur_kernel == "box":
        kern = np.full((k, k), 1.0 / (k * k))
    elif spec.blur_kernel == "motion-h":
        kern = np.full((1, k), 1.0 / k)
    else:
        kern = np.full((k, 1), 1.0 / k)
    return np.broadcast_to(kern, (channels,) + kern.shape).astype(dtype)


def apply_degradation(spec: DegradationSpec, clean: np.ndarray,
                      rng: np.random.Generator | None = None) -> np.ndarray:
    """Corrupt a clean (N, C, H, W) batch in [0, 1]; output clamped to [0, 1]."""
    spec.validate()
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    dt = clean.dtype.type
    if spec.kind == "lowlight":
        out = np.power(clean, dt(spec.gamma)) * dt(spec.scale)
        if spec.read_noise > 0:
            out = out + rng.normal(0.0, spec.read_noise, clean.shape).astype(clean.dtype)
    elif spec.kind == "haze":
        t, a = dt(spec.transmission), dt(spec.airlight)
        out = clean * t + a * (dt(1.0) - t)
    else:
        w = _blur_weights(spec, clean.shape[1], clean.dtype)
        out = ops.conv2d_infer(clean, w, None, depthwise=True)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# clean corpus and batching

def make_toy_images(count: int, size: int, seed: int = 0,
                    dtype=np.float32) -> np.ndarray:
    """Procedural clean images (count, 3, size, size): smooth gradients with
    hard-edged shapes and lines, so blur costs structure and dark scenes
    retain learnable content."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size),
                         indexing="ij")
    images = np.empty((count, 3, size, size), dtype=np.float64)
    for i in range(count):
        img = np.empty((3, size, size))
        for ch in range(3):
            a, b, c = rng.uniform(-0.5, 0.5, 3)
            img[ch] = 0.55 + a * (yy - 0.5) + b * (xx - 0.5) + c * (yy - 0.5) * (xx - 0.5)
        for _ in range(rng.integers(6, 12)):
            color = rng.uniform(0.05, 0.95, 3)
            if rng.random() < 0.5:  # rectangle
                y0, x0 = rng.integers(0, size - 4, 2)
                hgt = int(rng.integers(3, max(4, size // 2)))
                wdt = int(rng.integers(3, max(4, size // 2)))
                img[:, y0:y0 + hgt, x0:x0 + wdt] = color[:, None, None]
            else:  # ellipse
                cy, cx = rng.uniform(0.15, 0.85, 2) * size
                ry, rx = rng.uniform(0.05, 0.3, 2) * size
                mask = ((yy * size - cy) / ry) ** 2 + ((xx * size - cx) / rx) ** 2 <= 1.0
                img[:, mask] = color[:, None]
        for _ in range(rng.integers(2, 5)):  # thin bright/dark lines
            pos = int(rng.integers(1, size - 2))
            val = rng.uniform(0.0, 1.0, 3)
            if rng.random() < 0.5:
                img[:, pos:pos + 2, :] = val[:, None, None]
            else:
                img[:, :, pos:pos + 2] = val[:, None, None]
        images[i] = np.clip(img, 0.0, 1.0)
    return images.astype(dtype)


def make_batch(images: np.ndarray, spec: DegradationSpec, crop: int, batch: int,
               seed: int, dtype=np.float32):
    """Sample a training batch: seeded crops and flips applied identically to
    input and target, degradation applied to the input side only."""
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[1] != 3:
        raise DataError(f"expected (M, 3, H, W) clean images, got {images.shape}")
    m, _, h, w = images.shape
    if h < crop or w < crop:
        raise DataError(f"images of size ({h},{w}) are smaller than crop {crop}")
    rng = np.random.default_rng(seed)
    clean = np.empty((batch, 3, crop, crop), dtype=dtype)
    for i in range(batch):
        src = images[rng.integers(0, m)]
        y0 = int(rng.integers(0, h - crop + 1))
        x0 = int(rng.integers(0, w - crop + 1))
        tile = src[:, y0:y0 + crop, x0:x0 + crop]
        if rng.random() < 0.5:
            tile = tile[:, ::-1, :]
        if rng.random() < 0.5:
            tile = tile[:, :, ::-1]
        clean[i] = tile
    degraded = apply_degradation(spec, clean, rng)
    return degraded.astype(dtype), clean


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TraceRow:
    step: int
    lr: float
    loss: float
    psnr: float | None = None
    ssim: float | None = None


@dataclass
class TrainResult:
    net: D2Net
    trace: list[TraceRow]
    psnr_degraded: float
    psnr_restored: float

    @property
    def psnr_gain(self) -> float:
        return self.psnr_restored - self.psnr_degraded

    def smoothed_loss(self, step: int, window: int = 100) -> float:
        lo = max(0, step - window)
        vals = [r.loss for r in self.trace if lo < r.step <= step]
        return float(np.mean(vals))


def trace_to_csv(rows: list[TraceRow]) -> str:
    buf = io.StringIO()
    buf.write("step,lr,loss,psnr,ssim\n")
    for r in rows:
        p = "" if r.psnr is None else f"{r.psnr:.6f}"
        s = "" if r.ssim is None else f"{r.ssim:.6f}"
        buf.write(f"{r.step},{r.lr:.8e},{r.loss:.8e},{p},{s}\n")
    return buf.getvalue()


def _evaluate(net: D2Net, degraded: np.ndarray, clean: np.ndarray) -> tuple[float, float]:
    from .metrics import ssim as _ssim  # local import keeps module load light
    restored = np.clip(net.forward_full_resolution(degraded), 0.0, 1.0)
    return psnr(clean, restored), _ssim(clean, restored)


def train_toy(config: NetworkConfig, spec: DegradationSpec, iters: int, seed: int = 0,
              *, images: np.ndarray | None = None, batch: int = 4, crop: int = 64,
              base_lr: float = DEFAULT_BASE_LR, eval_every: int = 500,
              holdout: int = 2, log=None) -> TrainResult:
    """Optimize a fresh network against one synthetic task.

    Fully reproducible from its seeds; raises TrainingDivergedError with the
    step index if the loss goes non-finite.
    """
    spec.validate()
    if images is None:
        images = make_toy_images(16, 2 * crop, seed=seed + 77)
    images = np.asarray(images, dtype=np.float32)
    if len(images) < 8:
        raise DataError(f"need at least 8 clean images, got {len(images)}")
    train_set = images[:-holdout] if holdout else images
    eval_clean = images[-holdout:] if holdout else images[:2]

    net = D2Net(config, seed=seed, precision="single")
    params = net.params()
    state = init_adam(params, base_lr=base_lr, total_steps=iters)

    eval_degraded = apply_degradation(spec, eval_clean)
    psnr_degraded = psnr(eval_clean, eval_degraded)

    trace: list[TraceRow] = []
    for step in range(1, iters + 1):
        degraded, clean = make_batch(train_set, spec, crop, batch,
                                     seed=seed * 1_000_003 + step)
        pred, cache = net.forward(degraded)
        loss, gl = l1_loss(pred, clean)
        if not np.isfinite(loss):
            raise TrainingDivergedError(step)
        grads = GradStore()
        net.backward(cache, gl, grads, "")
        lr = adam_step(params, grads, state)
        row = TraceRow(step=step, lr=lr, loss=loss)
        if eval_every and (step % eval_every == 0 or step == iters):
            row.psnr, row.ssim = _evaluate(net, eval_degraded, eval_clean)
        trace.append(row)
        if log is not None and (step % max(1, eval_every // 5) == 0):
            log(f"step {step}/{iters} lr={lr:.3e} loss={loss:.5f}"
                + (f" psnr={row.psnr:.2f}" if row.psnr is not None else ""))

    if iters:
        psnr_restored, _ = _evaluate(net, eval_degraded, eval_clean)
    else:
        psnr_restored = psnr_degraded
    return TrainResult(net=net, trace=trace, psnr_degraded=psnr_degraded,
                       psnr_restored=psnr_restored)
