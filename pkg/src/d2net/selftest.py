"""Fast internal consistency checks behind ``d2net selftest``.

Closed-form and round-trip cases only (a few seconds); the full oracle suite
lives in the test tree.
"""

from __future__ import annotations

import io
import math

import numpy as np

from . import ops, spectral
from .blocks import FourierAttention, RestorationBlock
from .config import BlockConfig, toy_config
from .metrics import psnr, ssim
from .network import D2Net, load_checkpoint, save_checkpoint
from .ppm import read_ppm, write_ppm


def run(seed: int = 0, log=print) -> int:
    rng = np.random.default_rng(seed)
    failures = 0

    def check(name: str, ok: bool, detail: str = ""):
        nonlocal failures
        if ok:
            log(f"PASS {name}")
        else:
            failures += 1
            log(f"FAIL {name}: {detail}")

    x = rng.standard_normal((40, 8, 8))
    ref = spectral.dft2_reference(x)
    fast = spectral.dft2(x)
    err = np.max(np.abs(ref - fast)) / np.max(np.abs(ref))
    check("dft2 fast path vs direct sum", err < 1e-12, f"rel err {err:.2e}")

    back = spectral.idft2(fast, imag_tol=1e-9 * float(np.max(np.abs(x))))
    err = np.max(np.abs(back - x)) / np.max(np.abs(x))
    check("dft2/idft2 round trip", err < 1e-12, f"rel err {err:.2e}")

    pe = abs(np.sum(x * x) - np.sum(np.abs(fast) ** 2)) / np.sum(x * x)
    check("Parseval under unitary scaling", pe < 1e-10, f"rel err {pe:.2e}")

    w = np.zeros((3, 3, 3))
    w[:, 1, 1] = 1.0
    img = rng.standard_normal((1, 3, 9, 9))
    out = ops.conv2d_infer(img, w, None, depthwise=True)
    check("delta-kernel depthwise conv is identity", np.array_equal(out, img))

    attn = FourierAttention(2, 8, rng=rng, dtype=np.float64)
    k = rng.standard_normal((1, 2, 8, 8))
    impulse = np.zeros((1, 2, 8, 8))
    impulse[:, :, 0, 0] = 8.0  # sqrt(8*8): convolution identity under unitary scaling
    m, _ = attn.attention_map(impulse, k)
    err = np.max(np.abs(m - k))
    check("impulse query reproduces the key map", err < 1e-12, f"abs err {err:.2e}")

    cfg = BlockConfig(freq_patch=4, branch_ratio=0.25, square_kernel=3,
                      band_kernel=5, ffn_expand=2.0)
    block = RestorationBlock(4, cfg, rng=rng, dtype=np.float64)
    for name, p in block.named_params():
        p[...] = 0.0
    xb = rng.standard_normal((1, 4, 8, 8))
    yb, _ = block.forward(xb)
    check("zero-weight block is the identity", np.array_equal(yb, xb))

    net = D2Net(toy_config(), seed=seed, precision="single")
    buf = io.BytesIO()
    save_checkpoint(net, buf)
    net2 = D2Net(toy_config(), seed=seed + 1, precision="single")
    buf.seek(0)
    load_checkpoint(buf, net2)
    same = all(np.array_equal(a, b) for (_, a), (_, b)
               in zip(net.named_params(), net2.named_params()))
    check("checkpoint round trip is bitwise", same)

    img8 = rng.integers(0, 256, (3, 7, 11)).astype(np.uint8)
    buf = io.BytesIO()
    write_ppm(buf, img8)
    buf.seek(0)
    check("ppm round trip is bitwise", np.array_equal(read_ppm(buf), img8))

    a = np.full((1, 3, 16, 16), 0.25)
    b = a + 1.0 / 255.0
    p255 = psnr(a * 255, b * 255, peak=255.0)
    check("psnr closed form (offset 1 at peak 255)",
          abs(p255 - 20 * math.log10(255)) < 1e-6, f"got {p255}")
    check("psnr identical sentinel", math.isinf(psnr(a, a)))
    noise = rng.uniform(0, 1, (1, 3, 16, 16))
    check("ssim(a, a) == 1 exactly", ssim(noise, noise) == 1.0)

    return failures
