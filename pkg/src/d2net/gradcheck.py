"""Central-finite-difference certification of every hand-written backward.

Checks run in double precision at desk scale.  For each case we build a
scalar loss (a fixed random projection of the forward output, or the L1
training loss for the full network), compute analytic gradients through the
hand-written backwards, and compare coordinate-by-coordinate against
(f(x + h e_i) - f(x - h e_i)) / 2h on all coordinates or a seeded sample.

Reports carry max/mean relative error and the worst coordinate, and render
as machine-readable rows for the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .blocks import (
    FeedForward,
    FourierAttention,
    MultiScaleConv,
    RestorationBlock,
    SkipFusionGate,
)
from .config import BlockConfig, NetworkConfig, toy_config
from .layers import Conv2d, Downsample, GradStore, LayerNorm, Upsample
from .network import D2Net
from .training import l1_loss

DEFAULT_STEP = 1e-4
TOL_OPS = 1e-6
TOL_BLOCKS = 1e-4


@dataclass
class CheckReport:
    name: str
    max_rel_err: float
    mean_rel_err: float
    worst_coord: tuple
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def row(self) -> str:
        verdict = "ok" if self.passed else "FAIL"
        return (f"{self.name},{self.max_rel_err:.3e},{self.mean_rel_err:.3e},"
                f"{self.n_checked},{verdict}")


def finite_diff_check(loss_fn, target, analytic, *, step=DEFAULT_STEP,
                      rel_tol=TOL_BLOCKS, max_coords=200, rng=None,
                      name="check") -> CheckReport:
    """Compare ``analytic`` against central differences of ``loss_fn``.

    ``loss_fn`` is a zero-argument callable that reads the current contents
    of ``target`` (a float64 array perturbed in place and always restored).
    All coordinates are checked when the tensor is small; otherwise a seeded
    random subset of ``max_coords`` coordinates.
    """
    if target.dtype != np.float64:
        raise TypeError(f"finite differences need float64 targets, got {target.dtype}")
    flat = target.reshape(-1)
    size = flat.size
    if size <= max_coords:
        coords = np.arange(size)
    else:
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(size, size=max_coords, replace=False)
    ga = analytic.reshape(-1)
    max_err, err_sum, worst = 0.0, 0.0, 0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + step
        f_plus = loss_fn()
        flat[i] = orig - step
        f_minus = loss_fn()
        flat[i] = orig
        fd = (f_plus - f_minus) / (2.0 * step)
        err = abs(ga[i] - fd) / max(abs(ga[i]), abs(fd), 1e-8)
        err_sum += err
        if err > max_err:
            max_err, worst = err, int(i)
    return CheckReport(
        name=name,
        max_rel_err=max_err,
        mean_rel_err=err_sum / len(coords),
        worst_coord=np.unravel_index(worst, target.shape),
        n_checked=len(coords),
        tol=rel_tol,
    )


def directional_check(loss_fn, target, analytic, *, directions=20, step=DEFAULT_STEP,
                      rng=None) -> float:
    """Max relative error of <grad, v> against directional derivatives along
    ``directions`` random unit vectors; a cheap whole-tensor consistency test."""
    rng = rng or np.random.default_rng(0)
    base = target.copy()
    worst = 0.0
    for _ in range(directions):
        v = rng.standard_normal(target.shape)
        v /= np.sqrt((v * v).sum())
        target[...] = base + step * v
        f_plus = loss_fn()
        target[...] = base - step * v
        f_minus = loss_fn()
        target[...] = base
        fd = (f_plus - f_minus) / (2.0 * step)
        an = float((analytic * v).sum())
        worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-8))
    return worst


# ---------------------------------------------------------------------------
# check suites

def _projection_loss(layer, x, u):
    def loss():
        y, _ = layer.forward(x)
        return float((y * u).sum())
    return loss


def _layer_reports(name, layer, x, tol, rng, *, max_coords=200,
                   step=DEFAULT_STEP) -> list[CheckReport]:
    """Check input and every parameter gradient of ``layer`` under a fixed
    random projection of its output."""
    y0, cache = layer.forward(x)
    u = np.random.default_rng(7).standard_normal(y0.shape)
    grads = GradStore()
    gx = layer.backward(cache, u, grads, "")
    loss = _projection_loss(layer, x, u)
    reports = [finite_diff_check(loss, x, gx, rel_tol=tol, rng=rng, step=step,
                                 name=f"{name}.input", max_coords=max_coords)]
    for pname, param in layer.named_params():
        reports.append(
            finite_diff_check(loss, param, grads[pname], rel_tol=tol, rng=rng,
                              step=step, name=f"{name}.{pname}", max_coords=max_coords)
        )
    return reports


def run_op_checks(seed: int = 0, inject_fault: bool = False) -> list[CheckReport]:
    """Single-op certification at tolerance 1e-6."""
    rng = np.random.default_rng(seed)
    reports: list[CheckReport] = []

    def layer_case(name, layer, shape, tol=TOL_OPS, step=DEFAULT_STEP):
        x = rng.standard_normal(shape)
        reports.extend(_layer_reports(name, layer, x, tol, rng, step=step))

    layer_case("conv3x3", Conv2d(3, 5, 3, 3, rng=rng, dtype=np.float64), (2, 3, 6, 6))
    layer_case("conv1x1", Conv2d(4, 2, 1, 1, rng=rng, dtype=np.float64), (1, 4, 5, 5))
    layer_case("dwconv5x5", Conv2d(3, 3, 5, 5, depthwise=True, rng=rng, dtype=np.float64),
               (1, 3, 8, 8))
    layer_case("dwconv1x11", Conv2d(2, 2, 1, 11, depthwise=True, rng=rng, dtype=np.float64),
               (1, 2, 6, 12))
    layer_case("dwconv11x1", Conv2d(2, 2, 11, 1, depthwise=True, rng=rng, dtype=np.float64),
               (1, 2, 12, 6))
    # the normalization's curvature drowns its smallest gradients at the
    # default step; 1e-5 keeps truncation below the 1e-6 tolerance
    layer_case("layer_norm", LayerNorm(6, dtype=np.float64), (2, 6, 4, 4), step=1e-5)
    layer_case("downsample", Downsample(4, rng=rng, dtype=np.float64), (1, 4, 6, 6))
    layer_case("upsample", Upsample(4, rng=rng, dtype=np.float64), (1, 4, 5, 5))

    # gelu (smooth everywhere, so plain tolerance applies)
    x = rng.standard_normal((1, 3, 5, 5))
    y0, c = ops.gelu(x)
    u = rng.standard_normal(y0.shape)
    gx = ops.gelu_backward(c, u)

    def gelu_loss():
        return float((ops.gelu(x)[0] * u).sum())

    reports.append(finite_diff_check(gelu_loss, x, gx, rel_tol=TOL_OPS, rng=rng,
                                     name="gelu.input"))

    # softmax pair over both inputs
    a = rng.standard_normal((1, 2, 4, 4))
    b = rng.standard_normal((1, 2, 4, 4))
    (wa0, wb0), cs = ops.softmax_pair(a, b)
    ua = rng.standard_normal(wa0.shape)
    ub = rng.standard_normal(wb0.shape)
    ga, gb = ops.softmax_pair_backward(cs, ua, ub)

    def sm_loss():
        (wa, wb), _ = ops.softmax_pair(a, b)
        return float((wa * ua).sum() + (wb * ub).sum())

    reports.append(finite_diff_check(sm_loss, a, ga, rel_tol=TOL_OPS, rng=rng,
                                     name="softmax_pair.a"))
    reports.append(finite_diff_check(sm_loss, b, gb, rel_tol=TOL_OPS, rng=rng,
                                     name="softmax_pair.b"))

    # L1 training loss (checked away from ties; offsets keep |pred-target| > step)
    pred = rng.standard_normal((1, 3, 4, 4))
    target = pred + rng.uniform(0.5, 1.5, pred.shape) * np.where(
        rng.random(pred.shape) < 0.5, -1.0, 1.0
    )
    _, gl = l1_loss(pred, target)

    def l1_fn():
        return l1_loss(pred, target)[0]

    reports.append(finite_diff_check(l1_fn, pred, gl, rel_tol=1e-7, rng=rng,
                                     name="l1_loss.pred", step=1e-5))

    # reflect pad + crop chain
    xp = rng.standard_normal((1, 2, 5, 7))
    up = rng.standard_normal((1, 2, 8, 9))

    def pad_loss():
        return float((ops.pad_reflect4(xp, 1, 2, 0, 2) * up).sum())

    gpad = ops.pad_reflect4_adjoint(up, 1, 2, 0, 2)
    reports.append(finite_diff_check(pad_loss, xp, gpad, rel_tol=TOL_OPS, rng=rng,
                                     name="pad_reflect.input"))

    if inject_fault:
        bad = _layer_reports("fault-injection", Conv2d(2, 2, 3, 3, rng=rng, dtype=np.float64),
                             rng.standard_normal((1, 2, 5, 5)), TOL_OPS, rng)
        poisoned = bad[0]
        poisoned.max_rel_err += 1.0
        reports.append(poisoned)
    return reports


def run_block_checks(seed: int = 0) -> list[CheckReport]:
    """Block-level certification at tolerance 1e-4 (C=4 features, 16x16)."""
    rng = np.random.default_rng(seed)
    cfg = BlockConfig(freq_patch=8, branch_ratio=0.25, square_kernel=5,
                      band_kernel=11, ffn_expand=2.0)
    reports: list[CheckReport] = []
    shape = (1, 4, 16, 16)

    attn = FourierAttention(4, 8, rng=rng, dtype=np.float64)
    reports.extend(_layer_reports("fgfe", attn, rng.standard_normal(shape),
                                  TOL_BLOCKS, rng))
    # non-multiple extents exercise the internal pad/crop adjoints
    attn_pad = FourierAttention(4, 8, rng=rng, dtype=np.float64)
    reports.extend(_layer_reports("fgfe.padded", attn_pad,
                                  rng.standard_normal((1, 4, 12, 14)),
                                  TOL_BLOCKS, rng))
    local = MultiScaleConv(4, cfg, rng=rng, dtype=np.float64)
    reports.extend(_layer_reports("mlfe", local, rng.standard_normal(shape),
                                  TOL_BLOCKS, rng))
    ffn = FeedForward(4, 2.0, rng=rng, dtype=np.float64)
    reports.extend(_layer_reports("ffn", ffn, rng.standard_normal(shape),
                                  TOL_BLOCKS, rng))

    fuse = SkipFusionGate(4, rng=rng, dtype=np.float64)
    f_en = rng.standard_normal(shape)
    f_de = rng.standard_normal(shape)
    y0, cache = fuse.forward(f_en, f_de)
    u = rng.standard_normal(y0.shape)
    grads = GradStore()
    g_en, g_de = fuse.backward(cache, u, grads, "")

    def fuse_loss():
        y, _ = fuse.forward(f_en, f_de)
        return float((y * u).sum())

    reports.append(finite_diff_check(fuse_loss, f_en, g_en, rel_tol=TOL_BLOCKS,
                                     rng=rng, name="afmm.encoder_input"))
    reports.append(finite_diff_check(fuse_loss, f_de, g_de, rel_tol=TOL_BLOCKS,
                                     rng=rng, name="afmm.decoder_input"))
    for pname, param in fuse.named_params():
        reports.append(finite_diff_check(fuse_loss, param, grads[pname],
                                         rel_tol=TOL_BLOCKS, rng=rng,
                                         name=f"afmm.{pname}"))

    fem = RestorationBlock(4, cfg, rng=rng, dtype=np.float64)
    reports.extend(_layer_reports("fem", fem, rng.standard_normal(shape),
                                  TOL_BLOCKS, rng, max_coords=120))
    return reports


def run_network_check(seed: int = 0, max_coords: int = 240) -> list[CheckReport]:
    """Whole-network certification on the C=4 toy configuration, driving the
    real training loss."""
    rng = np.random.default_rng(seed)
    cfg: NetworkConfig = toy_config(base_channels=4, freq_patch=4)
    net = D2Net(cfg, seed=seed, precision="double")
    x = rng.uniform(0.0, 1.0, (1, 3, 16, 16))
    target = rng.uniform(0.0, 1.0, (1, 3, 16, 16))

    y0, cache = net.forward(x)
    _, gl = l1_loss(y0, target)
    grads = GradStore()
    gx = net.backward(cache, gl, grads, "")

    def loss():
        y, _ = net.forward(x)
        return l1_loss(y, target)[0]

    # every parameter tensor gets at least two sampled coordinates, so the
    # whole registry is covered and the total stays comfortably above 200
    flat_params = list(net.named_params())
    per_tensor = max(2, max_coords // max(len(flat_params), 1))
    reports = [finite_diff_check(loss, x, gx, rel_tol=TOL_BLOCKS, rng=rng,
                                 name="network.input", max_coords=60)]
    for pname, param in flat_params:
        n = min(per_tensor, param.size)
        reports.append(finite_diff_check(loss, param, grads[pname],
                                         rel_tol=TOL_BLOCKS, rng=rng,
                                         name=f"network.{pname}", max_coords=n))
    return reports


def run_scope(scope: str, seed: int = 0, inject_fault: bool = False) -> list[CheckReport]:
    if scope == "ops":
        return run_op_checks(seed, inject_fault=inject_fault)
    if scope == "blocks":
        reports = run_block_checks(seed)
        if inject_fault:
            reports[0].max_rel_err += 1.0
        return reports
    if scope == "network":
        reports = run_network_check(seed)
        if inject_fault:
            reports[0].max_rel_err += 1.0
        return reports
    raise ValueError(f"unknown gradcheck scope {scope!r}")
