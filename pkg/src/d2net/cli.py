"""Command-line interface.

Subcommands: restore, train-toy, gradcheck, bench-attn, metrics, selftest.
Every run prints its resolved configuration and seed so it can be reproduced
from the log alone.  Exit codes: 0 success, 1 failed numerical check,
2 user-input error, 3 artifact/format error.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import NetworkConfig, config_to_lines, load_config_file, toy_train_config
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    ImageFormatError,
    MemoryGuardError,
    ShapeError,
)
from .membench import MemoryLedger, memory_scaling_report
from .metrics import psnr, ssim
from .network import D2Net, load_checkpoint, save_checkpoint
from .ppm import read_ppm, to_float, to_uint8, write_ppm
from .training import DegradationSpec, trace_to_csv, train_toy

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USER_ERROR = 2
EXIT_ARTIFACT_ERROR = 3


def _banner(cfg: NetworkConfig, args) -> None:
    print(f"# d2net {__version__}")
    print(f"# seed = {args.seed}")
    print(f"# precision = {args.precision}")
    for line in config_to_lines(cfg):
        print(f"# {line}")


def _resolve_config(args) -> NetworkConfig:
    if args.config:
        return load_config_file(args.config)
    return NetworkConfig() if args.command == "restore" else toy_train_config()


def _load_image(path: str) -> np.ndarray:
    try:
        return read_ppm(path)
    except (OSError, ImageFormatError) as exc:
        raise DataError(f"cannot read image {path!r}: {exc}") from exc


def cmd_restore(args) -> int:
    cfg = _resolve_config(args)
    _banner(cfg, args)
    img = _load_image(args.input)
    net = D2Net(cfg, seed=args.seed, precision=args.precision)
    load_checkpoint(args.checkpoint, net)
    x = to_float(img, net.dtype)
    ledger = MemoryLedger()
    y = net.forward_full_resolution(x, ledger)
    write_ppm(args.output, to_uint8(y))
    print(f"peak_activation_floats = {ledger.peak}")
    print(f"restored {args.input} -> {args.output} ({img.shape[2]}x{img.shape[1]})")
    return EXIT_OK


def cmd_train_toy(args) -> int:
    cfg = _resolve_config(args)
    _banner(cfg, args)
    images = None
    if args.data:
        paths = sorted(Path(args.data).glob("*.ppm"))
        if len(paths) < 8:
            raise DataError(
                f"need at least 8 .ppm images in {args.data!r}, found {len(paths)}"
            )
        images = np.concatenate([to_float(read_ppm(p)) for p in paths])
    spec = DegradationSpec(kind=args.task, seed=args.seed)
    result = train_toy(cfg, spec, args.iters, seed=args.seed, images=images,
                       batch=args.batch, crop=args.crop, base_lr=args.lr,
                       log=lambda msg: print(msg, flush=True))
    save_checkpoint(result.net, args.out)
    if args.trace:
        Path(args.trace).write_text(trace_to_csv(result.trace), encoding="utf-8")
    print(f"checkpoint written to {args.out}")
    print(f"psnr_degraded = {result.psnr_degraded:.4f} dB")
    print(f"psnr_restored = {result.psnr_restored:.4f} dB")
    print(f"psnr_gain = {result.psnr_gain:.4f} dB")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_scope

    cfg = _resolve_config(args)
    _banner(cfg, args)
    reports = run_scope(args.scope, seed=args.seed, inject_fault=args.inject_fault)
    print("name,max_rel_err,mean_rel_err,n_checked,verdict")
    failures = []
    for r in reports:
        print(r.row())
        if not r.passed:
            failures.append(r)
    if failures:
        worst = max(failures, key=lambda r: r.max_rel_err)
        print(f"FAILED: {len(failures)} checks; worst {worst.name} "
              f"max_rel_err={worst.max_rel_err:.3e} at {worst.worst_coord}")
        return EXIT_CHECK_FAILED
    print(f"all {len(reports)} gradient checks passed")
    return EXIT_OK


def cmd_bench_attn(args) -> int:
    sizes = []
    for tok in args.sizes.split(","):
        tok = tok.strip()
        if tok:
            sizes.append((int(tok), int(tok)))
    if not sizes:
        raise DataError("no benchmark sizes given")
    report = memory_scaling_report(sizes, channels=args.channels, seed=args.seed)
    csv = report.to_csv()
    if args.out:
        Path(args.out).write_text(csv, encoding="utf-8")
    else:
        print(csv, end="")
    print(f"# spectral_exponent = {report.spectral_exponent:.4f}")
    print(f"# naive_exponent = {report.naive_exponent:.4f}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    ref = to_float(_load_image(args.ref), np.float64)
    test = to_float(_load_image(args.test), np.float64)
    p = psnr(ref, test)
    print("psnr = identical" if math.isinf(p) else f"psnr = {p:.6f} dB")
    print(f"ssim = {ssim(ref, test):.8f}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from . import selftest

    failures = selftest.run(seed=args.seed, log=print)
    if failures:
        print(f"SELFTEST FAILED: {failures} check(s)")
        return EXIT_CHECK_FAILED
    print("selftest passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="d2net",
        description="Full-resolution image restoration with Fourier-domain attention",
    )
    parser.add_argument("--seed", type=int, default=0, help="global RNG seed")
    parser.add_argument("--precision", choices=("single", "double"), default="single")
    parser.add_argument("--config", help="path to a key = value network config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("restore", help="restore one image with a trained checkpoint")
    p.add_argument("--input", required=True, help="degraded input (.ppm, P6)")
    p.add_argument("--checkpoint", required=True, help="trained network weights")
    p.add_argument("--output", required=True, help="restored output (.ppm)")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("train-toy", help="desk-scale training on a synthetic task")
    p.add_argument("--task", choices=("lowlight", "haze", "blur"), required=True)
    p.add_argument("--data", help="directory of clean .ppm images (>= 8); "
                                  "omit to use the built-in synthetic corpus")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--trace", help="CSV metrics trace output path")
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--crop", type=int, default=64)
    p.add_argument("--lr", type=float, default=2e-4)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("gradcheck", help="finite-difference gradient certification")
    p.add_argument("--scope", choices=("ops", "blocks", "network"), default="blocks")
    p.add_argument("--inject-fault", action="store_true",
                   help="testing hook: corrupt one gradient to prove sensitivity")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench-attn", help="memory-scaling benchmark: spectral vs naive attention")
    p.add_argument("--sizes", default="16,32,64,128", help="comma-separated square sizes")
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--out", help="write the CSV here instead of stdout")
    p.set_defaults(func=cmd_bench_attn)

    p = sub.add_parser("metrics", help="PSNR/SSIM between two images")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("selftest", help="fast internal consistency checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, ConfigError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER_ERROR
    except (CheckpointError, ImageFormatError) as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT_ERROR
    except MemoryGuardError as exc:
        print(f"memory guard tripped: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER_ERROR


if __name__ == "__main__":
    sys.exit(main())
