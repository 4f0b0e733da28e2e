"""Command-line entry point: synthesis, training, enhancement, evaluation,
and gradient verification.

Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .data import (
    DataError,
    StereoSample,
    SynthConfig,
    load_dataset,
    read_image,
    synth_dataset,
    write_grayscale,
    write_image,
)
from .losses import error_map
from .model import VARIANTS, ConfigError, ModelConfig
from .tensor import Tensor, no_grad
from .trainer import (
    CheckpointError,
    TrainConfig,
    evaluate,
    init_state,
    load_model,
    save_checkpoint,
    train,
)
from .verify import run_suite


class CliValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliValidationError(message)


def _parse_size(text):
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except Exception:
        raise CliValidationError(f"bad size {text!r}; expected HxW, e.g. 64x64")


def _build_parser():
    p = _Parser(prog="sdinet", description="Low-light stereo image enhancement")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="generate a synthetic stereo low-light dataset")
    ps.add_argument("--out", required=True)
    ps.add_argument("--count", type=int, default=1)
    ps.add_argument("--size", default="64x64")
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--disparity-max", type=int, default=6)
    ps.add_argument("--noise-sigma", type=float, default=None, help="fix the noise level")
    ps.add_argument("--alpha", type=float, default=None, help="fix the darkening gain")
    ps.add_argument("--gamma", type=float, default=None, help="fix the darkening gamma")

    pt = sub.add_parser("train", help="train a model")
    pt.add_argument("--data", required=True)
    pt.add_argument("--out", required=True, help="checkpoint path; loss log goes to <out>.log")
    pt.add_argument("--epochs", type=int, default=700)
    pt.add_argument("--batch", type=int, default=2)
    pt.add_argument("--lr", type=float, default=1e-4)
    pt.add_argument("--lambda", dest="lam", type=float, default=0.1)
    pt.add_argument("--variant", choices=VARIANTS, default="full")
    pt.add_argument("--patch", default=None, help="training crop HxW")
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("--steps", type=int, default=None, help="stop after this many optimizer steps")
    pt.add_argument("--preset", choices=["default", "desk"], default="default",
                    help="desk: base_channels 8, 2 FEBs, 2 residual blocks")

    pe = sub.add_parser("enhance", help="enhance a stereo pair with a trained model")
    pe.add_argument("--ckpt", required=True)
    pe.add_argument("--left", required=True)
    pe.add_argument("--right", required=True)
    pe.add_argument("--out-left", required=True)
    pe.add_argument("--out-right", required=True)
    pe.add_argument("--error-map-against", default=None, metavar="GT_L,GT_R",
                    help="write error maps next to the outputs (suffix .err.png)")

    pv = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    pv.add_argument("--ckpt", required=True)
    pv.add_argument("--data", required=True)
    pv.add_argument("--emit-error-maps", default=None, metavar="DIR")

    pg = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    pg.add_argument("--module", default=None, help="run only the named check")
    pg.add_argument("--tol", type=float, default=None)
    return p


def _cmd_synth(args):
    h, w = _parse_size(args.size)
    cfg = SynthConfig(seed=args.seed, height=h, width=w, disparity_max=args.disparity_max)
    if args.noise_sigma is not None:
        cfg.sigma_range = (args.noise_sigma, args.noise_sigma)
    if args.alpha is not None:
        cfg.alpha_range = (args.alpha, args.alpha)
    if args.gamma is not None:
        cfg.gamma_range = (args.gamma, args.gamma)
    try:
        cfg.validate()
    except DataError as exc:
        raise CliValidationError(str(exc))
    samples = synth_dataset(cfg, args.count, out_dir=args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def _cmd_train(args):
    samples = load_dataset(args.data)
    if not samples:
        raise CliValidationError(f"no samples found under {args.data}")
    model_kwargs = {}
    if args.preset == "desk":
        model_kwargs = dict(base_channels=8, feb_count=2, residual_blocks=2)
    try:
        mcfg = ModelConfig.variant(args.variant, **model_kwargs)
    except ConfigError as exc:
        raise CliValidationError(str(exc))
    lam = 0.0 if args.variant == "v3" else args.lam
    patch = _parse_size(args.patch) if args.patch else None
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, lr0=args.lr, lam=lam,
                      seed=args.seed, patch=patch, max_steps=args.steps, model=mcfg)
    state = init_state(cfg)
    with open(args.out + ".log", "w") as log_file:
        state, _ = train(samples, cfg, state, log_file=log_file)
    save_checkpoint(args.out, state)
    print(f"trained {state.step} steps; checkpoint at {args.out}")
    return 0


def _cmd_enhance(args):
    model = load_model(args.ckpt)
    left = read_image(args.left)
    right = read_image(args.right)
    _, h, w = left.shape
    if h % 4 or w % 4 or left.shape != right.shape:
        raise CliValidationError(
            f"input sizes must match and be divisible by 4; got {left.shape} and {right.shape}")
    with no_grad():
        el, er = model.forward(Tensor(left[None]), Tensor(right[None]))
    write_image(el.data[0], args.out_left)
    write_image(er.data[0], args.out_right)
    if args.error_map_against:
        try:
            gt_l_path, gt_r_path = args.error_map_against.split(",")
        except ValueError:
            raise CliValidationError("--error-map-against expects GT_LEFT,GT_RIGHT")
        for out_path, pred, gt_path in ((args.out_left, el.data[0], gt_l_path),
                                        (args.out_right, er.data[0], gt_r_path)):
            write_grayscale(error_map(pred, read_image(gt_path)), out_path + ".err.png")
    print(f"wrote {args.out_left} and {args.out_right}")
    return 0


def _cmd_eval(args):
    model = load_model(args.ckpt)
    samples = load_dataset(args.data)
    if not samples:
        raise CliValidationError(f"no samples found under {args.data}")
    results = evaluate(samples, model, error_map_dir=args.emit_error_maps)
    print(f"{'':8s}{'Left':>12s}{'Right':>12s}")
    print(f"{'PSNR':8s}{results['left']['psnr']:>12.4f}{results['right']['psnr']:>12.4f}")
    print(f"{'SSIM':8s}{results['left']['ssim']:>12.4f}{results['right']['ssim']:>12.4f}")
    print("summary: " + " ".join([
        f"psnr_left={results['left']['psnr']:.6f}",
        f"ssim_left={results['left']['ssim']:.6f}",
        f"psnr_right={results['right']['psnr']:.6f}",
        f"ssim_right={results['right']['ssim']:.6f}",
        f"count={results['count']}",
    ]))
    return 0


def _cmd_gradcheck(args):
    names = [args.module] if args.module else None
    results = run_suite(names=names, tol=args.tol)
    if not results:
        raise CliValidationError(f"unknown gradcheck module {args.module!r}")
    failed = 0
    for name, report, tol, ok in results:
        status = "PASS" if ok else "FAIL"
        detail = report.failure or f"max_rel_err={report.max_rel_err:.3e} tol={tol:g}"
        print(f"{status} {name}: {detail}")
        failed += 0 if ok else 1
    return 0 if failed == 0 else 2


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        handler = {
            "synth": _cmd_synth,
            "train": _cmd_train,
            "enhance": _cmd_enhance,
            "eval": _cmd_eval,
            "gradcheck": _cmd_gradcheck,
        }[args.command]
        return handler(args)
    except (CliValidationError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
