"""Command-line entry points: train, restore, fuse, eval, inspect, synth."""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional

import numpy as np

from .data import NoiseSpec, add_gaussian_noise, load_dirs
from .io import (CheckpointError, ImageFormatError, list_pngs, load_checkpoint, load_json,
                 read_png, save_checkpoint, write_png)
from .metrics import MetricReport, psnr, ssim
from .model import ABLATIONS, LIR, ModelConfig, restore_array
from .training import (OptimizerConfig, ProgressiveSchedule, TrainConfig, TrainingError, parse_log,
                       train)

log = logging.getLogger("lir")

TRAIN_KEYS = {"iters", "seed", "patch", "batch", "progressive", "noise", "val_every", "ckpt_every",
              "clip_grad_norm", "lr_max", "lr_min", "weight_decay"}


class CliError(Exception):
    pass


def _noise(text: str) -> NoiseSpec:
    try:
        return NoiseSpec.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _read_config(path: Optional[str]):
    """Split a JSON config into ModelConfig fields and a ``train`` section."""
    if path is None:
        return {}, {}
    try:
        raw = load_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise CliError(f"config {path} must hold a JSON object")
    train_cfg = raw.pop("train", {}) or {}
    unknown = set(train_cfg) - TRAIN_KEYS
    if unknown:
        raise CliError(f"config {path}: unknown train keys {sorted(unknown)}")
    return raw, train_cfg


def _pick(flag, cfg: dict, key: str, default):
    if flag is not None:
        return flag
    return cfg.get(key, default)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    model_fields, tcfg = _read_config(args.config)
    try:
        mcfg = ModelConfig.from_dict(model_fields)
        if args.ablation:
            mcfg = mcfg.with_ablation(args.ablation)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad model config: {exc}") from None

    iters = _pick(args.iters, tcfg, "iters", None)
    if not iters or iters <= 0:
        raise CliError("--iters must be a positive integer")
    seed = _pick(args.seed, tcfg, "seed", 0)
    patch = _pick(args.patch, tcfg, "patch", 64)
    batch = _pick(args.batch, tcfg, "batch", 8)
    if _pick(args.progressive or None, tcfg, "progressive", False):
        schedule = ProgressiveSchedule.default().truncated(iters)
    else:
        schedule = ProgressiveSchedule([(patch, batch, iters)])

    noise = None
    if args.degraded is None:
        noise = args.noise or _noise(tcfg.get("noise", "blind"))
    data = load_dirs(args.clean, args.degraded, noise)
    val_pairs = None
    if args.val_clean:
        val_noise = None
        if args.val_degraded is None:
            val_noise = NoiseSpec("fixed", args.val_sigma)
        val_pairs = load_dirs(args.val_clean, args.val_degraded, val_noise).fixed_pairs()

    opt = OptimizerConfig(lr_max=tcfg.get("lr_max", 3e-4), lr_min=tcfg.get("lr_min", 1e-6),
                          weight_decay=tcfg.get("weight_decay", 1e-4))
    cfg = TrainConfig(seed=seed, optimizer=opt,
                      val_every=_pick(args.val_every, tcfg, "val_every", 200),
                      ckpt_every=tcfg.get("ckpt_every", 500),
                      clip_grad_norm=_pick(args.clip_grad_norm, tcfg, "clip_grad_norm", None))
    log_path = args.log or args.out + ".log"

    state = None
    if args.resume and os.path.exists(args.out):
        model, state, _ = load_checkpoint(args.out, with_state=True)
        if state is None:
            raise CliError(f"{args.out} has no optimizer state to resume from")
        log.info("resuming %s at iteration %d", args.out, state.t)
    else:
        model = LIR(mcfg, seed=seed)
        if os.path.exists(log_path):
            os.remove(log_path)
    log.info("training %s: %d parameters, %d iterations", args.ablation or "model",
             model.num_parameters(), schedule.total)
    try:
        train(model, data, schedule, args.out, cfg, val_pairs=val_pairs, state=state,
              log_path=log_path, stop_at=args.stop_at)
    except TrainingError as exc:
        raise CliError(str(exc)) from None
    if args.figure:
        from .plotting import plot_training_log
        plot_training_log(parse_log(log_path), args.figure)
    print(f"checkpoint={args.out} log={log_path}")
    return 0


def cmd_restore(args) -> int:
    model = load_checkpoint(args.ckpt)
    if args.fused:
        model.fuse()
    image = read_png(args.input)
    out = restore_array(model, image)
    write_png(np.clip(out, 0.0, 1.0), args.output)
    return 0


def cmd_fuse(args) -> int:
    model, state, config = load_checkpoint(args.ckpt, with_state=True)
    model.fuse()
    save_checkpoint(args.out, model, metadata=config.get("meta"))
    print(f"fused {len(model.adaptive_filters())} adaptive filters -> {args.out}")
    return 0


def _score(name: str, clean_path: str, deg_path: str, model: Optional[LIR]):
    clean = read_png(clean_path)
    deg = read_png(deg_path)
    if clean.shape != deg.shape:
        raise ImageFormatError(f"size mismatch {clean.shape[1:]} vs {deg.shape[1:]}")
    pred = deg if model is None else np.clip(restore_array(model, deg), 0.0, 1.0)
    return psnr(pred, clean), ssim(pred, clean)


def cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt) if args.ckpt else None
    clean_files = list_pngs(args.clean)
    deg_files = list_pngs(args.degraded)
    if not clean_files:
        raise CliError(f"no PNG files in {args.clean}")
    jobs = []
    failures = 0
    for name, path in clean_files.items():
        if name not in deg_files:
            print(f"error: {name}: no matching file in {args.degraded}", file=sys.stderr)
            failures += 1
            continue
        jobs.append((name, path, deg_files[name]))

    def run(job):
        name, c, d = job
        try:
            return name, _score(name, c, d, model), None
        except (ImageFormatError, ValueError, OSError) as exc:
            return name, None, exc

    if args.jobs > 1:
        with ThreadPoolExecutor(args.jobs) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    report = MetricReport()
    for name, scores, exc in results:
        if exc is not None:
            print(f"error: {name}: {exc}", file=sys.stderr)
            failures += 1
        else:
            report.add(name, *scores)
    for line in report.lines():
        print(line)
    if report.names:
        print(f"mean psnr={report.mean_psnr:.4f} ssim={report.mean_ssim:.6f} n={len(report.names)}")
        print(report.table(), file=sys.stderr)
        if args.figure:
            from .plotting import plot_metric_report
            plot_metric_report(report, args.figure)
    return 1 if failures else 0


def _tap_image(arr: np.ndarray, h: int, w: int, padded_hw) -> np.ndarray:
    fmap = arr.reshape(arr.shape[-3:]).mean(axis=0)
    th, tw = fmap.shape
    # crop away the padding, scaled to the tap's stride
    fmap = fmap[:math.ceil(h * th / padded_hw[0]), :math.ceil(w * tw / padded_hw[1])]
    lo, hi = float(fmap.min()), float(fmap.max())
    return (fmap - lo) / (hi - lo) if hi > lo else np.zeros_like(fmap)


def cmd_inspect(args) -> int:
    model = load_checkpoint(args.ckpt)
    image = read_png(args.input)
    requested = [t.strip() for t in args.taps.split(",") if t.strip()]
    taps = {}
    restore_array(model, image, taps=taps)
    missing = [t for t in requested if t not in taps]
    if missing:
        raise CliError(f"unknown taps {missing}; available: {', '.join(taps)}")
    os.makedirs(args.outdir, exist_ok=True)
    m = model.cfg.pad_multiple
    padded = (math.ceil(image.shape[1] / m) * m, math.ceil(image.shape[2] / m) * m)
    for name in requested:
        path = os.path.join(args.outdir, f"{name}.png")
        write_png(_tap_image(taps[name], image.shape[1], image.shape[2], padded), path)
        print(f"tap={name} file={path}")
    return 0


def cmd_synth(args) -> int:
    spec = NoiseSpec("fixed", args.sigma)
    files = list_pngs(args.clean)
    if not files:
        raise CliError(f"no PNG files in {args.clean}")
    if os.path.abspath(args.out) == os.path.abspath(args.clean):
        raise CliError("--out must differ from --clean")
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    for name, path in files.items():
        noisy = add_gaussian_noise(read_png(path), spec, rng)
        write_png(noisy, os.path.join(args.out, name))
    print(f"wrote {len(files)} images with sigma={args.sigma:g} to {args.out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lir", description="Lightweight image restoration toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from PNG directories")
    t.add_argument("--config", help="JSON with ModelConfig fields and an optional 'train' section")
    t.add_argument("--clean", required=True)
    g = t.add_mutually_exclusive_group()
    g.add_argument("--degraded", help="directory of filename-matched degraded PNGs")
    g.add_argument("--noise", type=_noise, help="'blind' or 'sigma=<n>' on-the-fly Gaussian noise")
    t.add_argument("--iters", type=int)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--seed", type=int)
    t.add_argument("--ablation", choices=sorted(ABLATIONS))
    t.add_argument("--patch", type=int, help="crop size (single-phase schedule)")
    t.add_argument("--batch", type=int)
    t.add_argument("--progressive", action="store_true",
                   help="use the three-phase crop schedule truncated to --iters")
    t.add_argument("--val-clean")
    t.add_argument("--val-degraded")
    t.add_argument("--val-sigma", type=float, default=25.0)
    t.add_argument("--val-every", type=int)
    t.add_argument("--clip-grad-norm", type=float)
    t.add_argument("--log", help="metrics log path (default <out>.log)")
    t.add_argument("--figure", help="write a training-curve PNG here")
    t.add_argument("--resume", action="store_true", help="continue from --out if it exists")
    t.add_argument("--stop-at", type=int, help=argparse.SUPPRESS)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("restore", help="restore one PNG")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--input", required=True)
    r.add_argument("--output", required=True)
    r.add_argument("--fused", action="store_true", help="fold adaptive filters before running")
    r.set_defaults(func=cmd_restore)

    f = sub.add_parser("fuse", help="write a checkpoint with folded adaptive filters")
    f.add_argument("--ckpt", required=True)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fuse)

    e = sub.add_parser("eval", help="PSNR/SSIM of (restored) degraded images against clean ones")
    e.add_argument("--ckpt", help="restore degraded images first; omit to score them as-is")
    e.add_argument("--clean", required=True)
    e.add_argument("--degraded", required=True)
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--figure", help="write a per-file metric chart here")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="export intermediate feature maps as PNGs")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--taps", required=True, help="comma-separated, e.g. head,laa1.out,deg")
    i.add_argument("--outdir", required=True)
    i.set_defaults(func=cmd_inspect)

    s = sub.add_parser("synth", help="add fixed-sigma Gaussian noise to a PNG directory")
    s.add_argument("--clean", required=True)
    s.add_argument("--sigma", type=float, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, CheckpointError, ImageFormatError, FileNotFoundError, ValueError) as exc:
        print(f"lir {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
