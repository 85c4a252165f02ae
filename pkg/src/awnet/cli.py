"""Command-line entry point: ``awnet <subcommand> ...``.

Failures exit nonzero after printing one line to stderr of the form::

    error: kind=<ExceptionName> message=<text>
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import checks
from .config import format_config, read_config
from .data import (
    SamplePair,
    demosaic_bilinear,
    load_dataset,
    pack_bayer,
    read_png,
    read_praw,
    synthesize_pair,
    synthetic_rgb,
    write_pair,
    write_png,
)
from .inference import evaluate, predict_pair
from .network import ModelConfig
from .trainer import Schedule, load_checkpoint, model_from_checkpoint, train

log = logging.getLogger("awnet")

MODEL_KEYS = {"base_channels", "growth_rate", "pyramid_bins", "gcb_ratio", "negative_slope", "channel_mults"}
TRAIN_KEYS = {"batch_size", "epochs", "initial_lr", "halve_every", "total_epochs",
              "checkpoint_every", "max_grad_norm"}


class CliError(Exception):
    pass


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


# ---------------------------------------------------------------------------
# gen-data


def _crop(rgb: np.ndarray, size: int, source: Path) -> np.ndarray:
    _, h, w = rgb.shape
    if h < size or w < size:
        raise ValueError(f"{source} is {h}x{w}, smaller than --size {size}")
    top, left = (h - size) // 2, (w - size) // 2
    return rgb[:, top : top + size, left : left + size]


def cmd_gen_data(args) -> None:
    if args.size % 32:
        raise ValueError("--size must be a multiple of 32 so both branches fit the 4-level encoder")
    rng = np.random.default_rng(args.seed)
    if args.input is not None:
        sources = sorted(p for p in _require(Path(args.input), "input directory").iterdir()
                         if p.suffix.lower() == ".png")
        if not sources:
            raise FileNotFoundError(f"no .png images in {args.input}")
    else:
        sources = []
    total = args.count + args.val_count
    for i in range(total):
        if sources:
            src = sources[i % len(sources)]
            rgb = _crop(read_png(src)[0].astype(np.float64), args.size, src)
        else:
            rgb = synthetic_rgb(args.size, args.size, rng)
        split = "train" if i < args.count else "val"
        pair = synthesize_pair(rgb, seed=int(rng.integers(2**31)), id=f"{i:05d}")
        write_pair(args.out, split, pair, args.bit_depth)
    print(f"wrote {args.count} train and {args.val_count} val pairs to {args.out}")


# ---------------------------------------------------------------------------
# train


def _load_split(root, split):
    pairs = list(load_dataset(_require(Path(root), "dataset directory"), split))
    if not pairs:
        raise ValueError(f"no samples in {root}/{split}")
    return pairs


def cmd_train(args) -> None:
    values = read_config(_require(Path(args.config), "config file")) if args.config else {}
    unknown = set(values) - MODEL_KEYS - TRAIN_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    model_cfg = ModelConfig.from_dict({"branch": args.branch, "seed": args.seed,
                                       **{k: v for k, v in values.items() if k in MODEL_KEYS}})
    for key in TRAIN_KEYS:
        if getattr(args, key, None) is not None:
            values[key] = getattr(args, key)
    schedule = Schedule(float(values.get("initial_lr", 1e-4)), int(values.get("halve_every", 10)),
                        int(values.get("total_epochs", 50)))
    dataset = _load_split(args.data, "train")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(
        model_cfg, dataset, schedule, int(values.get("batch_size", 2)),
        epochs=values.get("epochs"), seed=args.seed, out_dir=out,
        checkpoint_every=int(values.get("checkpoint_every", 10)),
        max_grad_norm=float(values.get("max_grad_norm", math.inf)),
    )
    (out / "config.txt").write_text(format_config({**model_cfg.to_dict(), **values}), encoding="utf-8")
    (out / "loss_curve.txt").write_text("".join(f"{v!r}\n" for v in result.loss_curve), encoding="utf-8")
    final = result.epoch_losses[-1] if result.epoch_losses else float("nan")
    print(f"trained {model_cfg.branch} epochs={len(result.epoch_losses)} final_loss={final:.6f} "
          f"checkpoint={result.checkpoints[-1] if result.checkpoints else '-'}")


# ---------------------------------------------------------------------------
# infer / eval


def _load_models(paths: Sequence[str], fuse: bool):
    models = [model_from_checkpoint(load_checkpoint(_require(Path(p), "checkpoint"))) for p in paths]
    if fuse:
        if len(models) != 2:
            raise ValueError("--fuse needs two checkpoints (one per branch)")
        by_branch = {m.cfg.branch: m for m in models}
        if set(by_branch) != {"raw", "demosaiced"}:
            raise ValueError("--fuse needs one raw and one demosaiced checkpoint")
        return by_branch["raw"], by_branch["demosaiced"]
    if len(models) != 1:
        raise ValueError("pass one checkpoint, or two with --fuse")
    return models[0]


def _input_pair(path: Path) -> SamplePair:
    """A target-less pair built from a ``.praw`` mosaic or a demosaiced PNG."""
    if path.suffix == ".praw":
        mosaic = read_praw(path)
        demosaiced = demosaic_bilinear(mosaic.normalized())
        raw4 = pack_bayer(mosaic)
    else:
        demosaiced = read_png(path)[0]
        raw4 = np.zeros((4, demosaiced.shape[1] // 2, demosaiced.shape[2] // 2), np.float32)
    return SamplePair(raw4, demosaiced, np.zeros_like(demosaiced), path.stem)


def cmd_infer(args) -> None:
    if not args.checkpoint:
        raise ValueError("--checkpoint is required")
    models = _load_models(args.checkpoint, args.fuse)
    src = _require(Path(args.input), "input")
    needs_raw = args.fuse or models.cfg.branch == "raw"
    if needs_raw and src.suffix != ".praw":
        raise ValueError("the raw branch needs a .praw mosaic as input")
    image = predict_pair(models, _input_pair(src), ensemble=args.ensemble)
    write_png(args.output, image, 8)
    print(f"wrote {args.output}")


def cmd_eval(args) -> None:
    models = _load_models(args.checkpoint, args.fuse)
    dataset = _load_split(args.data, args.split)
    provenance = "+".join(args.checkpoint) + (" ensemble" if args.ensemble else "")
    report = evaluate(models, dataset, ensemble=args.ensemble, provenance=provenance)
    report.write(args.report)
    print(f"images={len(report.rows)} mean_psnr={report.mean_psnr:.4f} mean_ssim={report.mean_ssim:.6f}")


# ---------------------------------------------------------------------------
# verification suites


def _run_suite(results) -> None:
    failed = 0
    for r in results:
        print(r.line(), flush=True)
        failed += not r.passed
    if failed:
        raise CliError(f"{failed} check(s) failed")


def cmd_gradcheck(args) -> None:
    _run_suite(checks.gradient_suite(args.seed, full_model=not args.quick))


def cmd_selftest(args) -> None:
    _run_suite(checks.invariant_suite(args.seed))


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(f"usage: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="awnet", description="Framework-free AWNet learned ISP.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(fn=fn)
        return p

    p = add("gen-data", cmd_gen_data, "synthesize RAW/demosaiced/target pairs")
    p.add_argument("out")
    p.add_argument("--input", help="directory of RGB .png images (procedural scenes if omitted)")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--val-count", type=int, default=0)
    p.add_argument("--size", type=int, default=64, help="target extent, multiple of 32")
    p.add_argument("--bit-depth", type=int, default=16, choices=(8, 16))

    p = add("train", cmd_train, "train one branch")
    p.add_argument("--branch", choices=("raw", "demosaiced"), required=True)
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--data", required=True, help="dataset root containing train/")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)

    p = add("infer", cmd_infer, "run a model (or fused pair) on one input")
    p.add_argument("--checkpoint", action="append", default=[])
    p.add_argument("--input", required=True, help=".praw mosaic or demosaiced .png")
    p.add_argument("--output", required=True, help="8-bit PNG to write")
    p.add_argument("--ensemble", action="store_true", help="average the 8 dihedral variants")
    p.add_argument("--fuse", action="store_true", help="average raw and demosaiced branches")

    p = add("eval", cmd_eval, "PSNR/SSIM report over a dataset split")
    p.add_argument("--checkpoint", action="append", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val", choices=("train", "val"))
    p.add_argument("--report", required=True, help="CSV path")
    p.add_argument("--ensemble", action="store_true")
    p.add_argument("--fuse", action="store_true")

    p = add("gradcheck", cmd_gradcheck, "finite-difference gradient suite")
    p.add_argument("--quick", action="store_true", help="skip the full-model check")

    add("selftest", cmd_selftest, "wavelet, loss and metric invariants")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(name)s: %(message)s")
        args.fn(args)
        return 0
    except Exception as exc:  # noqa: BLE001 - every failure becomes one parseable line
        message = " ".join(str(exc).split())
        kind = "UsageError" if isinstance(exc, CliError) and message.startswith("usage:") else type(exc).__name__
        print(f"error: kind={kind} message={message}", file=sys.stderr)
        return 2 if kind == "UsageError" else 1


if __name__ == "__main__":
    sys.exit(main())
