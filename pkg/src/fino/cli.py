"""Command-line surface: generate / train / eval / predict / gradcheck.

Exit codes: 0 success, 1 validation error, 2 numeric failure.
"""
from __future__ import annotations

import argparse
import sys

from . import __version__
from .autodiff import NumericError
from .checkpoint import CheckpointError
from .config import TrainConfig, load_config
from .data import (DatasetError, GenerationError, SynthConfig, generate_pair,
                   load_dataset, load_pair_images, save_mask_png, save_pair)
from .head import decide
from .train import DivergenceError, evaluate, load_train_state, save_train_state, train
from .verify import MODULE_NAMES, run_suite

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERIC = 2


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="fino", description="bitemporal change detection at desk scale")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic dataset as PNGs")
    gen.add_argument("--out", required=True, help="dataset root directory")
    gen.add_argument("--count", type=int, required=True, help="number of pairs")
    gen.add_argument("--size", type=int, default=64, help="canvas size (multiple of 32)")
    gen.add_argument("--pseudo-frac", type=float, default=0.0,
                     help="fraction of objects that change appearance only")
    gen.add_argument("--brightness", type=float, default=0.0,
                     help="max per-image additive brightness shift")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--static-frac", type=float, default=0.25,
                     help="fraction of objects identical in both images")
    gen.add_argument("--tint", type=float, default=0.0,
                     help="max per-channel multiplicative tint deviation")
    gen.add_argument("--noise", type=float, default=0.0, help="pixel noise sigma")
    gen.add_argument("--objects", type=int, nargs=2, default=(3, 6),
                     metavar=("LO", "HI"), help="object count range")

    tr = sub.add_parser("train", help="train on a dataset directory")
    tr.add_argument("--data", required=True, help="dataset root with A/, B/, label/")
    tr.add_argument("--config", help="key = value config file")
    tr.add_argument("--out", required=True, help="checkpoint output path")
    tr.add_argument("--log", help="JSON-lines loss log (default: <out>.jsonl)")

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--threshold", type=float, default=0.5)
    ev.add_argument("--dump-masks", help="directory for predicted mask PNGs")

    pr = sub.add_parser("predict", help="predict a change mask for one pair")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--a", required=True, help="earlier image (PNG)")
    pr.add_argument("--b", required=True, help="later image (PNG)")
    pr.add_argument("--out", required=True, help="output mask PNG")
    pr.add_argument("--threshold", type=float, default=0.5)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    gc.add_argument("--module", default="all", choices=MODULE_NAMES + ("all",))
    gc.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_generate(args):
    cfg = SynthConfig(size=args.size, object_count=tuple(args.objects),
                      pseudo_fraction=args.pseudo_frac, static_fraction=args.static_frac,
                      brightness=args.brightness, tint=args.tint,
                      noise_sigma=args.noise, seed=args.seed)
    cfg.validate()
    for index in range(args.count):
        save_pair(generate_pair(cfg, index), args.out)
    print(f"wrote {args.count} pairs under {args.out}")
    return EXIT_OK


def _cmd_train(args):
    cfg = load_config(args.config) if args.config else TrainConfig()
    cfg.validate()
    pairs = load_dataset(args.data)
    log_path = args.log or f"{args.out}.jsonl"
    try:
        with open(log_path, "w", encoding="utf-8") as log_stream:
            result = train(cfg, pairs, log_stream=log_stream)
    except DivergenceError as exc:
        # parameters were rolled back to the last finite step; keep them
        if exc.result is not None:
            save_train_state(args.out, exc.result.model, exc.result.optimizer,
                             cfg, exc.result.steps)
            print(f"saved last good checkpoint at {args.out}", file=sys.stderr)
        raise
    save_train_state(args.out, result.model, result.optimizer, cfg, result.steps)
    last = result.history[-1] if result.history else {}
    print(f"trained {result.steps} steps; final total loss "
          f"{last.get('total', float('nan')):.6f}; checkpoint at {args.out}")
    return EXIT_OK


def _cmd_eval(args):
    model, _, _, _ = load_train_state(args.ckpt)
    pairs = load_dataset(args.data)
    report = evaluate(model, pairs, args.threshold, dump_dir=args.dump_masks)
    print(report.to_json())
    return EXIT_OK


def _cmd_predict(args):
    model, _, _, _ = load_train_state(args.ckpt)
    image_a, image_b = load_pair_images(args.a, args.b)
    prob = model.predict_prob(image_a[None], image_b[None])
    save_mask_png(args.out, decide(prob, args.threshold)[0])
    changed = int(decide(prob, args.threshold).sum())
    print(f"wrote {args.out} ({changed} changed pixels)")
    return EXIT_OK


def _cmd_gradcheck(args):
    ok, lines = run_suite(args.module, seed=args.seed)
    print("\n".join(lines))
    if not ok:
        raise NumericError("gradient check failed")
    print("all gradient checks passed")
    return EXIT_OK


def main(argv=None):
    args = _build_parser().parse_args(argv)
    handlers = {"generate": _cmd_generate, "train": _cmd_train, "eval": _cmd_eval,
                "predict": _cmd_predict, "gradcheck": _cmd_gradcheck}
    try:
        return handlers[args.command](args)
    except (DivergenceError, NumericError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, CheckpointError, DatasetError, GenerationError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
