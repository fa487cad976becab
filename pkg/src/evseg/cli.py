"""Command-line entry point.

Subcommands: ``gen`` (synthetic phantoms), ``train``, ``eval`` (metrics CSV,
with or without evidential fusion), ``uncertainty`` (conflict map as PGM plus
fused labels as EVT). Exit codes: 0 success, 1 usage error, 2 data error,
3 numeric failure. ``EVSEG_THREADS`` caps evaluation workers (0 or unset =
sequential deterministic mode).
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import dataio, metrics, model_io, semisup
from .dataio import LabeledVolume, PhantomConfig
from .errors import (
    DataFormatError,
    DivergenceError,
    EvsegError,
    NoLabeledDataError,
    ShapeMismatchError,
    TotalConflictError,
)
from .model import forward_volume, segment_volume

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    # usage problems must exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate synthetic phantom cases")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--count", type=int, default=1)
    gen.add_argument("--size", type=int, default=160)
    gen.add_argument("--blur", type=float, default=1.5)
    gen.add_argument("--noise-sigma", type=float, default=0.05)
    gen.add_argument("--out", required=True, help="output directory")

    train = sub.add_parser("train", help="train a model on generated cases")
    train.add_argument("--data", required=True, help="directory of case_*.evt files")
    train.add_argument("--mode", choices=("supervised", "semi"), default="semi")
    train.add_argument("--labeled-frac", type=float, default=0.5)
    train.add_argument("--epochs", type=int, default=1)
    train.add_argument("--iters-per-epoch", type=int, default=100)
    train.add_argument("--lr-backbone", type=float, default=0.001)
    train.add_argument("--lr-enn", type=float, default=0.01)
    train.add_argument("--prototypes", type=int, default=16)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--out", required=True, help="model file (.evm)")
    train.add_argument("--log", default=None, help="training log CSV (default: <out>.log.csv)")

    ev = sub.add_parser("eval", help="evaluate a model over a dataset")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--report", required=True, help="output CSV path")
    ev.add_argument("--fusion", choices=("on", "off"), default="on")
    ev.add_argument("--truth-as-pred", action="store_true",
                    help="debug: score the ground truth against itself")

    unc = sub.add_parser("uncertainty", help="export the conflict map for one case")
    unc.add_argument("--model", required=True)
    unc.add_argument("--case", required=True, help="case image (.evt)")
    unc.add_argument("--out", required=True, help="output PGM path")
    return parser


def _case_files(data_dir: str):
    if not os.path.isdir(data_dir):
        raise DataFormatError(f"data directory {data_dir!r} does not exist")
    names = sorted(
        n for n in os.listdir(data_dir)
        if n.endswith(".evt") and not n.endswith("_labels.evt")
    )
    if not names:
        raise DataFormatError(f"no case .evt files found in {data_dir!r}")
    return [os.path.join(data_dir, n) for n in names]


def _load_dataset(data_dir: str):
    volumes = [dataio.load_volume(p) for p in _case_files(data_dir)]
    h, w, _ = volumes[0].image.shape
    return [dataio.preprocess(v, crop=(h, w)) for v in volumes]


def _worker_count() -> int:
    raw = os.environ.get("EVSEG_THREADS", "0")
    try:
        return max(0, int(raw))
    except ValueError:
        return 0


def cmd_gen(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    children = np.random.SeedSequence(args.seed).spawn(args.count)
    for i, child in enumerate(children):
        config = PhantomConfig(
            size=(args.size, args.size),
            blur_sigma=args.blur,
            noise_sigma=args.noise_sigma,
            seed=int(child.generate_state(1)[0]),
        )
        volume = dataio.generate_phantom(config)
        path = os.path.join(args.out, f"case_{i:03d}.evt")
        dataio.save_volume(volume, path)
        print(f"case_{i:03d}: {path} + labels, size {args.size}x{args.size}")
    print(f"wrote {args.count} case(s) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    volumes = _load_dataset(args.data)
    config = semisup.TrainConfig(
        mode=args.mode,
        labeled_fraction=args.labeled_frac,
        epochs=args.epochs,
        iters_per_epoch=args.iters_per_epoch,
        lr_backbone=args.lr_backbone,
        lr_enn=args.lr_enn,
        prototype_count=args.prototypes,
        seed=args.seed,
    )
    result = semisup.train(volumes, config)

    log_path = args.log or f"{args.out}.log.csv"
    semisup.write_training_log(result.log, log_path)
    model_io.save_model(result.model, args.out, train_config=config,
                        digest=model_io.log_digest(log_path))
    final = result.log[-1].loss if result.log else float("nan")
    print(f"trained {config.mode} for {len(result.log)} iterations; "
          f"final loss {final:.6f}")
    print(f"model: {args.out}")
    print(f"log:   {log_path}")
    return EXIT_OK


def _eval_one(model, volume, fusion, truth_as_pred):
    if truth_as_pred:
        pred = volume.labels
    else:
        pred = segment_volume(model, volume.image, fusion=fusion)
    return metrics.evaluate(pred, volume.labels).to_rows(volume.case_id)


def cmd_eval(args) -> int:
    model, _ = model_io.load_model(args.model)
    volumes = _load_dataset(args.data)
    fusion = args.fusion == "on"

    rows = []
    failures = []
    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(_eval_one, model, v, fusion, args.truth_as_pred): v
                for v in volumes
            }
            for future, volume in futures.items():
                try:
                    rows.extend(future.result())
                except (ShapeMismatchError, ValueError) as exc:
                    failures.append((volume.case_id, exc))
    else:
        for volume in volumes:
            try:
                rows.extend(_eval_one(model, volume, fusion, args.truth_as_pred))
            except (ShapeMismatchError, ValueError) as exc:
                failures.append((volume.case_id, exc))

    for case_id, exc in failures:
        print(f"warning: case {case_id} skipped: {exc}", file=sys.stderr)
    if not rows:
        raise DataFormatError("no case could be evaluated")

    rows.sort(key=lambda r: (r["case_id"], metrics.REGION_ORDER.index(r["region"])))
    rows.extend(metrics.mean_rows(rows))
    metrics.write_report_csv(rows, args.report)

    for row in rows[-3:]:
        print(f"mean {row['region']}: dice {row['dice']:.4f}  ppv {row['ppv']:.4f}  "
              f"sensitivity {row['sensitivity']:.4f}  hausdorff {row['hausdorff']:.4f}")
    print(f"report: {args.report} ({len(rows)} rows)")
    return EXIT_OK


def cmd_uncertainty(args) -> int:
    model, _ = model_io.load_model(args.model)
    volume = dataio.load_volume(args.case)
    h, w, _ = volume.image.shape
    volume = dataio.preprocess(volume, crop=(h, w))

    maps = forward_volume(model, volume.image)
    dataio.write_pgm(maps.kappa, args.out)

    labels = segment_volume(model, volume.image, fusion=True).astype(np.uint8)
    stem, _ = os.path.splitext(args.out)
    labels_path = f"{stem}_labels.evt"
    dataio.write_tensor(labels, labels_path)

    print(f"conflict map: {args.out}  (mean kappa {maps.kappa.mean():.4f}, "
          f"{maps.n_conflict} total-conflict pixel(s))")
    print(f"fused labels: {labels_path}")
    return EXIT_OK


_COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "uncertainty": cmd_uncertainty,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (TotalConflictError, DivergenceError) as exc:
        print(f"evseg: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataFormatError, NoLabeledDataError, FileNotFoundError, OSError) as exc:
        print(f"evseg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EvsegError as exc:
        print(f"evseg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
