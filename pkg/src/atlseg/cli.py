"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .adapter import VARIANT_NAMES
from .checks import TOLERANCE, run_suite
from .config import PRESETS, ConfigError, RunConfig, config_from_dict, load_run_config
from .data import DataError, read_netpbm, write_pgm
from .decoder import predict_mask
from .metrics import MetricsReport, format_table
from .model import SegModel, closed_form_counts
from .runner import ablation_csv, ablation_table, build_model, load_splits, run_ablation
from .serialize import model_config_to_dict
from .train import (
    CheckpointError,
    count_params,
    evaluate,
    history_csv,
    load_checkpoint,
    predict_logits,
    save_checkpoint,
    train,
)
from .train.params import apply_freeze_policy

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

CHECKPOINT_NAME = "checkpoint.atls"


class UsageError(Exception):
    """Bad input from the command line; exit code 2."""


def _say(text: str = "") -> None:
    print(text, flush=True)


def _run_config(args) -> RunConfig:
    return load_run_config(args.config, preset=getattr(args, "preset", None), seed=getattr(args, "seed", None))


def _output_dir(args, run: RunConfig) -> Path:
    out = Path(args.output_dir or run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _metrics_csv(report: MetricsReport, label: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("split", *MetricsReport.CSV_HEADER))
    w.writerow((label, *(repr(v) for v in report.csv_values())))
    return buf.getvalue()


def _check_trainable(run: RunConfig) -> None:
    if run.preset == "vitl-shape":
        raise UsageError("the vitl-shape preset is for parameter counting only; training it is not supported")


def cmd_train(args) -> int:
    run = _run_config(args)
    _check_trainable(run)
    out = _output_dir(args, run)
    (out / "config.toml").write_text(run.to_toml())
    train_set, val_set = load_splits(run)
    model = build_model(run)
    report = count_params(model)
    _say(f"train {len(train_set)} / val {len(val_set)} samples; trainable {report.trainable} of {report.total}")

    def progress(r):
        _say(f"epoch {r.epoch:3d}  lr {r.lr:.3e}  train_loss {r.train_loss:.5f}  "
             f"val_loss {r.val_loss:.5f}  val_MIoU {r.val.miou:.4f}")

    result = train(model, train_set, val_set, run.train_config(), on_epoch=progress)
    (out / "history.csv").write_text(history_csv(result.history))
    final = result.history[-1].val
    (out / "metrics.csv").write_text(_metrics_csv(final, "val"))
    save_checkpoint(out / CHECKPOINT_NAME, model, result.state, extra={"run": run.to_dict()})
    _say(format_table([(run.adapter.variant, final)]))
    _say(f"wrote {out / CHECKPOINT_NAME}, history.csv, metrics.csv, config.toml ({result.seconds:.1f}s)")
    return EXIT_OK


def _load(checkpoint: str) -> tuple[SegModel, dict]:
    try:
        model, _, header = load_checkpoint(checkpoint)
    except FileNotFoundError:
        raise UsageError(f"checkpoint {checkpoint} not found") from None
    except CheckpointError as exc:
        raise UsageError(f"cannot load checkpoint {checkpoint}: {exc}") from None
    return model, header


def cmd_eval(args) -> int:
    model, header = _load(args.checkpoint)
    if args.config:
        run = load_run_config(args.config, seed=args.seed)
        if model_config_to_dict(run.model_config()) != header["model"]:
            raise UsageError(f"model in {args.config} does not match checkpoint {args.checkpoint}")
    else:
        run = config_from_dict(header["extra"].get("run", {}))
    train_set, val_set = load_splits(run)
    dataset = {"train": train_set, "val": val_set}[args.split]
    _, report, loss = evaluate(model, dataset, run.train_config())
    _say(format_table([(args.split, report)]))
    _say(f"loss {loss!r}")
    text = _metrics_csv(report, args.split)
    if args.out:
        Path(args.out).write_text(text)
    else:
        _say(text.rstrip())
    return EXIT_OK


def cmd_predict(args) -> int:
    model, _ = _load(args.checkpoint)
    size = model.config.encoder.image_size
    try:
        raw, maxval = read_netpbm(args.image)
    except DataError as exc:
        raise UsageError(str(exc)) from None
    if raw.ndim != 3:
        raise UsageError(f"{args.image}: expected an RGB (P6) image, got a single-channel image")
    if raw.shape[:2] != (size, size):
        raise UsageError(f"{args.image} is {raw.shape[1]}x{raw.shape[0]}; the checkpoint expects {size}x{size}")
    image = raw.astype(np.float64).transpose(2, 0, 1)[None] / maxval
    mask = predict_mask(predict_logits(model, image), threshold=args.threshold)[0]
    write_pgm(args.out, mask * 255)
    _say(f"wrote {args.out} ({int(mask.sum())} of {mask.size} pixels foreground)")
    return EXIT_OK


def cmd_count_params(args) -> int:
    run = _run_config(args)
    model = SegModel(run.model_config(), shape_only=True)
    apply_freeze_policy(model)
    if args.all_trainable:
        for p in model.parameters():
            p.requires_grad = True
    for group, n in closed_form_counts(model.config).items():
        _say(f"{group}={n}")
    _say(count_params(model).format())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results, seconds = run_suite()
    width = max(len(r.family) for r in results)
    for r in results:
        _say(f"{r.family.ljust(width)}  worst_rel_err {r.worst:.3e}  {'PASS' if r.passed else 'FAIL'}")
    failed = [r.family for r in results if not r.passed]
    _say(f"{len(results) - len(failed)}/{len(results)} families below {TOLERANCE:g} in {seconds:.1f}s")
    return EXIT_OK if not failed else EXIT_RUNTIME


def cmd_ablate(args) -> int:
    run = _run_config(args)
    _check_trainable(run)
    variants = tuple(args.variants or run.ablate.variants)
    unknown = [v for v in variants if v not in VARIANT_NAMES]
    if unknown:
        raise UsageError(f"unknown variants {unknown}; valid names: {', '.join(VARIANT_NAMES)}")
    seeds = tuple(args.seeds or run.ablate.seeds)
    out = _output_dir(args, run)
    (out / "config.toml").write_text(run.to_toml())

    def progress(row):
        status = f"MIoU {row.metrics.miou:.4f}" if row.ok else f"FAILED {row.error}"
        _say(f"{row.variant:<15} seed {row.seed:<4} {status}  ({row.seconds:.1f}s)")

    rows = run_ablation(run, variants, seeds, jobs=args.jobs, on_row=progress)
    (out / "ablation.csv").write_text(ablation_csv(rows))
    table = ablation_table(rows)
    (out / "ablation.txt").write_text(table + "\n")
    _say(table)
    return EXIT_OK if all(r.ok for r in rows) else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="atlseg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p, preset=True):
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--seed", type=int, help="override the run seed")
        if preset:
            p.add_argument("--preset", choices=PRESETS, help="base configuration preset")
        return p

    p = with_config(sub.add_parser("train", help="train adapters and decoder, write checkpoint and history"))
    p.add_argument("--output-dir", help="override output_dir")
    p.set_defaults(func=cmd_train)

    p = with_config(sub.add_parser("eval", help="evaluate a checkpoint on its dataset split"), preset=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--out", help="write the metrics CSV here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write a binary mask for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="P6 image at the model resolution")
    p.add_argument("--out", required=True, help="output P5 mask (0/255)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_predict)

    p = with_config(sub.add_parser("ablate", help="train and compare the adapter variants"))
    p.add_argument("--variants", nargs="+", help="subset of variants (default: all nine)")
    p.add_argument("--seeds", nargs="+", type=int, help="seeds (default: ablate.seeds)")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--output-dir", help="override output_dir")
    p.set_defaults(func=cmd_ablate)

    p = with_config(sub.add_parser("count-params", help="report total and trainable parameter counts"))
    p.add_argument("--all-trainable", action="store_true", help="count every parameter as trainable")
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and a tiny model loss")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, UsageError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
