"""Command line interface: batch workflow from data to sweeps.

Commands:

* ``gen-data``  write a synthetic dataset (train/ and eval/ splits)
* ``train``     train a network, write checkpoint + history CSV
* ``eval``      evaluate a checkpoint, write/print the report
* ``gradcheck`` run the finite-difference suite over every layer
* ``sweep``     train per (value, seed) cell and aggregate a CSV

Report paths also render PNG figures next to the delimited outputs
unless ``--no-figures`` is given.  Exit codes: 0 success, 1 validation
error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import figures
from .config import (
    apply_overrides,
    default_run_config,
    load_run_config,
    run_config_from_json_obj,
)
from .data import SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .errors import InvalidSpec, MalformedDocument, NumericalError, SbpError
from .experiments import AGG_FIELDS, CELL_FIELDS, rows_to_csv, run_sweep, train_cell
from .gradcheck import run_suite
from .metrics import EvalReport, evaluate
from .trainer import history_csv, load_checkpoint, save_checkpoint, train


def _load_splits(data_dir):
    data_dir = Path(data_dir)
    train_set, tree = load_dataset(data_dir / "train")
    eval_set, eval_tree = load_dataset(data_dir / "eval")
    if eval_tree != tree:
        raise MalformedDocument("train and eval splits carry different label trees")
    return train_set, eval_set, tree


def _cmd_gen_data(args) -> int:
    if args.spec:
        path = Path(args.spec)
        if not path.is_file():
            raise MalformedDocument(f"missing spec file: {path}")
        try:
            obj = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise MalformedDocument(f"spec is not valid JSON: {exc}") from exc
    else:
        obj = SyntheticSpec().to_json_obj()
    apply_overrides(obj, args.set)
    spec = SyntheticSpec.from_json_obj(obj)
    train_set, eval_set, tree = generate_synthetic(spec)
    out = Path(args.out)
    save_dataset(train_set, tree, out / "train", spec)
    save_dataset(eval_set, tree, out / "eval", spec)
    if args.figures:
        figures.save_dataset_preview(train_set, tree, out / "preview.png", per_class=3)
    print(
        f"wrote {len(train_set)} train / {len(eval_set)} eval samples, "
        f"{tree.n_coarse} coarse x {tree.n_fine} fine classes -> {out}"
    )
    return 0


def _cmd_train(args) -> int:
    train_set, eval_set, tree = _load_splits(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.resume:
        # the checkpoint owns the configuration; --set still applies
        # (typically to extend train.epochs), --config is ignored
        ckpt = load_checkpoint(args.resume, expect_input_shape=train_set.sample_shape)
        if ckpt.tree != tree:
            raise MalformedDocument("checkpoint label tree does not match the dataset")
        obj = {"trunk": ckpt.net.config.to_json_obj(), "train": ckpt.config.to_json_obj()}
        apply_overrides(obj, args.set)
        cfg = run_config_from_json_obj(obj)
        if cfg.trunk != ckpt.net.config:
            raise InvalidSpec("trunk config cannot change when resuming")
        config = cfg.train
        net, start, buffers = ckpt.net, ckpt.epoch, ckpt.momentum_buffers
        prior = args_history_rows(args.resume)
    else:
        from .network import SbpNetwork

        cfg = load_run_config(args.config, args.set)
        cfg.validate_against(train_set.sample_shape)
        config = cfg.train
        net = SbpNetwork(cfg.trunk, tree.n_coarse, tree.n_fine, seed=config.seed)
        start, buffers, prior = 0, None, []
    started = time.perf_counter()
    result = train(net, train_set, eval_set, tree, config, start_epoch=start,
                   momentum_buffers=buffers)
    elapsed = time.perf_counter() - started
    history = prior + result.history
    save_checkpoint(out / "checkpoint.json", net, config, tree, config.epochs,
                    result.momentum_buffers)
    (out / "history.csv").write_text(history_csv(history))
    (out / "resolved_config.json").write_text(json.dumps(cfg.to_json_obj(), indent=2))
    if args.figures:
        figures.save_history_figure(history, out / "history.png")
    final = result.final_report
    print(
        f"trained epochs {start}..{config.epochs - 1} in {elapsed:.1f}s; "
        f"fine_top1={final.fine_top1:.4f} coarse={final.coarse_top1_via_fine:.4f} "
        f"violations={final.violation_rate:.4f} -> {out}"
    )
    return 0


def args_history_rows(resume_path) -> list[dict]:
    """Pick up the history CSV sitting next to a resumed checkpoint."""
    path = Path(resume_path).parent / "history.csv"
    if not path.is_file():
        return []
    rows = []
    lines = path.read_text().strip().splitlines()
    for line in lines[1:]:
        epoch, loss, coarse, fine, violation = line.split(",")
        rows.append(
            {
                "epoch": int(epoch),
                "train_loss": float(loss),
                "coarse_acc": float(coarse),
                "fine_acc": float(fine),
                "violation_rate": float(violation),
            }
        )
    return rows


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    split_dir = Path(args.data) / args.split
    dataset, tree = load_dataset(split_dir)
    if tree != ckpt.tree:
        raise MalformedDocument("checkpoint label tree does not match the dataset")
    if dataset.sample_shape != tuple(ckpt.net.config.input):
        from .errors import ShapeMismatch

        raise ShapeMismatch(
            f"dataset sample shape {dataset.sample_shape} != trunk input {ckpt.net.config.input}"
        )
    report = evaluate(ckpt.net, dataset, tree)
    print(json.dumps(report.to_json_obj(), indent=2))
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_json_obj(), indent=2))
    header = ",".join(EvalReport.CSV_FIELDS)
    row = ",".join(
        repr(float(v)) if isinstance(v, float) else str(v) for v in report.csv_row()
    )
    (out / "report.csv").write_text(header + "\n" + row + "\n")
    if args.figures:
        figures.save_confusion_figure(report.confusion, tree.fine_names, out / "confusion.png")
    return 0


def _cmd_gradcheck(args) -> int:
    started = time.perf_counter()
    reports = run_suite(tolerance=args.tol, seeds=args.seeds, corrupt=args.corrupt)
    for report in reports:
        print(report.line())
    elapsed = time.perf_counter() - started
    failed = [r for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed in {elapsed:.1f}s")
    return 0 if not failed else 2


def _cmd_sweep(args) -> int:
    cfg = load_run_config(args.config, args.set)
    train_set, eval_set, tree = _load_splits(args.data)
    cfg.validate_against(train_set.sample_shape)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if args.param == "b":
        values = [float(v) for v in values]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(value, seed, report):
        print(
            f"[{args.param}={value} seed={seed}] fine_top1={report.fine_top1:.4f} "
            f"violations={report.violation_rate:.4f}",
            flush=True,
        )

    agg, cells = run_sweep(
        args.param, values, args.seeds, cfg, train_set, eval_set, tree, progress=progress
    )
    (out / "sweep.csv").write_text(rows_to_csv(agg, AGG_FIELDS))
    (out / "sweep_cells.csv").write_text(rows_to_csv(cells, CELL_FIELDS))
    if args.figures:
        figures.save_sweep_figure(agg, args.param, out / "sweep.png")
    best = max(agg, key=lambda row: row["mean_fine_top1"])
    print(
        f"best {args.param}={best['value']} mean_fine_top1={best['mean_fine_top1']:.4f} "
        f"-> {out / 'sweep.csv'}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sbpool",
        description="Two-branch bilinear-pooling classifier with hierarchy-aware loss",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic hierarchical dataset")
    p.add_argument("--spec", help="SyntheticSpec JSON file (defaults to the built-in task)")
    p.add_argument("--out", required=True, help="output directory")
    _common_flags(p)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a network on a generated dataset")
    p.add_argument("--config", help="run-config JSON file (defaults used if omitted)")
    p.add_argument("--data", required=True, help="dataset directory (train/ + eval/)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", help="checkpoint file to continue from")
    _common_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset directory (train/ + eval/)")
    p.add_argument("--split", default="eval", choices=("train", "eval"))
    p.add_argument("--out", help="report directory (defaults next to the checkpoint)")
    _common_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument(
        "--corrupt",
        action="store_true",
        help="self-test: corrupt analytic gradients by 1%% and expect failures",
    )
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("sweep", help="train per hyperparameter value and aggregate")
    p.add_argument("--param", required=True, choices=("b", "r"))
    p.add_argument("--values", required=True, help="comma-separated values, e.g. 1.0,2.0 or 1:1,7:3")
    p.add_argument("--seeds", type=int, default=5, help="seeds per value")
    p.add_argument("--config", help="run-config JSON file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _common_flags(p)
    p.set_defaults(func=_cmd_sweep)
    return parser


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override a config key, e.g. --set train.penalty.b=2.5",
    )
    p.add_argument(
        "--no-figures", dest="figures", action="store_false", help="skip PNG rendering"
    )


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except SbpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
