"""Sweep and ablation cells shared by the CLI and the acceptance suite.

A cell is one (hyperparameter value, seed) training run on a fixed
dataset; sweeps aggregate cells per value into mean/std rows ordered
lexicographically by the value's string form.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .config import RunConfig, parse_ratio
from .data import Dataset
from .errors import InvalidSpec
from .labels import LabelTree
from .metrics import EvalReport
from .network import SbpNetwork
from .trainer import TrainResult, train

SWEEP_PARAMS = ("b", "r")

AGG_FIELDS = ("value", "mean_fine_top1", "std_fine_top1", "mean_violation_rate")
CELL_FIELDS = ("value", "seed", "fine_top1", "violation_rate", "intra_coarse_error_rate")


def train_cell(
    train_set: Dataset, eval_set: Dataset, tree: LabelTree, cfg: RunConfig
) -> TrainResult:
    """Train a fresh network under ``cfg`` and evaluate it."""
    cfg.validate_against(train_set.sample_shape)
    net = SbpNetwork(cfg.trunk, tree.n_coarse, tree.n_fine, seed=cfg.train.seed)
    return train(net, train_set, eval_set, tree, cfg.train)


def set_sweep_value(cfg: RunConfig, param: str, value) -> RunConfig:
    if param == "b":
        penalty = replace(cfg.train.penalty, b=float(value))
    elif param == "r":
        penalty = replace(cfg.train.penalty, r=parse_ratio(value))
    else:
        raise InvalidSpec(f"unknown sweep parameter {param!r}; use one of {SWEEP_PARAMS}")
    return replace(cfg, train=replace(cfg.train, penalty=penalty))


def baseline_config(cfg: RunConfig) -> RunConfig:
    """Single-branch plain-CE ablation: penalty off, coarse branch off."""
    penalty = replace(cfg.train.penalty, b=1.0)
    return replace(cfg, train=replace(cfg.train, penalty=penalty, two_branch=False))


def run_sweep(
    param: str,
    values,
    n_seeds: int,
    cfg: RunConfig,
    train_set: Dataset,
    eval_set: Dataset,
    tree: LabelTree,
    progress=None,
):
    """Train every (value, seed) cell; returns (aggregate rows, cell rows)."""
    if n_seeds < 1:
        raise InvalidSpec(f"need at least one seed, got {n_seeds}")
    if param not in SWEEP_PARAMS:
        raise InvalidSpec(f"unknown sweep parameter {param!r}; use one of {SWEEP_PARAMS}")
    cells = []
    agg = []
    for value in values:
        cell_cfg = set_sweep_value(cfg, param, value)
        fine, violation = [], []
        for k in range(n_seeds):
            seeded = replace(
                cell_cfg, train=replace(cell_cfg.train, seed=cfg.train.seed + k)
            )
            result = train_cell(train_set, eval_set, tree, seeded)
            report: EvalReport = result.final_report
            fine.append(report.fine_top1)
            violation.append(report.violation_rate)
            cells.append(
                {
                    "value": str(value),
                    "seed": seeded.train.seed,
                    "fine_top1": report.fine_top1,
                    "violation_rate": report.violation_rate,
                    "intra_coarse_error_rate": report.intra_coarse_error_rate,
                }
            )
            if progress:
                progress(str(value), seeded.train.seed, report)
        agg.append(
            {
                "value": str(value),
                "mean_fine_top1": float(np.mean(fine)),
                "std_fine_top1": float(np.std(fine)),
                "mean_violation_rate": float(np.mean(violation)),
            }
        )
    agg.sort(key=lambda row: row["value"])
    cells.sort(key=lambda row: (row["value"], row["seed"]))
    return agg, cells


def rows_to_csv(rows: list[dict], fields) -> str:
    lines = [",".join(fields)]
    for row in rows:
        cells = []
        for f in fields:
            v = row[f]
            cells.append(repr(float(v)) if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
