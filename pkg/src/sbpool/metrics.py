"""Accuracy and hierarchy-aware error metrics over a frozen network.

Test-time predictions come from the fine branch only, so coarse accuracy
is derived from the predicted fine class's parent; the coarse head's own
accuracy is reported separately as a training diagnostic.  Errors split
into violations (predicted parent differs from the true coarse class)
and intra-coarse errors, which together with correct predictions
partition the evaluation set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import EmptyDataset
from .labels import LabelTree

EVAL_CHUNK = 256


@dataclass
class EvalReport:
    fine_top1: float
    coarse_top1_via_fine: float
    coarse_top1_head: float
    violation_rate: float
    intra_coarse_error_rate: float
    confusion: np.ndarray  # (n_fine, n_fine): rows true, cols predicted
    n_samples: int

    def to_json_obj(self) -> dict:
        return {
            "fine_top1": self.fine_top1,
            "coarse_top1_via_fine": self.coarse_top1_via_fine,
            "coarse_top1_head": self.coarse_top1_head,
            "violation_rate": self.violation_rate,
            "intra_coarse_error_rate": self.intra_coarse_error_rate,
            "n_samples": self.n_samples,
            "confusion": self.confusion.tolist(),
        }

    CSV_FIELDS = (
        "fine_top1",
        "coarse_top1_via_fine",
        "coarse_top1_head",
        "violation_rate",
        "intra_coarse_error_rate",
        "n_samples",
    )

    def csv_row(self) -> list:
        return [getattr(self, f) for f in self.CSV_FIELDS]


def evaluate(net, dataset: Dataset, tree: LabelTree) -> EvalReport:
    """Deterministic evaluation; argmax ties resolve to the lowest index."""
    n = len(dataset)
    if n == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    pred_fine = np.empty(n, dtype=np.int64)
    pred_coarse_head = np.empty(n, dtype=np.int64)
    for start in range(0, n, EVAL_CHUNK):
        chunk = slice(start, min(start + EVAL_CHUNK, n))
        fw = net.forward_train(dataset.x[chunk])
        pred_fine[chunk] = fw.z_fine.argmax(axis=1)
        pred_coarse_head[chunk] = fw.z_coarse.argmax(axis=1)
    parents = np.asarray(tree.parent)
    pred_parent = parents[pred_fine]
    correct = pred_fine == dataset.fine
    violation = ~correct & (pred_parent != dataset.coarse)
    intra = ~correct & (pred_parent == dataset.coarse)
    confusion = np.zeros((tree.n_fine, tree.n_fine), dtype=np.int64)
    np.add.at(confusion, (dataset.fine, pred_fine), 1)
    return EvalReport(
        fine_top1=float(correct.sum() / n),
        coarse_top1_via_fine=float((pred_parent == dataset.coarse).sum() / n),
        coarse_top1_head=float((pred_coarse_head == dataset.coarse).sum() / n),
        violation_rate=float(violation.sum() / n),
        intra_coarse_error_rate=float(intra.sum() / n),
        confusion=confusion,
        n_samples=n,
    )
