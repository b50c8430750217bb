"""Cross-entropy losses and the hierarchy penalty.

The fine branch trains with a per-sample weighted cross-entropy: a
sample's weight alpha_i jumps from 1 to the penalty value b when the
current fine prediction falls outside the sample's true coarse class.
The coarse branch uses plain cross-entropy, and the two are mixed by a
normalized weight ratio.  alpha is a constant of the backward pass (it
depends on the logits only through the argmax, which is piecewise
constant), so the stated gradients are exact away from argmax switching
surfaces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    IndexOutOfRange,
    InconsistentLabels,
    InvalidSpec,
    NonFiniteValue,
    NonPositiveRatio,
    ShapeMismatch,
)
from .labels import LabelTree


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty value b >= 1 and the coarse:fine loss-weight ratio."""

    b: float = 2.0
    r: tuple[float, float] = (7.0, 3.0)

    def __post_init__(self):
        if not np.isfinite(self.b) or self.b < 1.0:
            raise InvalidSpec(f"penalty b must be >= 1, got {self.b}")
        num, den = self.r
        if not (num > 0.0 and den > 0.0):
            raise NonPositiveRatio(f"ratio components must be positive, got {self.r}")

    def to_json_obj(self) -> dict:
        return {"b": self.b, "r": list(self.r)}


@dataclass(frozen=True)
class PenaltyMask:
    """Per-sample loss weights, each 1 or b."""

    alpha: np.ndarray


class BatchLabels:
    """Paired coarse/fine label vectors for one batch."""

    def __init__(self, coarse, fine, tree: LabelTree | None = None):
        self.coarse = np.asarray(coarse, dtype=np.int64)
        self.fine = np.asarray(fine, dtype=np.int64)
        if self.coarse.ndim != 1 or self.coarse.shape != self.fine.shape:
            raise ShapeMismatch(
                f"label vectors must be equal-length 1-D, got {self.coarse.shape} and {self.fine.shape}"
            )
        if tree is not None:
            self.validate(tree)

    @property
    def n(self) -> int:
        return self.coarse.shape[0]

    def validate(self, tree: LabelTree) -> None:
        if self.fine.size and (self.fine.min() < 0 or self.fine.max() >= tree.n_fine):
            raise IndexOutOfRange("fine label out of range")
        if self.coarse.size and (self.coarse.min() < 0 or self.coarse.max() >= tree.n_coarse):
            raise IndexOutOfRange("coarse label out of range")
        parents = np.asarray(tree.parent)[self.fine]
        bad = np.nonzero(parents != self.coarse)[0]
        if bad.size:
            i = int(bad[0])
            raise InconsistentLabels(
                f"sample {i}: fine label {int(self.fine[i])} has parent "
                f"{int(parents[i])}, not coarse label {int(self.coarse[i])}"
            )


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; sums to 1 within 1e-12.

    Outputs are strictly positive wherever exp is representable; an
    entry more than ~745 below the row max underflows to exactly 0.
    """
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFiniteValue("softmax input contains non-finite values")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(z: np.ndarray, label: int):
    """Single-sample -log softmax(z)[label]; returns (loss, dloss/dz)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ShapeMismatch(f"cross_entropy expects a logit vector, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise NonFiniteValue("cross_entropy input contains non-finite values")
    if not 0 <= label < z.shape[0]:
        raise IndexOutOfRange(f"label {label} not in [0, {z.shape[0]})")
    a = softmax(z)
    loss = -_log_softmax(z)[label]
    dz = a.copy()
    dz[label] -= 1.0
    return float(loss), dz


def cross_entropy_batch(z: np.ndarray, labels, reduction: str = "mean"):
    """Batched cross-entropy over logit rows; returns (loss, dloss/dz)."""
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ShapeMismatch(f"bad shapes: logits {z.shape}, labels {labels.shape}")
    if not np.all(np.isfinite(z)):
        raise NonFiniteValue("cross_entropy input contains non-finite values")
    if labels.size and (labels.min() < 0 or labels.max() >= z.shape[1]):
        raise IndexOutOfRange("label out of range")
    n = z.shape[0]
    rows = np.arange(n)
    per_sample = -_log_softmax(z)[rows, labels]
    dz = softmax(z)
    dz[rows, labels] -= 1.0
    if reduction == "mean":
        return float(per_sample.sum() / n), dz / n
    if reduction == "sum":
        return float(per_sample.sum()), dz
    raise InvalidSpec(f"unknown reduction {reduction!r}")


def penalty_mask(z_fine: np.ndarray, labels: BatchLabels, tree: LabelTree, b: float) -> PenaltyMask:
    """alpha_i = b where the argmax fine prediction leaves the true coarse class.

    Argmax ties resolve to the lowest index.
    """
    z_fine = np.asarray(z_fine, dtype=np.float64)
    if z_fine.ndim != 2 or z_fine.shape != (labels.n, tree.n_fine):
        raise ShapeMismatch(
            f"fine logits shape {z_fine.shape} != ({labels.n}, {tree.n_fine})"
        )
    if not np.isfinite(b) or b < 1.0:
        raise InvalidSpec(f"penalty b must be >= 1, got {b}")
    predicted = z_fine.argmax(axis=1)
    predicted_parent = np.asarray(tree.parent)[predicted]
    alpha = np.where(predicted_parent != labels.coarse, float(b), 1.0)
    return PenaltyMask(alpha=alpha)


def generalized_cross_entropy(
    z_fine: np.ndarray,
    labels: BatchLabels,
    tree: LabelTree,
    b: float,
    reduction: str = "mean",
):
    """Penalty-weighted cross-entropy on the fine branch.

    Per sample: alpha_i * (-log softmax(z_i)[fine_i]), with alpha from
    :func:`penalty_mask`.  Returns (loss, dloss/dz); the gradient treats
    alpha as constant.  ``reduction="sum"`` is the literal batch sum,
    ``"mean"`` divides both loss and gradient by the batch size.
    """
    z_fine = np.asarray(z_fine, dtype=np.float64)
    labels.validate(tree)
    alpha = penalty_mask(z_fine, labels, tree, b).alpha
    if not np.all(np.isfinite(z_fine)):
        raise NonFiniteValue("logits contain non-finite values")
    n = labels.n
    rows = np.arange(n)
    per_sample = -_log_softmax(z_fine)[rows, labels.fine]
    dz = softmax(z_fine)
    dz[rows, labels.fine] -= 1.0
    dz *= alpha[:, None]
    total = float((alpha * per_sample).sum())
    if reduction == "mean":
        return total / n, dz / n
    if reduction == "sum":
        return total, dz
    raise InvalidSpec(f"unknown reduction {reduction!r}")


def loss_weights(r) -> tuple[float, float]:
    """Normalize the ratio (num, den) to weights summing to 1."""
    num, den = float(r[0]), float(r[1])
    if not (num > 0.0 and den > 0.0) or not (np.isfinite(num) and np.isfinite(den)):
        raise NonPositiveRatio(f"ratio components must be positive, got {r}")
    return num / (num + den), den / (num + den)


def combined_loss(loss_coarse: float, loss_fine: float, r) -> float:
    """Ratio-weighted mix of the coarse and fine losses.

    r = (num, den) gives coarse weight num/(num+den) and fine weight
    den/(num+den); rescaling the ratio leaves the result unchanged.
    """
    w_coarse, w_fine = loss_weights(r)
    return w_coarse * float(loss_coarse) + w_fine * float(loss_fine)
