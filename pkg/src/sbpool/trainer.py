"""SGD-with-momentum training of the two-branch network.

The loop is fully deterministic given (config, dataset, seed): batches
come from epoch-seeded shuffles, the loss mixes the coarse branch's
cross-entropy with the fine branch's penalty-weighted cross-entropy, and
both adjoints are injected into a single backward pass.  An optional
head-only warmup phase trains the two classifier heads with the trunks
frozen before end-to-end training.  Checkpoints round-trip every
parameter, momentum buffer, and config bit-exactly through JSON, so a
resumed run reproduces the uninterrupted one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .backbone import TrunkConfig
from .data import Dataset, make_batches
from .errors import (
    InvalidSpec,
    MalformedDocument,
    NonFiniteLoss,
    NonFiniteValue,
    ShapeMismatch,
)
from .labels import LabelTree, tree_from_json_obj
from .losses import (
    BatchLabels,
    PenaltyConfig,
    cross_entropy_batch,
    generalized_cross_entropy,
    loss_weights,
)
from .metrics import EvalReport, evaluate
from .network import SbpNetwork

CHECKPOINT_FORMAT = "sbpool-checkpoint-v1"

HISTORY_FIELDS = ("epoch", "train_loss", "coarse_acc", "fine_acc", "violation_rate")


@dataclass(frozen=True)
class LrDecay:
    """Multiply the learning rate by ``factor`` every ``every`` epochs."""

    factor: float = 1.0
    every: int = 30

    def __post_init__(self):
        if self.factor <= 0 or self.every < 1:
            raise InvalidSpec(f"bad lr decay {self}")

    def at(self, base_lr: float, epoch: int) -> float:
        return base_lr * self.factor ** (epoch // self.every)


@dataclass(frozen=True)
class TwoStep:
    """Head-only warmup: train the classifiers with frozen trunks first."""

    head_epochs: int
    head_lr: float

    def __post_init__(self):
        if self.head_epochs < 0 or self.head_lr <= 0:
            raise InvalidSpec(f"bad two-step config {self}")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.5
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 30
    batch_size: int = 32
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    lr_decay: LrDecay = field(default_factory=LrDecay)
    two_step: TwoStep | None = None
    seed: int = 0
    two_branch: bool = True  # False: fine branch + plain CE only (ablation baseline)
    reduction: str = "mean"

    def __post_init__(self):
        # lr=0 is allowed as a diagnostic no-op run (history still recorded)
        if self.lr < 0 or not np.isfinite(self.lr):
            raise InvalidSpec(f"lr must be >= 0, got {self.lr}")
        if not (0.0 <= self.momentum < 1.0):
            raise InvalidSpec(f"momentum must be in [0,1), got {self.momentum}")
        if self.weight_decay < 0:
            raise InvalidSpec(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidSpec("epochs and batch_size must be >= 1")
        if self.reduction not in ("mean", "sum"):
            raise InvalidSpec(f"unknown reduction {self.reduction!r}")

    def to_json_obj(self) -> dict:
        return {
            "lr": self.lr,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "penalty": self.penalty.to_json_obj(),
            "lr_decay": {"factor": self.lr_decay.factor, "every": self.lr_decay.every},
            "two_step": (
                {"head_epochs": self.two_step.head_epochs, "head_lr": self.two_step.head_lr}
                if self.two_step
                else None
            ),
            "seed": self.seed,
            "two_branch": self.two_branch,
            "reduction": self.reduction,
        }

    @staticmethod
    def from_json_obj(obj) -> "TrainConfig":
        try:
            penalty = obj.get("penalty", {})
            r = penalty.get("r", [7, 3])
            return TrainConfig(
                lr=obj.get("lr", 0.5),
                momentum=obj.get("momentum", 0.9),
                weight_decay=obj.get("weight_decay", 0.0),
                epochs=obj.get("epochs", 30),
                batch_size=obj.get("batch_size", 32),
                penalty=PenaltyConfig(b=penalty.get("b", 2.0), r=(float(r[0]), float(r[1]))),
                lr_decay=LrDecay(**obj.get("lr_decay", {})) if obj.get("lr_decay") else LrDecay(),
                two_step=TwoStep(**obj["two_step"]) if obj.get("two_step") else None,
                seed=obj.get("seed", 0),
                two_branch=obj.get("two_branch", True),
                reduction=obj.get("reduction", "mean"),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidSpec(f"bad train config: {exc}") from exc


def sgd_step(params, momentum_buffers: dict, lr: float, momentum: float, weight_decay: float):
    """v <- momentum*v + (g + wd*w);  w <- w - lr*v."""
    for name, p in params:
        buf = momentum_buffers.get(name)
        if buf is None:
            buf = np.zeros_like(p.value)
            momentum_buffers[name] = buf
        if buf.shape != p.value.shape:
            raise ShapeMismatch(f"momentum buffer {name} shape {buf.shape} != {p.value.shape}")
        g = p.grad + weight_decay * p.value if weight_decay else p.grad
        buf *= momentum
        buf += g
        p.value -= lr * buf


@dataclass
class TrainResult:
    net: SbpNetwork
    history: list[dict]
    momentum_buffers: dict
    final_report: EvalReport | None


def train(
    net: SbpNetwork,
    train_set: Dataset,
    eval_set: Dataset,
    tree: LabelTree,
    config: TrainConfig,
    start_epoch: int = 0,
    momentum_buffers: dict | None = None,
) -> TrainResult:
    """Run epochs ``start_epoch..config.epochs``; returns history rows.

    History records, per epoch: mean train loss, eval fine accuracy,
    eval coarse accuracy via the predicted fine class's parent, and the
    violation rate.
    """
    BatchLabels(train_set.coarse, train_set.fine, tree)
    BatchLabels(eval_set.coarse, eval_set.fine, tree)
    w_coarse, w_fine = loss_weights(config.penalty.r)
    buffers = momentum_buffers if momentum_buffers is not None else {}
    history: list[dict] = []
    report = None
    for epoch in range(start_epoch, config.epochs):
        head_phase = config.two_step is not None and epoch < config.two_step.head_epochs
        base_lr = config.two_step.head_lr if head_phase else config.lr
        lr = config.lr_decay.at(base_lr, epoch)
        params = net.head_parameters() if head_phase else net.named_parameters()
        total_loss = 0.0
        for batch in make_batches(train_set, config.batch_size, config.seed, epoch):
            labels = BatchLabels(batch.coarse, batch.fine)
            net.zero_grad()
            try:
                fw = net.forward_train(batch.x)
                loss_f, dz_f = generalized_cross_entropy(
                    fw.z_fine, labels, tree, b=config.penalty.b, reduction=config.reduction
                )
                if config.two_branch:
                    loss_c, dz_c = cross_entropy_batch(
                        fw.z_coarse, labels.coarse, config.reduction
                    )
                    loss = w_coarse * loss_c + w_fine * loss_f
                else:
                    loss = loss_f
            except NonFiniteValue as exc:
                raise NonFiniteLoss(
                    f"non-finite values at epoch {epoch} (lr={lr}): {exc}"
                ) from exc
            if not np.isfinite(loss):
                raise NonFiniteLoss(
                    f"non-finite training loss at epoch {epoch} (lr={lr}); aborting"
                )
            if config.two_branch:
                net.backward(fw.cache, w_coarse * dz_c, w_fine * dz_f)
            else:
                net.backward(fw.cache, None, dz_f)
            total_loss += loss * len(batch)
            sgd_step(params, buffers, lr, config.momentum, config.weight_decay)
        report = evaluate(net, eval_set, tree)
        history.append(
            {
                "epoch": epoch,
                "train_loss": total_loss / len(train_set),
                "coarse_acc": report.coarse_top1_via_fine,
                "fine_acc": report.fine_top1,
                "violation_rate": report.violation_rate,
            }
        )
    return TrainResult(net, history, buffers, report)


def history_csv(history: list[dict]) -> str:
    lines = [",".join(HISTORY_FIELDS)]
    for row in history:
        lines.append(
            ",".join(
                str(row[f]) if f == "epoch" else repr(float(row[f])) for f in HISTORY_FIELDS
            )
        )
    return "\n".join(lines) + "\n"


# --- checkpointing -------------------------------------------------------

def _blob(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def _unblob(obj) -> np.ndarray:
    a = np.array(obj["data"], dtype=np.float64).reshape(obj["shape"])
    return np.ascontiguousarray(a)


def save_checkpoint(
    path,
    net: SbpNetwork,
    config: TrainConfig,
    tree: LabelTree,
    epoch: int,
    momentum_buffers: dict,
) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "epoch": epoch,
        "seed": config.seed,
        "trunk_config": net.config.to_json_obj(),
        "train_config": config.to_json_obj(),
        "label_tree": tree.to_json_obj(),
        "n_coarse": net.n_coarse,
        "n_fine": net.n_fine,
        "params": {name: _blob(p.value) for name, p in net.named_parameters()},
        "momentum": {name: _blob(buf) for name, buf in sorted(momentum_buffers.items())},
    }
    Path(path).write_text(json.dumps(doc))


@dataclass
class Checkpoint:
    net: SbpNetwork
    config: TrainConfig
    tree: LabelTree
    epoch: int
    momentum_buffers: dict


def load_checkpoint(path, expect_input_shape=None) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise MalformedDocument(f"missing checkpoint file: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"checkpoint is not valid JSON: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise MalformedDocument(f"unknown checkpoint format {doc.get('format')!r}")
    try:
        trunk = TrunkConfig.from_json_obj(doc["trunk_config"])
        config = TrainConfig.from_json_obj(doc["train_config"])
        tree = tree_from_json_obj(doc["label_tree"])
        net = SbpNetwork(trunk, int(doc["n_coarse"]), int(doc["n_fine"]), seed=config.seed)
        params = doc["params"]
        for name, p in net.named_parameters():
            if name not in params:
                raise MalformedDocument(f"checkpoint missing parameter {name}")
            value = _unblob(params[name])
            if value.shape != p.value.shape:
                raise ShapeMismatch(
                    f"parameter {name}: checkpoint shape {value.shape} != {p.value.shape}"
                )
            p.value[...] = value
        buffers = {name: _unblob(blob) for name, blob in doc["momentum"].items()}
        epoch = int(doc["epoch"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedDocument(f"bad checkpoint: {exc}") from exc
    if tree.n_fine != net.n_fine or tree.n_coarse != net.n_coarse:
        raise ShapeMismatch("checkpoint label tree does not match head widths")
    if expect_input_shape is not None and tuple(expect_input_shape) != tuple(trunk.input):
        raise ShapeMismatch(
            f"checkpoint trunk input {trunk.input} != dataset sample shape {tuple(expect_input_shape)}"
        )
    return Checkpoint(net, config, tree, epoch, buffers)
