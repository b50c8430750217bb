"""Matplotlib figures rendered next to the CSV/JSON outputs.

Every report-emitting command also drops a PNG so a run can be inspected
without further tooling; the delimited files remain the machine-readable
interface.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_history_figure(history: list[dict], path) -> None:
    epochs = [row["epoch"] for row in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(epochs, [row["train_loss"] for row in history], color="tab:red")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    ax1.grid(alpha=0.3)
    ax2.plot(epochs, [row["fine_acc"] for row in history], label="fine top-1")
    ax2.plot(epochs, [row["coarse_acc"] for row in history], label="coarse (via fine)")
    ax2.plot(epochs, [row["violation_rate"] for row in history], label="violation rate")
    ax2.set_xlabel("epoch")
    ax2.set_ylim(-0.02, 1.02)
    ax2.grid(alpha=0.3)
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_sweep_figure(rows: list[dict], param: str, path) -> None:
    labels = [str(row["value"]) for row in rows]
    means = np.array([row["mean_fine_top1"] for row in rows])
    stds = np.array([row["std_fine_top1"] for row in rows])
    violations = np.array([row["mean_violation_rate"] for row in rows])
    xs = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.errorbar(xs, means, yerr=stds, marker="o", capsize=3, label="fine top-1")
    ax.plot(xs, violations, marker="s", linestyle="--", label="violation rate")
    ax.set_xticks(xs)
    ax.set_xticklabels(labels)
    ax.set_xlabel(param)
    ax.set_ylabel("fraction")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_confusion_figure(confusion: np.ndarray, fine_names, path) -> None:
    fig, ax = plt.subplots(figsize=(4.6, 4.2))
    im = ax.imshow(confusion, cmap="Blues")
    ax.set_xlabel("predicted fine class")
    ax.set_ylabel("true fine class")
    ax.set_xticks(range(len(fine_names)))
    ax.set_yticks(range(len(fine_names)))
    ax.set_xticklabels(fine_names, rotation=90, fontsize=6)
    ax.set_yticklabels(fine_names, fontsize=6)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_dataset_preview(dataset, tree, path, per_class: int = 1) -> None:
    n_fine = tree.n_fine
    fig, axes = plt.subplots(
        per_class, n_fine, figsize=(1.1 * n_fine, 1.2 * per_class), squeeze=False
    )
    for f in range(n_fine):
        idx = np.nonzero(dataset.fine == f)[0][:per_class]
        for r in range(per_class):
            ax = axes[r][f]
            if r < len(idx):
                ax.imshow(dataset.x[idx[r]][0], cmap="gray")
            ax.set_xticks([])
            ax.set_yticks([])
            if r == 0:
                ax.set_title(tree.fine_names[f], fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
