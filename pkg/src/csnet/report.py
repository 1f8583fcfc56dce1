"""Figure rendering for the CLI report paths.

Figures are companions to the delimited artifacts, never inputs to
anything; they carry no checksummed state.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_training_curves(history, path: str | Path) -> None:
    epochs = [r.epoch for r in history.records]
    fig, ax1 = plt.subplots(figsize=(6.0, 3.6))
    ax1.plot(epochs, [r.train_loss for r in history.records], color="tab:blue", label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(epochs, [r.val_error for r in history.records], color="tab:red", label="val error")
    ax2.set_ylabel("validation triplet error", color="tab:red")
    ax2.set_ylim(0.0, max(0.55, max(r.val_error for r in history.records) * 1.05))
    ax2.axvline(history.best_epoch, color="gray", linestyle=":", linewidth=1)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_mask_heatmap(matrix: np.ndarray, condition_names: Sequence[str], path: str | Path) -> None:
    """Rectified mask values, one row per condition."""
    fig, ax = plt.subplots(figsize=(7.0, 0.6 * len(condition_names) + 1.4))
    im = ax.imshow(matrix.T, aspect="auto", cmap="viridis", interpolation="nearest")
    ax.set_yticks(range(len(condition_names)))
    ax.set_yticklabels(condition_names)
    ax.set_xlabel("embedding dimension")
    fig.colorbar(im, ax=ax, label="mask value")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_condition_errors(report, condition_names: Sequence[str], path: str | Path) -> None:
    conds = sorted(report.per_condition_error)
    names = [condition_names[c] if c < len(condition_names) else str(c) for c in conds]
    errs = [report.per_condition_error[c] for c in conds]
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ax.bar(names, errs, color="tab:blue")
    ax.axhline(report.overall_error, color="tab:red", linestyle="--", linewidth=1, label="overall")
    ax.axhline(0.5, color="gray", linestyle=":", linewidth=1, label="chance")
    ax.set_ylabel("triplet error")
    ax.set_ylim(0, 0.6)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_budget_curves(rows, path: str | Path) -> None:
    """Error against triplet budget, one line per variant."""
    variants = sorted({r.variant for r in rows})
    fig, ax = plt.subplots(figsize=(5.6, 3.6))
    for v in variants:
        pts = sorted((r.budget, r.error) for r in rows if r.variant == v)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=v)
    ax.set_xscale("log")
    ax.set_xlabel("training triplets per condition")
    ax.set_ylabel("test triplet error")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
