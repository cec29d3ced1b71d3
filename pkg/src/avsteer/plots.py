"""SVG figures: training curves and the prediction-flip bar chart."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .analysis import FlipTable  # noqa: E402

plt.rcParams["svg.hashsalt"] = "avsteer"  # stable element ids across runs


def loss_curves(history: Sequence[dict], path: str | Path) -> Path:
    epochs = [h["epoch"] for h in history]
    fig, (ax_l, ax_a) = plt.subplots(1, 2, figsize=(9, 3.2))
    for key in ("l_total", "l_cls", "l_av"):
        ax_l.plot(epochs, [h[key] for h in history], label=key)
    ax_l.set_xlabel("epoch")
    ax_l.set_ylabel("loss")
    ax_l.legend(frameon=False)
    ax_a.plot(epochs, [h["train_accuracy"] for h in history], label="train")
    if any("val_accuracy" in h for h in history):
        ax_a.plot(epochs, [h.get("val_accuracy", float("nan")) for h in history], label="val")
    ax_a.set_xlabel("epoch")
    ax_a.set_ylabel("accuracy")
    ax_a.set_ylim(0, 1)
    ax_a.legend(frameon=False)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def flip_bars(table: FlipTable, path: str | Path) -> Path:
    """Per-class helps/hurts bars next to the overall counts."""
    groups = list(table.per_class.items()) + [("all", table)]
    names = [g for g, _ in groups]
    helps = [c.helps for _, c in groups]
    hurts = [c.hurts for _, c in groups]
    xs = range(len(groups))
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar([x - 0.2 for x in xs], helps, width=0.4, label="audio helps", color="#3a7d44")
    ax.bar([x + 0.2 for x in xs], hurts, width=0.4, label="audio hurts", color="#b23a48")
    for x, h, u in zip(xs, helps, hurts):
        ax.text(x - 0.2, h, str(h), ha="center", va="bottom", fontsize=8)
        ax.text(x + 0.2, u, str(u), ha="center", va="bottom", fontsize=8)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(names)
    ax.set_ylabel("clips")
    ax.legend(frameon=False)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
