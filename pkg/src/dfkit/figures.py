"""Report figures rendered straight to PNG files.

Uses matplotlib's object API with an Agg canvas so rendering needs no
display and touches no global pyplot state.
"""

from __future__ import annotations

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .errors import DataError
from .metrics import RocCurve


def save_roc_figure(path, curve: RocCurve, title: str | None = None) -> None:
    """Plot the ROC polyline against the chance diagonal and save a PNG."""
    fig = Figure(figsize=(5.0, 5.0))
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(111)
    fpr = [p.fpr for p in curve.points]
    tpr = [p.tpr for p in curve.points]
    ax.plot(fpr, tpr, marker=".", lw=1.5, label="ROC")
    ax.plot([0.0, 1.0], [0.0, 1.0], ls="--", lw=1.0, color="gray", label="chance")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(title or "ROC")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right")
    fig.savefig(path, dpi=120, format="png")


def save_history_figure(path, stats, title: str | None = None) -> None:
    """Plot train loss (left axis) and validation AUC (right axis) per epoch."""
    if len(stats) == 0:
        raise DataError("no epoch stats to plot")
    epochs = [s.epoch for s in stats]
    fig = Figure(figsize=(6.0, 4.0))
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(111)
    ax.plot(epochs, [s.train_loss for s in stats], color="tab:red", marker="o")
    ax.set_xlabel("epoch")
    ax.set_ylabel("train loss", color="tab:red")
    ax.tick_params(axis="y", labelcolor="tab:red")
    ax.grid(True, alpha=0.3)
    twin = ax.twinx()
    twin.plot(epochs, [s.val_auc for s in stats], color="tab:blue", marker="s")
    twin.set_ylabel("val AUC", color="tab:blue")
    twin.tick_params(axis="y", labelcolor="tab:blue")
    ax.set_title(title or "training history")
    fig.savefig(path, dpi=120, format="png")
