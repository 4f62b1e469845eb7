"""Figure rendering for the CLI report path.

Matplotlib is imported lazily here and nowhere else, so the core library
stays plotting-free. Every renderer writes a PNG next to the corresponding
CSV artifact.
"""

from __future__ import annotations

import numpy as np


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_train_log(log, path) -> None:
    """Loss curves plus training accuracy on a twin axis."""
    plt = _plt()
    epochs = [r.epoch for r in log.records]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(epochs, [r.total_loss for r in log.records], label="total loss", color="tab:blue")
    ax.plot(epochs, [r.ce_loss for r in log.records], label="cross-entropy", color="tab:orange", ls="--")
    if any(r.kd_loss != 0 for r in log.records):
        ax.plot(epochs, [r.kd_loss for r in log.records], label="distillation", color="tab:green", ls=":")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    twin = ax.twinx()
    twin.plot(epochs, [r.train_acc for r in log.records], color="tab:red", alpha=0.6, label="train accuracy")
    twin.set_ylabel("train accuracy")
    twin.set_ylim(0, 1.02)
    handles, labels = ax.get_legend_handles_labels()
    h2, l2 = twin.get_legend_handles_labels()
    ax.legend(handles + h2, labels + l2, loc="center right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_eval(report, labels, path) -> None:
    """Overall and per-class accuracy bars for one inference report."""
    plt = _plt()
    labels = np.asarray(labels)
    classes = np.unique(labels)
    per_class = [float((report.predictions[labels == c] == c).mean()) for c in classes]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([f"class {c}" for c in classes], per_class, color="tab:blue", alpha=0.8)
    ax.axhline(report.accuracy, color="tab:red", ls="--", label=f"overall {report.accuracy:.3f}")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("accuracy")
    ax.set_title(f"mechanism: {report.mechanism}, n_test={report.n_test}, {report.wall_ms:.0f} ms")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_sweep(rows, path) -> None:
    """Accuracy versus temperature, one line per sparsity value."""
    plt = _plt()
    rows = [(float(t), int(s), float(a)) for t, s, a in rows]
    sparsities = sorted({s for _, s, _ in rows})
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for s in sparsities:
        pts = sorted((t, a) for t, q, a in rows if q == s)
        ax.plot([t for t, _ in pts], [a for _, a in pts], marker="o", label=f"s = {s}")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("temperature")
    ax.set_ylabel("test accuracy")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_graph(affinity: np.ndarray, path) -> None:
    """Heatmap of one batch's symmetrized learned affinities."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5.5, 5))
    image = ax.imshow(affinity, cmap="viridis")
    ax.set_xlabel("node")
    ax.set_ylabel("node")
    fig.colorbar(image, ax=ax, shrink=0.85, label="affinity")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
