"""Figures written next to the CSV reports (training curves, ablation bars, confusion matrix)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def _figsize(scale=1.0, ratio=None):
    ratio = ratio or (np.sqrt(5.0) - 1.0) / 2.0
    width = 5.5 * scale
    return width, width * ratio


def plot_training(history, path):
    """Loss and top-1 accuracy per epoch."""
    epochs = [r["epoch"] for r in history]
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=_figsize(1.4, 0.4))
        ax1.plot(epochs, [r["train_loss"] for r in history], color="k", lw=1.2)
        ax1.set_xlabel("epoch")
        ax1.set_ylabel("train NLL")
        ax2.plot(epochs, [r["train_top1"] for r in history], label="train", lw=1.2)
        ax2.plot(epochs, [r["test_top1"] for r in history], label="test", lw=1.2)
        ax2.set_ylim(0, 1.02)
        ax2.set_xlabel("epoch")
        ax2.set_ylabel("top-1")
        ax2.legend(frameon=False, loc="lower right")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_ablation(rows, path):
    labels = [r["setting"] for r in rows]
    means = [r["top1_mean"] for r in rows]
    spread = [np.std(r["top1_per_seed"]) for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=_figsize())
        x = np.arange(len(rows))
        ax.bar(x, means, yerr=spread, color="0.6", edgecolor="k", capsize=3)
        for xi, m in zip(x, means):
            ax.text(xi, m + 0.01, f"{100 * m:.1f}", ha="center", va="bottom")
        ax.set_xticks(x)
        ax.set_xticklabels(labels)
        ax.set_ylim(0, 1.1)
        ax.set_ylabel("test top-1")
        ax.set_title(f"ablation: {rows[0]['axis']}" if rows else "ablation")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_confusion(conf, path):
    conf = np.asarray(conf)
    C = conf.shape[0]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1.2 + 0.45 * C, 1.0 + 0.45 * C))
        ax.imshow(conf, cmap="Greys")
        for i in range(C):
            for j in range(C):
                ax.text(j, i, str(conf[i, j]), ha="center", va="center",
                        color="w" if conf[i, j] > conf.max() / 2 else "k")
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        ax.set_xticks(range(C))
        ax.set_yticks(range(C))
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
