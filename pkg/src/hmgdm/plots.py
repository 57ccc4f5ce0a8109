"""Figure rendering. Everything draws to files through the Agg backend; no
interactive surface."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import KMCurve, km_estimator


def _km_steps(curve: KMCurve, t_max: float) -> tuple[np.ndarray, np.ndarray]:
    xs = np.concatenate([[0.0], curve.times, [t_max]])
    ys = np.concatenate([[1.0], curve.survival, [curve.survival[-1] if len(curve.survival) else 1.0]])
    return xs, ys


def plot_km(times_high, events_high, times_low, events_low, out_path, title="") -> None:
    """Two Kaplan-Meier step curves (high-risk vs low-risk groups)."""
    t_max = float(max(np.max(times_high), np.max(times_low)))
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for name, times, events, color in (
        ("high risk", times_high, events_high, "tab:red"),
        ("low risk", times_low, events_low, "tab:blue"),
    ):
        curve = km_estimator(times, events)
        if len(curve.times) == 0:
            ax.step([0, t_max], [1.0, 1.0], where="post", label=name, color=color)
            continue
        xs, ys = _km_steps(curve, t_max)
        ax.step(xs, ys, where="post", label=name, color=color)
    ax.set_xlabel("time")
    ax.set_ylabel("survival probability")
    ax.set_ylim(-0.02, 1.02)
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_rmse_t(series: dict, out_path, title="denoising error vs t") -> None:
    """series: name -> list of {t, rmse} rows."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for name, rows in series.items():
        ts = [r["t"] for r in rows]
        vals = [r["rmse"] for r in rows]
        ax.plot(ts, vals, marker="o", label=name)
    ax.set_xlabel("diffusion step t")
    ax.set_ylabel("RMSE")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_tsne(embeddings: np.ndarray, labels, out_path, seed: int = 0) -> None:
    """2-D t-SNE scatter, one point per embedding, colored by label."""
    from sklearn.manifold import TSNE

    embeddings = np.asarray(embeddings, dtype=np.float64)
    n = len(embeddings)
    perplexity = max(2.0, min(30.0, (n - 1) / 3.0))
    proj = TSNE(
        n_components=2, perplexity=perplexity, random_state=seed, init="pca"
    ).fit_transform(embeddings)
    labels = np.asarray(labels)
    fig, ax = plt.subplots(figsize=(5.5, 5))
    for lab in np.unique(labels):
        pts = proj[labels == lab]
        ax.scatter(pts[:, 0], pts[:, 1], s=12, label=str(lab), alpha=0.7)
    ax.set_xticks([])
    ax.set_yticks([])
    ax.legend(title="class")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_heatmap(image: np.ndarray, labels: np.ndarray, weights: np.ndarray, out_path) -> None:
    """Paint per-entity readout weights back onto their superpixel regions."""
    weight_img = np.asarray(weights, dtype=np.float64)[labels]
    fig, axes = plt.subplots(1, 2, figsize=(9, 4.5))
    axes[0].imshow(image)
    axes[0].set_title("input")
    axes[1].imshow(image)
    im = axes[1].imshow(weight_img, alpha=0.55, cmap="jet")
    axes[1].set_title("entity attention")
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(im, ax=axes[1], fraction=0.046)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_confusion(conf: np.ndarray, out_path, title="confusion matrix") -> None:
    conf = np.asarray(conf)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(conf, cmap="Blues")
    for i in range(conf.shape[0]):
        for j in range(conf.shape[1]):
            ax.text(j, i, str(int(conf[i, j])), ha="center", va="center")
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(title)
    fig.colorbar(im, fraction=0.046)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_loss_trace(traces: dict, out_path, title="training loss") -> None:
    """traces: name -> list of (epoch, loss) pairs or TraceEntry-like dicts."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for name, rows in traces.items():
        xs = [r["epoch"] if isinstance(r, dict) else r.epoch for r in rows]
        ys = [r["loss"] if isinstance(r, dict) else r.loss for r in rows]
        ax.plot(xs, ys, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
