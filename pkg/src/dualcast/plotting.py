"""Static PNG figures written next to the CSV/JSON outputs of the report commands."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "dualcast",
}
# Keeps PNG bytes stable across runs.
_SAVE_KW = {"metadata": {"Software": None}}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def plot_similarity(sim: np.ndarray, path: str | Path, title: str = "series/text CLS similarity") -> Path:
    with plt.rc_context(STYLE):
        n = sim.shape[0]
        fig, ax = plt.subplots(figsize=(4 + n / 40, 3.5 + n / 40))
        im = ax.imshow(sim, cmap="viridis", aspect="auto")
        ax.set_xlabel("text")
        ax.set_ylabel("series")
        ax.set_title(title)
        fig.colorbar(im, ax=ax, shrink=0.8)
        return _save(fig, path)


def plot_attention(weights: np.ndarray, path: str | Path) -> Path:
    """One row per head: attention of the last patch over the pooled future-text tokens."""
    with plt.rc_context(STYLE):
        heads, q = weights.shape
        fig, ax = plt.subplots(figsize=(1.5 + 0.5 * q, 1 + 0.35 * heads))
        im = ax.imshow(weights, cmap="magma", vmin=0.0, vmax=1.0, aspect="auto")
        ax.set_xticks(range(q))
        ax.set_yticks(range(heads))
        ax.set_xlabel("future-text token")
        ax.set_ylabel("head")
        fig.colorbar(im, ax=ax, shrink=0.8)
        return _save(fig, path)


def plot_forecasts(
    history: Sequence[np.ndarray],
    future: Sequence[np.ndarray],
    location: Sequence[np.ndarray],
    scale: Sequence[np.ndarray] | None,
    path: str | Path,
    titles: Sequence[str] | None = None,
    max_panels: int = 6,
) -> Path:
    n = min(len(history), max_panels)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(n, 1, figsize=(7, 1.8 * n), squeeze=False)
        for i, ax in enumerate(axes[:, 0]):
            L = len(history[i])
            t_f = np.arange(L, L + len(future[i]))
            ax.plot(np.arange(L), history[i], color="0.4", lw=0.9)
            ax.plot(t_f, future[i], color="k", lw=0.9, label="truth")
            ax.plot(t_f, location[i], color="C3", lw=1.1, label="forecast")
            if scale is not None:
                ax.fill_between(t_f, location[i] - scale[i], location[i] + scale[i], color="C3", alpha=0.2, lw=0)
            if titles is not None:
                ax.set_title(titles[i], loc="left")
        axes[0, 0].legend(loc="upper left", frameon=False)
        return _save(fig, path)


def plot_ablation(results: Mapping[str, tuple[float, float]], path: str | Path, metric: str = "MSE") -> Path:
    """Horizontal bars of mean metric with sample-std error bars, one per ablation row."""
    labels = list(results)
    means = np.array([results[k][0] for k in labels])
    stds = np.array([results[k][1] for k in labels])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7, 0.5 + 0.45 * len(labels)))
        y = np.arange(len(labels))
        ax.barh(y, means, xerr=stds, color="C0", alpha=0.8, capsize=3)
        ax.set_yticks(y)
        ax.set_yticklabels(labels)
        ax.invert_yaxis()
        ax.set_xlabel(metric)
        return _save(fig, path)


def plot_loss_trace(traces: Sequence[Sequence[float]], path: str | Path, labels: Sequence[str] | None = None) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        for i, tr in enumerate(traces):
            ax.plot(np.arange(1, len(tr) + 1), tr, lw=1, label=None if labels is None else labels[i])
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean training loss")
        if labels is not None:
            ax.legend(frameon=False)
        return _save(fig, path)
