"""Figures for run reports; everything renders to files through the Agg backend."""

from __future__ import annotations

import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .search import read_telemetry  # noqa: E402
from .supernet import SuperNet  # noqa: E402
from .training import smooth  # noqa: E402


def _save(fig, path) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return str(path)


def plot_loss_curves(curves: dict[str, list[float]], path: str | os.PathLike, window: int = 50,
                     title: str = "training loss") -> str:
    """Raw (faint) and moving-average loss per labelled run."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for label, losses in curves.items():
        steps = np.arange(len(losses))
        line, = ax.plot(steps, smooth(losses, window), label=label)
        ax.plot(steps, losses, color=line.get_color(), alpha=0.15, linewidth=0.6)
    ax.set_xlabel("step")
    ax.set_ylabel("cross-entropy")
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_search_telemetry(telemetry: str | os.PathLike | list, path: str | os.PathLike) -> str:
    rows = read_telemetry(telemetry) if isinstance(telemetry, (str, os.PathLike)) else telemetry
    arr = np.asarray(rows, dtype=np.float64)
    fig, (a0, a1) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    a0.plot(arr[:, 0], arr[:, 1], alpha=0.3, linewidth=0.6)
    a0.plot(arr[:, 0], smooth(arr[:, 1], 20))
    a0.set_xlabel("step")
    a0.set_ylabel("task loss")
    a1.plot(arr[:, 0], arr[:, 3], color="tab:red")
    a1.set_xlabel("step")
    a1.set_ylabel("expected MAdds (M)")
    fig.suptitle("architecture search")
    return _save(fig, path)


def plot_alpha_heatmap(net: SuperNet, path: str | os.PathLike) -> str:
    """softmax(alpha) per mixed layer; rows are layers, columns candidates."""
    labels = [str(c) for c in max((layer.choices for _, _, layer in net.mixed_layers()), key=len)]
    rows, names = [], []
    for i, j, layer in net.mixed_layers():
        p = np.full(len(labels), np.nan)
        for c, choice in enumerate(layer.choices):
            p[labels.index(str(choice))] = layer.probs()[c]
        rows.append(p)
        names.append(f"s{i}.l{j}")
    fig, ax = plt.subplots(figsize=(6.4, 0.3 * len(rows) + 1.5))
    im = ax.imshow(np.asarray(rows), aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(names)), names, fontsize=8)
    fig.colorbar(im, ax=ax, label="probability")
    ax.set_title("architecture distribution")
    return _save(fig, path)


def plot_ablation(summaries: list[dict], path: str | os.PathLike) -> str:
    """Median metric per row with min/max whiskers."""
    labels = [s["label"] for s in summaries]
    med = np.array([s["metric_median"] for s in summaries], dtype=np.float64)
    lo = np.array([s["metric_min"] for s in summaries], dtype=np.float64)
    hi = np.array([s["metric_max"] for s in summaries], dtype=np.float64)
    fig, ax = plt.subplots(figsize=(7.0, 0.45 * len(labels) + 1.5))
    y = np.arange(len(labels))
    ax.barh(y, np.nan_to_num(med), xerr=np.nan_to_num([med - lo, hi - med]), color="tab:blue", alpha=0.7)
    ax.set_yticks(y, labels, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("metric (median, min/max)")
    return _save(fig, Path(path))
