"""Static figures for the evaluate and explain reports (Agg backend, PNG)."""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

QUARTERS = ("00", "15", "30", "45")
# no Software/date chunks, so identical inputs give identical bytes
PNG_META = {"Software": None}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=PNG_META)
    plt.close(fig)


def score_boxplot(scores: Mapping[str, np.ndarray], title: str, path) -> None:
    names = list(scores)
    fig, ax = plt.subplots(figsize=(1.6 * len(names) + 2, 4))
    ax.boxplot([np.asarray(scores[n]) for n in names], whis=1.5)
    ax.set_xticks(range(1, len(names) + 1), names, rotation=20)
    ax.set_ylabel(title)
    ax.grid(axis="y", alpha=0.3)
    _save(fig, path)


def interval_plot(hours: Sequence[str], realized: np.ndarray, bands: Mapping[float, tuple[np.ndarray, np.ndarray]], title: str, path, max_hours: int = 168) -> None:
    """Quarter-hourly realizations against the forecast bands for the first ``max_hours`` hours."""
    h = min(len(hours), max_hours)
    t = np.arange(h * 4) / 4.0
    fig, ax = plt.subplots(figsize=(10, 4))
    for level in sorted(bands, reverse=True):
        lo, hi = bands[level]
        ax.fill_between(t, lo[:h].reshape(-1), hi[:h].reshape(-1), step="post", alpha=0.25 + 0.25 * (level < 0.75), label=f"PI-{round(100 * level)}")
    ax.step(t, realized[:h].reshape(-1), where="post", color="k", lw=0.8, label="realized")
    ax.set_xlabel(f"hours from {hours[0]}")
    ax.set_ylabel("ID3 price [EUR/MWh]")
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    _save(fig, path)


def importance_plot(labels: Sequence[str], importance: np.ndarray, title: str, path, top: int = 15) -> None:
    """Horizontal bars of feature importance for each of the four target quarters."""
    fig, axes = plt.subplots(1, importance.shape[1], figsize=(4 * importance.shape[1], 0.3 * min(top, len(labels)) + 1.5), sharey=False)
    axes = np.atleast_1d(axes)
    for d, ax in enumerate(axes):
        order = np.argsort(-importance[:, d], kind="stable")[:top][::-1]
        ax.barh([labels[i] for i in order], importance[order, d])
        ax.set_title(f"{title} {QUARTERS[d]}", fontsize=9)
        ax.tick_params(axis="y", labelsize=7)
    _save(fig, path)


def ablation_plot(scores: Mapping[str, np.ndarray], path) -> None:
    score_boxplot(scores, "energy score", path)
