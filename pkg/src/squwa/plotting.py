"""Figures rendered next to the CSV/binary report files.

The data files are the contract; these PNGs are for people.  All figures
use the Agg backend and strip the PNG metadata so reruns are byte-identical.
"""
from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_PNG_META = {"Software": None}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)


def _shade_mask(ax, mask, scale: float = 1.0) -> None:
    """Grey bands over masked spans; ``scale`` converts indices to x units."""
    mask = np.asarray(mask).astype(bool)
    edges = np.flatnonzero(np.diff(np.r_[0, mask.astype(int), 0]))
    for lo, hi in zip(edges[::2], edges[1::2]):
        ax.axvspan(lo * scale, hi * scale, color="0.85", lw=0)


def plot_attention_report(report: dict, path, fs: float = 80.0) -> None:
    """Raw and composite traces, SQI with mask overlay, and the attention matrix."""
    fig, axes = plt.subplots(4, 1, figsize=(9, 10), gridspec_kw={"height_ratios": [1, 1, 1, 2.4]})
    t = np.arange(len(report["raw"])) / fs
    T = len(report["sqi"])
    step = t[-1] / T if T else 1.0
    _shade_mask(axes[0], report["mask"], 1 / fs)
    axes[0].plot(t, report["raw"], lw=0.6, color="k")
    axes[0].set_ylabel("raw")
    _shade_mask(axes[1], report["mask"], 1 / fs)
    if report["composite"] is not None:
        axes[1].plot(t, report["composite"], lw=0.6, color="C0")
    axes[1].set_ylabel("composite")
    _shade_mask(axes[2], report["mask_t"], step)
    axes[2].plot((np.arange(T) + 0.5) * step, report["sqi"], color="C2", label="SQI")
    axes[2].plot((np.arange(T) + 0.5) * step, report["column_mass"] / max(report["column_mass"].max(), 1e-12),
                 color="C3", lw=0.8, label="column mass (scaled)")
    axes[2].set_ylim(-0.05, 1.05)
    axes[2].set_ylabel("SQI")
    axes[2].set_xlabel("time (s)")
    axes[2].legend(loc="lower right", fontsize=7, frameon=False)
    for ax in axes[:3]:
        ax.set_xlim(0, t[-1])
    im = axes[3].imshow(report["attention"], aspect="auto", cmap="viridis", origin="upper")
    axes[3].set_xlabel("SQI timestep")
    axes[3].set_ylabel("hidden-state timestep")
    fig.colorbar(im, ax=axes[3], fraction=0.04)
    ratio = report["stats"]["ratio"]
    fig.suptitle(f"{report['record_id']}  label={report['label']}  "
                 f"masked/clean mass={'n/a' if ratio is None else f'{ratio:.3f}'}", fontsize=10)
    fig.tight_layout()
    _save(fig, path)


def plot_quality_curves(curves: Mapping[str, Sequence[dict]], path) -> None:
    """AUCPR against the cumulative bad-quality threshold, one line per model."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for i, (name, curve) in enumerate(curves.items()):
        x = [100 * row["threshold"] for row in curve]
        ax.plot(x, [row["aucpr"] for row in curve], marker="o", ms=3, color=f"C{i}", label=name)
    ax.set_xlabel("bad-quality share up to (%)")
    ax.set_ylabel("AUCPR")
    ax.legend(frameon=False)
    ax.spines[["top", "right"]].set_visible(False)
    fig.tight_layout()
    _save(fig, path)


def plot_ablation(rows: Sequence[dict], path, metric: str = "AUCPR") -> None:
    fig, ax = plt.subplots(figsize=(7, 3.5))
    names = [r["variant"] for r in rows]
    values = [r[metric] for r in rows]
    colors = ["C3" if n == "SQUWA" else "C0" for n in names]
    ax.bar(range(len(rows)), values, color=colors)
    ax.set_xticks(range(len(rows)), names)
    lo = min(values) if values else 0.0
    ax.set_ylim(max(0.0, lo - 0.05), 1.0)
    ax.set_ylabel(metric)
    ax.spines[["top", "right"]].set_visible(False)
    fig.tight_layout()
    _save(fig, path)


def plot_history(history: Sequence[dict], path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    epochs = [h["epoch"] for h in history]
    ax.plot(epochs, [h["train_loss"] for h in history], label="train loss")
    ax.plot(epochs, [h["val_loss"] for h in history], label="val loss")
    if history and "val_AUROC" in history[0]:
        ax2 = ax.twinx()
        ax2.plot(epochs, [h.get("val_AUROC", np.nan) for h in history], color="C2", ls="--", label="val AUROC")
        ax2.set_ylabel("val AUROC")
        ax2.set_ylim(0, 1)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(frameon=False, loc="upper center")
    fig.tight_layout()
    _save(fig, path)
