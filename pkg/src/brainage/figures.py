"""Figure rendering for the report-emitting commands.

Every function writes one PNG next to the delimited output and returns
the path. The Agg backend is forced so rendering works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .errors import InputOutputError  # noqa: E402


def _save(fig, path):
    try:
        fig.savefig(path, dpi=110, bbox_inches="tight")
    except OSError as exc:
        raise InputOutputError(f"cannot write figure {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path


def plot_predictions(records, path, title="Predicted vs chronological age"):
    ages = np.array([r.chronological_age for r in records], dtype=float)
    preds = np.array([r.predicted_age for r in records], dtype=float)
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    lo = min(ages.min(), preds.min()) - 2
    hi = max(ages.max(), preds.max()) + 2
    ax.plot([lo, hi], [lo, hi], color="0.6", lw=1, zorder=1)
    ax.scatter(ages, preds, s=14, alpha=0.6, zorder=2)
    ax.set_xlim(lo, hi)
    ax.set_ylim(lo, hi)
    ax.set_xlabel("chronological age (years)")
    ax.set_ylabel("predicted age (years)")
    ax.set_title(title)
    return _save(fig, path)


def plot_training_curves(history, path):
    epochs = [rec.epoch for rec in history]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(epochs, [rec.train_mae for rec in history], label="train MAE")
    ax.plot(epochs, [rec.val_mae for rec in history], label="validation MAE")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MAE (years)")
    ax.set_title("Training curves (best restart)")
    ax.legend()
    return _save(fig, path)


def plot_session_agreement(matrix, path, icc=None):
    """Scatter of per-subject brain-PAD, session 2 against session 1."""
    m = np.asarray(matrix, dtype=float)
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    lo = m.min() - 1
    hi = m.max() + 1
    ax.plot([lo, hi], [lo, hi], color="0.6", lw=1, zorder=1)
    ax.scatter(m[:, 0], m[:, 1], s=14, alpha=0.6, zorder=2)
    ax.set_xlim(lo, hi)
    ax.set_ylim(lo, hi)
    ax.set_xlabel("brain-PAD, session 1 (years)")
    ax.set_ylabel("brain-PAD, session 2 (years)")
    title = "Between-session agreement"
    if icc is not None:
        title += f" (ICC {icc:.3f})"
    ax.set_title(title)
    return _save(fig, path)


def plot_variance_components(fits_by_label, path):
    """Stacked a2/c2/e2 bars, one per labelled fit."""
    labels = list(fits_by_label)
    fig, ax = plt.subplots(figsize=(1.6 + 1.4 * len(labels), 4.0))
    x = np.arange(len(labels))
    bottoms = np.zeros(len(labels))
    for name, color in (("a2", "#4878a8"), ("c2", "#e6a23c"),
                        ("e2", "#b0b0b0")):
        vals = np.array([getattr(fits_by_label[k], name) for k in labels])
        ax.bar(x, vals, bottom=bottoms, label=name, color=color, width=0.6)
        bottoms += vals
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("variance fraction")
    ax.set_title("Variance components")
    ax.legend()
    return _save(fig, path)
