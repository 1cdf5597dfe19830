"""Deterministic figure rendering for training logs, ablation tables, and
substructure panels. Uses the non-interactive raster backend; identical
inputs produce byte-identical image files."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg", force=True)

import matplotlib.pyplot as plt  # noqa: E402 - backend must be pinned first
import numpy as np  # noqa: E402
import torch  # noqa: E402

from .errors import DatasetError  # noqa: E402
from .ident_eval import METRIC_KEYS, AblationTable  # noqa: E402

PNG_METADATA = {"Software": "sci"}
LOSS_KEYS = ("kl_gr", "kl_gir", "kl_s", "rec_A", "rec_x", "rec_k", "rec_y",
             "L_r", "L_h", "L_n", "total")
EVAL_KEYS = ("task_metric", "mcc", "block_r2", "edge_auc")


def _save(fig, out_path: Path | str) -> None:
    fig.savefig(str(out_path), dpi=100, metadata=PNG_METADATA)
    plt.close(fig)


def plot_loss_curves(rows: Sequence[Mapping[str, object]], out_path: Path | str) -> None:
    """Two panels: per-term loss trajectories and evaluation metrics.

    ``rows`` is the parsed metrics log (one mapping per epoch); evaluation
    columns may be missing on non-evaluation epochs.
    """
    if not rows:
        raise DatasetError("metrics log has no rows; nothing to plot")
    epochs = [int(r["epoch"]) for r in rows]
    fig, (ax_loss, ax_eval) = plt.subplots(1, 2, figsize=(11, 4))
    for key in LOSS_KEYS:
        values = [float(r[key]) for r in rows]
        ax_loss.plot(epochs, values, label=key, linewidth=1.0)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss term")
    ax_loss.set_title("training losses")
    ax_loss.legend(fontsize=6, ncol=2)
    any_eval = False
    for key in EVAL_KEYS:
        points = [(e, float(r[key])) for e, r in zip(epochs, rows)
                  if r.get(key) not in (None, "")]
        if points:
            any_eval = True
            xs, ys = zip(*points)
            ax_eval.plot(xs, ys, marker="o", markersize=3, label=key, linewidth=1.0)
    ax_eval.set_xlabel("epoch")
    ax_eval.set_title("held-out metrics")
    if any_eval:
        ax_eval.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, out_path)


def ablation_bar_data(
    table: AblationTable,
) -> Dict[str, Tuple[List[str], List[float], List[float]]]:
    """Bar-chart inputs per metric: (variant labels, means, stds)."""
    data: Dict[str, Tuple[List[str], List[float], List[float]]] = {}
    for key in METRIC_KEYS:
        labels: List[str] = []
        means: List[float] = []
        stds: List[float] = []
        for row in table.rows:
            stat = row.stats.get(key)
            if stat is None:
                continue
            labels.append(row.variant)
            means.append(stat[0])
            stds.append(stat[1])
        data[key] = (labels, means, stds)
    return data


def plot_ablation_bars(table: AblationTable, out_path: Path | str) -> None:
    """One bar group per variant for each metric, with spread whiskers."""
    data = ablation_bar_data(table)
    if all(not labels for labels, _, _ in data.values()):
        raise DatasetError("ablation table has no plottable metrics")
    fig, axes = plt.subplots(1, len(METRIC_KEYS), figsize=(3.2 * len(METRIC_KEYS), 3.4))
    for ax, key in zip(np.atleast_1d(axes), METRIC_KEYS):
        labels, means, stds = data[key]
        positions = np.arange(len(labels))
        ax.bar(positions, means, yerr=stds, capsize=3)
        ax.set_xticks(positions)
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
        ax.set_title(key, fontsize=9)
    fig.tight_layout()
    _save(fig, out_path)


def plot_substructure_panels(
    panels: Mapping[str, torch.Tensor],
    out_path: Path | str,
    *,
    titles: Optional[Sequence[str]] = None,
) -> None:
    """Side-by-side heatmaps of (v, v) matrices on a shared [0, 1] scale.

    Typical panels: inferred relevant edge probabilities, the hard relevant
    sample, the hard irrelevant sample, and the observed adjacency.
    """
    if not panels:
        raise DatasetError("no panels to plot")
    names = list(titles) if titles is not None else list(panels)
    fig, axes = plt.subplots(1, len(panels), figsize=(2.8 * len(panels), 3.0))
    last_image = None
    for ax, name in zip(np.atleast_1d(axes), names):
        matrix = torch.as_tensor(panels[name], dtype=torch.float64).detach().numpy()
        last_image = ax.imshow(matrix, vmin=0.0, vmax=1.0, cmap="viridis")
        ax.set_title(name, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
    if last_image is not None:
        fig.colorbar(last_image, ax=np.atleast_1d(axes).tolist(), fraction=0.03)
    _save(fig, out_path)
