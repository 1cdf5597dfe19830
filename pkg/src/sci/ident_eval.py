"""Identifiability metrics: latent recovery up to permutation and monotone
reparameterization, parameter recovery up to invertible maps, edge recovery,
and the ablation comparison table.

All metrics are deterministic functions of their inputs: the regression in
``block_r2`` uses fixed internal seeds, and every other metric is
closed-form.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from scipy.stats import spearmanr

from .core_types import EPS, BernoulliAdj, upper_triangle
from .errors import (
    DegenerateComponentError,
    DimensionError,
    ParameterError,
    UndefinedMetricError,
)

MIN_MCC_SAMPLES = 50
EXHAUSTIVE_MATCH_LIMIT = 8
R2_HIDDEN = 64
R2_STEPS = 2000
R2_RESTARTS = 3
R2_LEARNING_RATE = 1e-2
R2_HOLDOUT_FRACTION = 0.2
R2_SPLIT_SEED = 20240831
MIN_R2_SAMPLES = 25


@dataclass(frozen=True)
class IdentReport:
    """Latent/parameter/edge recovery scores for one evaluation.

    ``per_component_corr`` keeps the signed rank correlation of each true
    component with its matched estimate (order follows the true components);
    ``matching`` maps true component i to estimated component matching[i].
    ``block_r2`` and ``edge_auc`` are None when not computed.
    """

    mcc: float
    per_component_corr: Tuple[float, ...]
    matching: Tuple[int, ...]
    num_samples: int
    block_r2: Optional[float] = None
    edge_auc: Optional[float] = None

    def to_json(self) -> Dict[str, object]:
        return {
            "mcc": self.mcc,
            "per_component_corr": list(self.per_component_corr),
            "matching": list(self.matching),
            "num_samples": self.num_samples,
            "block_r2": self.block_r2,
            "edge_auc": self.edge_auc,
        }


def _as_matrix(value, name: str) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D (samples, components), got {arr.shape}")
    return arr


def component_mcc(s_true, s_est) -> IdentReport:
    """Mean absolute rank correlation under the best one-to-one matching.

    Rank correlation makes the score invariant to monotone component-wise
    reparameterization; the assignment maximizes the summed absolute
    cross-correlation (exhaustively for up to 8 components, by the
    rectangular assignment solver above that).
    """
    true = _as_matrix(s_true, "s_true")
    est = _as_matrix(s_est, "s_est")
    if true.shape != est.shape:
        raise DimensionError(f"shape mismatch: s_true {true.shape} vs s_est {est.shape}")
    num_samples, n = true.shape
    if num_samples < MIN_MCC_SAMPLES:
        raise ParameterError(
            f"component matching needs at least {MIN_MCC_SAMPLES} samples, got {num_samples}"
        )
    for side, mat in (("true", true), ("estimated", est)):
        # np.ptp == 0 means every sample is identical; variance alone can be
        # a nonzero round-off residue for constant non-representable values
        for j in range(n):
            if np.ptp(mat[:, j]) == 0.0:
                raise DegenerateComponentError(
                    f"{side} component {j} has zero variance; correlation undefined"
                )

    if n == 1:
        cross = np.array([[float(spearmanr(true[:, 0], est[:, 0]).statistic)]])
    else:
        rho = spearmanr(true, est).statistic
        cross = np.asarray(rho)[:n, n:]
    abs_cross = np.abs(cross)

    if n <= EXHAUSTIVE_MATCH_LIMIT:
        best_perm, best_score = None, -math.inf
        for perm in itertools.permutations(range(n)):
            score = sum(abs_cross[i, perm[i]] for i in range(n))
            if score > best_score:
                best_score, best_perm = score, perm
        matching = tuple(best_perm)
    else:
        rows, cols = linear_sum_assignment(-abs_cross)
        matching = tuple(int(cols[list(rows).index(i)]) for i in range(n))

    per_corr = tuple(float(cross[i, matching[i]]) for i in range(n))
    mcc = float(np.mean([abs(c) for c in per_corr]))
    return IdentReport(
        mcc=mcc,
        per_component_corr=per_corr,
        matching=matching,
        num_samples=num_samples,
    )


def _ridge_lstsq(phi: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Least squares via normal equations and a handwritten Cholesky.

    LAPACK drivers pick alignment-dependent code paths for their internal
    workspace, so repeated calls in one process can differ in the last few
    bits; a fixed-order factorization built from plain tensor ops is
    bitwise reproducible. The tiny ridge keeps the Gram matrix positive
    definite when the basis has collinear columns.
    """
    m = phi.shape[1]
    gram = phi.mT @ phi
    ridge = 1e-10 * max(1.0, float(gram.diagonal().mean()))
    gram = gram + ridge * torch.eye(m, dtype=phi.dtype)
    rhs = phi.mT @ y
    chol = torch.zeros_like(gram)
    for i in range(m):
        row = chol[i, :i]
        chol[i, i] = torch.sqrt(gram[i, i] - (row * row).sum())
        if i + 1 < m:
            chol[i + 1 :, i] = (gram[i + 1 :, i] - chol[i + 1 :, :i] @ row) / chol[i, i]
    z = torch.zeros_like(rhs)
    for i in range(m):
        z[i] = (rhs[i] - chol[i, :i] @ z[:i]) / chol[i, i]
    solution = torch.zeros_like(rhs)
    for i in range(m - 1, -1, -1):
        solution[i] = (z[i] - chol[i + 1 :, i] @ solution[i + 1 :]) / chol[i, i]
    return solution


def _fit_once(
    x_train: torch.Tensor,
    y_train: torch.Tensor,
    x_test: torch.Tensor,
    seed: int,
) -> torch.Tensor:
    """One restart: small nonlinear map with a linear skip, then an exact
    least-squares refit of the output layer on [hidden, inputs, 1]."""
    gen = torch.Generator().manual_seed(seed)
    m_in = x_train.shape[1]
    m_out = y_train.shape[1]
    scale = 1.0 / math.sqrt(m_in)
    w1 = (torch.rand((m_in, R2_HIDDEN), generator=gen, dtype=torch.float64) * 2 - 1) * scale
    b1 = torch.zeros(R2_HIDDEN, dtype=torch.float64)
    w2 = (torch.rand((R2_HIDDEN, m_out), generator=gen, dtype=torch.float64) * 2 - 1) / math.sqrt(R2_HIDDEN)
    w_skip = (torch.rand((m_in, m_out), generator=gen, dtype=torch.float64) * 2 - 1) * scale
    b2 = torch.zeros(m_out, dtype=torch.float64)
    params = [w1, b1, w2, w_skip, b2]
    for p in params:
        p.requires_grad_(True)
    optimizer = torch.optim.Adam(params, lr=R2_LEARNING_RATE)
    for _ in range(R2_STEPS):
        optimizer.zero_grad()
        hidden = torch.tanh(x_train @ w1 + b1)
        pred = hidden @ w2 + x_train @ w_skip + b2
        loss = ((pred - y_train) ** 2).mean()
        loss.backward()
        optimizer.step()
    with torch.no_grad():
        ones = torch.ones((x_train.shape[0], 1), dtype=torch.float64)
        phi_train = torch.cat([torch.tanh(x_train @ w1 + b1), x_train, ones], dim=1)
        solution = _ridge_lstsq(phi_train, y_train)
        ones_test = torch.ones((x_test.shape[0], 1), dtype=torch.float64)
        phi_test = torch.cat([torch.tanh(x_test @ w1 + b1), x_test, ones_test], dim=1)
        return phi_test @ solution


def block_r2(B_hat_samples, B_true_samples) -> float:
    """Held-out R² of a learned map from estimated to true parameters.

    Recovery up to an invertible map is scored by regressing the true
    parameter vectors on the estimated ones (a small nonlinear map with a
    linear skip, three fixed-seed restarts, best held-out score kept).
    Constant true columns are excluded — they carry no recoverable signal.
    An identity relationship scores 1 up to solver round-off because the
    final output layer is solved exactly by least squares over a basis that
    contains the inputs themselves.
    """
    est = _as_matrix(B_hat_samples, "B_hat_samples")
    true = _as_matrix(B_true_samples, "B_true_samples")
    if est.shape[0] != true.shape[0]:
        raise DimensionError(
            f"sample counts differ: {est.shape[0]} estimated vs {true.shape[0]} true"
        )
    num_samples, m_in = est.shape
    if num_samples < MIN_R2_SAMPLES:
        raise ParameterError(
            f"parameter-recovery fit needs at least {MIN_R2_SAMPLES} samples, got {num_samples}"
        )
    if num_samples < 10 * m_in:
        warnings.warn(
            f"parameter-recovery fit has {num_samples} samples for {m_in} inputs; "
            "scores may be optimistic",
            stacklevel=2,
        )
    keep = [j for j in range(true.shape[1]) if np.ptp(true[:, j]) > 0.0]
    if not keep:
        raise DegenerateComponentError(
            "every true parameter column is constant; recovery score undefined"
        )
    true = true[:, keep]

    gen = torch.Generator().manual_seed(R2_SPLIT_SEED)
    perm = torch.randperm(num_samples, generator=gen).numpy()
    num_test = max(1, int(round(R2_HOLDOUT_FRACTION * num_samples)))
    test_idx, train_idx = perm[:num_test], perm[num_test:]

    mean = est[train_idx].mean(axis=0)
    std = est[train_idx].std(axis=0)
    std[std < EPS] = 1.0
    est_std = (est - mean) / std

    x_train = torch.from_numpy(est_std[train_idx])
    y_train = torch.from_numpy(true[train_idx])
    x_test = torch.from_numpy(est_std[test_idx])
    y_test = torch.from_numpy(true[test_idx])

    best = -math.inf
    for restart in range(R2_RESTARTS):
        pred = _fit_once(x_train, y_train, x_test, seed=restart)
        scores = []
        for j in range(y_test.shape[1]):
            ss_tot = float(((y_test[:, j] - y_test[:, j].mean()) ** 2).sum())
            if ss_tot <= 0.0:
                continue
            ss_res = float(((pred[:, j] - y_test[:, j]) ** 2).sum())
            scores.append(1.0 - ss_res / ss_tot)
        if not scores:
            raise DegenerateComponentError(
                "every true parameter column is constant on the held-out split"
            )
        best = max(best, float(np.mean(scores)))
    return best


def edge_auc_scores(scores, labels) -> float:
    """AUC of pooled per-edge scores against binary edge labels."""
    from sklearn.metrics import roc_auc_score

    score_arr = np.asarray(scores, dtype=np.float64).reshape(-1)
    label_arr = np.asarray(labels, dtype=np.float64).reshape(-1)
    if score_arr.shape != label_arr.shape:
        raise DimensionError(
            f"scores {score_arr.shape} and labels {label_arr.shape} differ"
        )
    classes = set(label_arr.tolist())
    if not classes <= {0.0, 1.0}:
        raise ParameterError("edge labels must be binary")
    if len(classes) < 2:
        raise UndefinedMetricError(
            "undefined AUC: edge labels contain a single class"
        )
    return float(roc_auc_score(label_arr, score_arr))


def edge_auc(B_hat_r, G_r_true) -> float:
    """Ranking quality of inferred edge probabilities against true edges.

    Accepts a Bernoulli adjacency or a raw probability tensor of shape
    (..., v, v) plus a binary adjacency of the same shape; pools the strict
    upper triangles across any leading batch dimensions.
    """
    probs = B_hat_r.B if isinstance(B_hat_r, BernoulliAdj) else torch.as_tensor(B_hat_r, dtype=torch.float64)
    truth = torch.as_tensor(G_r_true, dtype=torch.float64)
    if probs.shape != truth.shape:
        raise DimensionError(f"shape mismatch: scores {tuple(probs.shape)} vs labels {tuple(truth.shape)}")
    return edge_auc_scores(
        upper_triangle(probs).reshape(-1).numpy(),
        upper_triangle(truth).reshape(-1).numpy(),
    )


METRIC_KEYS = ("mcc", "block_r2", "edge_auc", "task_metric")


@dataclass(frozen=True)
class AblationRow:
    variant: str
    num_runs: int
    stats: Dict[str, Optional[Tuple[float, float]]] = field(default_factory=dict)
    diff_vs_full: Dict[str, Optional[float]] = field(default_factory=dict)


@dataclass(frozen=True)
class AblationTable:
    """Per-variant mean/std of every metric plus mean differences vs full."""

    rows: Tuple[AblationRow, ...]
    absent: Tuple[str, ...]

    def row(self, variant: str) -> AblationRow:
        for r in self.rows:
            if r.variant == variant:
                return r
        raise KeyError(variant)

    def to_json(self) -> Dict[str, object]:
        return {
            "variants": {
                r.variant: {
                    "num_runs": r.num_runs,
                    "metrics": {
                        k: None if v is None else {"mean": v[0], "std": v[1]}
                        for k, v in r.stats.items()
                    },
                    "diff_vs_full": r.diff_vs_full,
                }
                for r in self.rows
            },
            "absent": list(self.absent),
        }

    def format_table(self) -> str:
        header = ["variant", "runs"] + [f"{k} (mean±std)" for k in METRIC_KEYS] + [
            f"Δ{k} vs full" for k in METRIC_KEYS
        ]
        lines = [header]
        for r in self.rows:
            cells = [r.variant, str(r.num_runs)]
            for k in METRIC_KEYS:
                stat = r.stats.get(k)
                cells.append("-" if stat is None else f"{stat[0]:.4f}±{stat[1]:.4f}")
            for k in METRIC_KEYS:
                diff = r.diff_vs_full.get(k)
                cells.append("-" if diff is None else f"{diff:+.4f}")
            lines.append(cells)
        widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
        rendered = []
        for idx, row in enumerate(lines):
            rendered.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
            if idx == 0:
                rendered.append("  ".join("-" * widths[i] for i in range(len(widths))).rstrip())
        if self.absent:
            rendered.append(f"absent variants: {', '.join(self.absent)}")
        return "\n".join(rendered)


def _mean_std(values: List[float]) -> Optional[Tuple[float, float]]:
    if not values:
        return None
    arr = np.asarray(values, dtype=np.float64)
    if np.ptp(arr) == 0.0:
        # identical runs must report exactly zero spread, not a round-off
        # residue from the mean subtraction
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std())


def ablation_report(
    reports: Mapping[str, Sequence[IdentReport]],
    task_metrics: Optional[Mapping[str, Sequence[float]]] = None,
) -> AblationTable:
    """Aggregate per-variant runs into a comparison table.

    Variants with no successful runs are listed as absent rather than
    raising. Differences are reported against the ``full`` variant when it
    is present; population standard deviation is used so identical repeated
    runs report exactly zero spread.
    """
    task_metrics = task_metrics or {}
    per_variant: Dict[str, Dict[str, List[float]]] = {}
    for variant, runs in reports.items():
        values: Dict[str, List[float]] = {k: [] for k in METRIC_KEYS}
        for report in runs:
            values["mcc"].append(report.mcc)
            if report.block_r2 is not None:
                values["block_r2"].append(report.block_r2)
            if report.edge_auc is not None:
                values["edge_auc"].append(report.edge_auc)
        for metric in task_metrics.get(variant, []):
            values["task_metric"].append(float(metric))
        per_variant[variant] = values

    stats = {
        variant: {k: _mean_std(vals[k]) for k in METRIC_KEYS}
        for variant, vals in per_variant.items()
    }
    full_stats = stats.get("full")

    rows = []
    absent = []
    for variant in reports:
        num_runs = len(reports[variant])
        if num_runs == 0 and not task_metrics.get(variant):
            absent.append(variant)
            continue
        diffs: Dict[str, Optional[float]] = {}
        for k in METRIC_KEYS:
            here = stats[variant][k]
            base = full_stats[k] if full_stats else None
            diffs[k] = None if (here is None or base is None) else here[0] - base[0]
        rows.append(
            AblationRow(
                variant=variant,
                num_runs=num_runs,
                stats=stats[variant],
                diff_vs_full=diffs,
            )
        )
    return AblationTable(rows=tuple(rows), absent=tuple(absent))


def write_ablation_json(table: AblationTable, path) -> None:
    from pathlib import Path

    Path(path).write_text(json.dumps(table.to_json(), indent=2, sort_keys=True) + "\n")
