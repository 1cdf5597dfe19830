"""Optimization loop: forward, losses, shuffle augmentation, adaptive updates,
temperature annealing, checkpointing, metric logging, and the ablation grid.

Determinism: every stochastic consumer (forward sampling, batch order, the
train/validation split, shuffle augmentation, evaluation) draws from its own
generator derived from the run seed, so disabling one consumer (a variant
masking a term) cannot shift any other stream. Variant masking skips the
masked computation entirely and logs exact zeros; a masked run and a run
whose coefficient is zero therefore produce identical logs and parameters.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch

from .core_types import Dataset, upper_triangle
from .errors import (
    ConfigError,
    DatasetError,
    NumericFailureError,
    ParameterError,
    UndefinedMetricError,
)
from .ident_eval import (
    MIN_MCC_SAMPLES,
    MIN_R2_SAMPLES,
    IdentReport,
    block_r2,
    component_mcc,
    edge_auc_scores,
)
from .losses import (
    LossBreakdown,
    augmented_structures,
    elbo_tensors,
    shuffle_augment,
    sparsity_penalty,
    substructure_regularizer,
    total_loss,
)
from .svae import (
    ModelConfig,
    SCIModel,
    forward_tensors,
    save_checkpoint,
)

VARIANTS = ("full", "no_r", "no_h", "no_n", "no_k")
GRAD_CLIP_NORM = 5.0
VALIDATION_FRACTION = 0.2
MIN_REGULARIZER_BATCH = 4
EVAL_BATCH = 256

CSV_HEADER = [
    "epoch", "kl_gr", "kl_gir", "kl_s", "rec_A", "rec_x", "rec_k", "rec_y",
    "L_r", "L_h", "L_n", "total", "task_metric", "mcc", "block_r2", "edge_auc",
]


def derive_seed(seed: int, tag: str) -> int:
    """Stable per-purpose seed so rng streams never overlap across consumers."""
    return (seed * 0x9E3779B1 + zlib.crc32(tag.encode())) % (2**63 - 1)


def task_metric_from_scores(y_true, y_score, task: str) -> float:
    """ROC-AUC over scores for classification, RMSE for regression."""
    labels = np.asarray(y_true, dtype=np.float64)
    scores = np.asarray(y_score, dtype=np.float64)
    if labels.shape != scores.shape:
        raise ParameterError(
            f"labels {labels.shape} and scores {scores.shape} differ"
        )
    if task == "classification":
        if len(set(labels.tolist())) < 2:
            raise UndefinedMetricError("undefined AUC: single-class evaluation set")
        from sklearn.metrics import roc_auc_score

        return float(roc_auc_score(labels, scores))
    return float(np.sqrt(np.mean((scores - labels) ** 2)))


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run."""

    epochs: int
    batch_size: int
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    rho_prior: float = 0.3
    temperature_start: float = 1.0
    temperature_end: float = 0.1
    learning_rate: float = 1e-3
    seed: int = 0
    variant: str = "full"
    task: str = "classification"
    eval_every: int = 10

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigError("alpha, beta, gamma must be nonnegative")
        if not 0.0 < self.rho_prior < 1.0:
            raise ConfigError("rho_prior must be in (0, 1)")
        if self.temperature_start <= 0 or self.temperature_end <= 0:
            raise ConfigError("temperatures must be positive")
        if self.temperature_end > self.temperature_start:
            raise ConfigError("temperature_end must be <= temperature_start")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be nonnegative")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.task not in ("classification", "regression"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.variant != "no_r" and self.batch_size < MIN_REGULARIZER_BATCH:
            raise ConfigError(
                f"batch_size must be >= {MIN_REGULARIZER_BATCH} unless variant "
                "is no_r (neighbor-based entropy estimate)"
            )

    @property
    def uses_regularizer(self) -> bool:
        return self.variant != "no_r" and self.alpha > 0

    @property
    def uses_relevant_sparsity(self) -> bool:
        return self.variant != "no_h" and self.beta > 0

    @property
    def uses_irrelevant_sparsity(self) -> bool:
        return self.variant != "no_n" and self.gamma > 0

    @property
    def uses_atom_classifier(self) -> bool:
        return self.variant != "no_k"


@dataclass
class MetricsRow:
    epoch: int
    losses: Dict[str, float]
    task_metric: Optional[float] = None
    mcc: Optional[float] = None
    block_r2: Optional[float] = None
    edge_auc: Optional[float] = None


class MetricsLog:
    """Append-only per-epoch records; epochs strictly increase, NaN rejected."""

    def __init__(self) -> None:
        self.rows: List[MetricsRow] = []

    def append(self, row: MetricsRow) -> None:
        if self.rows and row.epoch <= self.rows[-1].epoch:
            raise ParameterError("epoch indices must strictly increase")
        values = list(row.losses.values()) + [
            v for v in (row.task_metric, row.mcc, row.block_r2, row.edge_auc)
            if v is not None
        ]
        if any(math.isnan(v) or math.isinf(v) for v in values):
            raise NumericFailureError(f"refusing to log non-finite metrics at epoch {row.epoch}")
        self.rows.append(row)

    def write_csv(self, path: Path | str) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for row in self.rows:
                record = [str(row.epoch)]
                for key in CSV_HEADER[1:12]:
                    record.append(repr(row.losses[key]))
                for extra in (row.task_metric, row.mcc, row.block_r2, row.edge_auc):
                    record.append("" if extra is None else repr(extra))
                writer.writerow(record)


def read_metrics_csv(path: Path | str) -> List[Dict[str, object]]:
    """Parse a metrics CSV back into per-epoch mappings (empty cells → None)."""
    rows: List[Dict[str, object]] = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration as exc:
            raise DatasetError(f"metrics CSV {path} is empty") from exc
        if header != CSV_HEADER:
            raise DatasetError(f"metrics CSV {path} has unexpected header {header}")
        for record in reader:
            if len(record) != len(CSV_HEADER):
                raise DatasetError(f"metrics CSV {path} has a malformed row: {record}")
            row: Dict[str, object] = {"epoch": int(record[0])}
            for key, cell in zip(CSV_HEADER[1:], record[1:]):
                row[key] = None if cell == "" else float(cell)
            rows.append(row)
    if not rows:
        raise DatasetError(f"metrics CSV {path} has no data rows")
    return rows


@dataclass(frozen=True)
class CheckpointPaths:
    best: Path
    final: Path


@dataclass(eq=False)
class EvalResult:
    task_metric: Optional[float]
    loss_means: Dict[str, float]
    ident: Optional[IdentReport]
    num_records: int


@dataclass(eq=False)
class TrainResult:
    model: SCIModel
    log: MetricsLog
    checkpoints: Optional[CheckpointPaths]
    best_state: Dict[str, Dict[str, torch.Tensor]]
    best_epoch: int
    best_val_total: float


def train_val_split(num_records: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Deterministic 80/20 split of record indices by the run seed."""
    rng = np.random.default_rng(derive_seed(seed, "split"))
    perm = rng.permutation(num_records)
    num_val = max(1, int(round(VALIDATION_FRACTION * num_records)))
    if num_val >= num_records:
        num_val = num_records - 1
    return perm[num_val:], perm[:num_val]


def _stack_records(ds: Dataset, indices: Sequence[int]):
    graphs = [ds[int(i)][0] for i in indices]
    x = torch.stack([g.x for g in graphs])
    A = torch.stack([g.A for g in graphs])
    k = torch.stack([g.k for g in graphs])
    y = torch.tensor([g.y for g in graphs], dtype=torch.float64)
    return x, A, k, y


def _check_compatible(model: SCIModel, ds: Dataset, cfg: TrainConfig) -> None:
    if len(ds) == 0:
        raise ConfigError("dataset is empty")
    mc = model.config
    for graph, _ in ds:
        if graph.num_nodes != mc.num_nodes:
            raise ConfigError(
                "training requires a fixed node count matching the model "
                f"({mc.num_nodes}), found a graph with {graph.num_nodes}"
            )
    if ds.feat_dim != mc.feat_dim:
        raise ConfigError(f"dataset d_x {ds.feat_dim} != model feat_dim {mc.feat_dim}")
    if ds.num_atom_types != mc.num_atom_types:
        raise ConfigError(
            f"dataset K {ds.num_atom_types} != model num_atom_types {mc.num_atom_types}"
        )
    if ds.task != cfg.task or mc.task != cfg.task:
        raise ConfigError(
            f"task mismatch: dataset {ds.task!r}, model {mc.task!r}, config {cfg.task!r}"
        )
    if abs(mc.rho_prior - cfg.rho_prior) > 0:
        raise ConfigError(
            f"model rho_prior {mc.rho_prior} != config rho_prior {cfg.rho_prior}"
        )


def _anneal_temperature(cfg: TrainConfig, epoch: int) -> float:
    if cfg.epochs == 1:
        return cfg.temperature_end
    frac = epoch / (cfg.epochs - 1)
    return cfg.temperature_start * (cfg.temperature_end / cfg.temperature_start) ** frac


def _compute_batch_loss(
    model: SCIModel,
    cfg: TrainConfig,
    x: torch.Tensor,
    A: torch.Tensor,
    k: torch.Tensor,
    y: torch.Tensor,
    temperature: float,
    gen_forward: torch.Generator,
    gen_shuffle: Optional[torch.Generator],
) -> LossBreakdown:
    out = forward_tensors(model, x, A, gen_forward, temperature, hard=True)
    parts = elbo_tensors(
        out, x, A, k, y, cfg.task, model,
        include_atom_classifier=cfg.uses_atom_classifier,
    )
    zero = torch.tensor(0.0, dtype=torch.float64)
    L_r, L_h, L_n = zero, zero, zero
    if cfg.uses_regularizer and x.shape[0] >= MIN_REGULARIZER_BATCH:
        assert gen_shuffle is not None
        shuffled = shuffle_augment(out.G_ir, gen_shuffle)
        A_aug = augmented_structures(model, out.G_r, shuffled)
        L_r = substructure_regularizer(model, x, A, A_aug)
    if cfg.uses_relevant_sparsity:
        L_h = sparsity_penalty(out.B_hat_r)
    if cfg.uses_irrelevant_sparsity:
        L_n = sparsity_penalty(out.B_hat_ir)
    parts = dataclasses.replace(parts, L_r=L_r, L_h=L_h, L_n=L_n)
    return total_loss(parts, cfg.alpha, cfg.beta, cfg.gamma)


def evaluate(
    model: SCIModel,
    dataset: Dataset,
    task: str,
    *,
    train_cfg: Optional[TrainConfig] = None,
    temperature: Optional[float] = None,
    seed: int = 0,
    compute_block_r2: bool = True,
    allow_undefined_task_metric: bool = False,
) -> EvalResult:
    """Frozen-model evaluation: loss means, task metric, identifiability.

    Uses hard samples at ``temperature`` (default: the config's final
    temperature) with a generator seeded from ``seed``, so repeated calls are
    bitwise identical. When ``train_cfg`` is given the loss means reproduce
    its variant masking; otherwise only the bound terms are computed.
    Identifiability metrics are appended when every record carries ground
    truth and the pooled sample counts meet the estimators' minimums
    (posterior means score the latents; pooled upper-triangle scores the
    edges).
    """
    if len(dataset) == 0:
        raise ConfigError("cannot evaluate an empty dataset")
    if temperature is None:
        temperature = train_cfg.temperature_end if train_cfg is not None else 0.1
    gen_eval = torch.Generator().manual_seed(derive_seed(seed, "eval"))
    gen_shuffle = torch.Generator().manual_seed(derive_seed(seed, "eval-shuffle"))

    sums: Dict[str, float] = {key: 0.0 for key in LossBreakdown.FIELDS}
    y_true: List[float] = []
    y_score: List[float] = []
    mu_rows: List[torch.Tensor] = []
    s_true_rows: List[torch.Tensor] = []
    edge_scores: List[torch.Tensor] = []
    edge_labels: List[torch.Tensor] = []
    b_hat_vecs: List[torch.Tensor] = []
    b_true_vecs: List[torch.Tensor] = []

    indices = list(range(len(dataset)))
    batches = [indices[i : i + EVAL_BATCH] for i in range(0, len(indices), EVAL_BATCH)]
    with_truth = dataset.has_ground_truth

    with torch.no_grad():
        for batch in batches:
            x, A, k, y = _stack_records(dataset, batch)
            out = forward_tensors(model, x, A, gen_eval, temperature, hard=True)
            include_k = train_cfg.uses_atom_classifier if train_cfg else True
            parts = elbo_tensors(out, x, A, k, y, task, model, include_atom_classifier=include_k)
            zero = torch.tensor(0.0, dtype=torch.float64)
            L_r, L_h, L_n = zero, zero, zero
            if train_cfg is not None:
                if train_cfg.uses_regularizer and len(batch) >= MIN_REGULARIZER_BATCH:
                    shuffled = shuffle_augment(out.G_ir, gen_shuffle)
                    A_aug = augmented_structures(model, out.G_r, shuffled)
                    L_r = substructure_regularizer(model, x, A, A_aug)
                if train_cfg.uses_relevant_sparsity:
                    L_h = sparsity_penalty(out.B_hat_r)
                if train_cfg.uses_irrelevant_sparsity:
                    L_n = sparsity_penalty(out.B_hat_ir)
                parts = dataclasses.replace(parts, L_r=L_r, L_h=L_h, L_n=L_n)
                parts = total_loss(parts, train_cfg.alpha, train_cfg.beta, train_cfg.gamma)
            weight = len(batch) / len(dataset)
            for key, value in parts.as_floats().items():
                sums[key] += weight * value
            y_true.extend(float(t) for t in y)
            y_score.extend(float(t) for t in out.y_hat.reshape(-1))
            if with_truth:
                mu_rows.append(out.mu.reshape(-1, out.mu.shape[-1]))
                edge_scores.append(upper_triangle(out.B_hat_r.B).reshape(-1))
                b_hat_vecs.append(upper_triangle(out.B_hat_r.B).reshape(len(batch), -1))
                for i in batch:
                    truth = dataset[int(i)][1]
                    assert truth is not None
                    s_true_rows.append(truth.s_true)
                    edge_labels.append(upper_triangle(truth.G_r_true))
                    b_true_vecs.append(upper_triangle(truth.B_r_true.B))

    try:
        metric: Optional[float] = task_metric_from_scores(y_true, y_score, task)
    except UndefinedMetricError:
        # a degenerate (single-class) split has no task metric; callers that
        # asked for leniency still get the loss means
        if not allow_undefined_task_metric:
            raise
        metric = None

    ident: Optional[IdentReport] = None
    if with_truth:
        mu_all = torch.cat(mu_rows, dim=0).numpy()
        s_all = torch.cat([r.reshape(-1, r.shape[-1]) for r in s_true_rows]).numpy()
        # omit estimators whose sample minimums the split cannot meet rather
        # than aborting the run that requested the evaluation
        if s_all.shape[0] >= MIN_MCC_SAMPLES:
            report = component_mcc(s_all, mu_all)
            auc = edge_auc_scores(
                torch.cat(edge_scores).numpy(), torch.cat(edge_labels).numpy()
            )
            r2 = None
            if compute_block_r2 and len(b_hat_vecs) and sum(
                v.shape[0] for v in b_hat_vecs
            ) >= MIN_R2_SAMPLES:
                r2 = block_r2(
                    torch.cat(b_hat_vecs, dim=0).numpy(),
                    torch.stack(b_true_vecs, dim=0).numpy(),
                )
            ident = dataclasses.replace(report, edge_auc=auc, block_r2=r2)

    return EvalResult(
        task_metric=metric,
        loss_means=sums,
        ident=ident,
        num_records=len(dataset),
    )


def train(
    model: SCIModel,
    dataset: Dataset,
    cfg: TrainConfig,
    out_dir: Optional[Path | str] = None,
) -> TrainResult:
    """Run the full optimization loop; deterministic given cfg.seed.

    Per batch: forward with hard samples at the annealed temperature, ELBO
    terms with variant masking, shuffle augmentation and the substructure
    regularizer when active, sparsity penalties when active, then a clipped
    adaptive-step update. A trailing batch smaller than the regularizer's
    minimum is dropped only when the regularizer is active. Evaluation on
    the held-out split runs every ``eval_every`` epochs and at the end; the
    best validation-total checkpoint and the final checkpoint are kept.
    A non-finite loss or parameter aborts training, restores the last good
    state, and raises ``NumericFailureError`` naming the epoch.
    """
    _check_compatible(model, dataset, cfg)
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    train_idx, val_idx = train_val_split(len(dataset), cfg.seed)
    val_subset = dataset.subset([int(i) for i in val_idx])

    gen_forward = torch.Generator().manual_seed(derive_seed(cfg.seed, "forward"))
    gen_shuffle = torch.Generator().manual_seed(derive_seed(cfg.seed, "shuffle"))
    order_rng = np.random.default_rng(derive_seed(cfg.seed, "order"))
    eval_seed = derive_seed(cfg.seed, "eval-root")

    optimizer = torch.optim.Adam(model.parameter_tensors(), lr=cfg.learning_rate)
    log = MetricsLog()
    paths = (
        CheckpointPaths(best=out_path / "best.pt", final=out_path / "final.pt")
        if out_path is not None
        else None
    )

    best_state = model.state()
    best_epoch = -1
    best_val_total = math.inf
    last_good = model.state()

    def abort(epoch: int, reason: str) -> None:
        model.load_state(last_good)
        if paths is not None:
            save_checkpoint(
                model, paths.final,
                extra={"train_config": dataclasses.asdict(cfg), "epoch": epoch, "aborted": True},
            )
        raise NumericFailureError(f"training aborted at epoch {epoch}: {reason}")

    for epoch in range(cfg.epochs):
        temperature = _anneal_temperature(cfg, epoch)
        order = order_rng.permutation(train_idx)
        batch_sums: Dict[str, float] = {key: 0.0 for key in LossBreakdown.FIELDS}
        num_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            chunk = order[start : start + cfg.batch_size]
            if cfg.uses_regularizer and len(chunk) < MIN_REGULARIZER_BATCH:
                continue
            x, A, k, y = _stack_records(dataset, chunk)
            try:
                parts = _compute_batch_loss(
                    model, cfg, x, A, k, y, temperature, gen_forward, gen_shuffle
                )
            except NumericFailureError as exc:
                abort(epoch, str(exc))
            optimizer.zero_grad()
            parts.total.backward()
            torch.nn.utils.clip_grad_norm_(model.parameter_tensors(), GRAD_CLIP_NORM)
            optimizer.step()
            try:
                model.assert_finite(f"after update in epoch {epoch}")
            except NumericFailureError as exc:
                abort(epoch, str(exc))
            for key, value in parts.as_floats().items():
                batch_sums[key] += value
            num_batches += 1
        if num_batches == 0:
            raise ConfigError(
                "no usable batches: training split smaller than the "
                "regularizer's minimum batch"
            )
        losses = {key: batch_sums[key] / num_batches for key in batch_sums}
        row = MetricsRow(epoch=epoch, losses=losses)

        is_eval_epoch = (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1
        if is_eval_epoch:
            result = evaluate(
                model, val_subset, cfg.task,
                train_cfg=cfg, seed=eval_seed,
                compute_block_r2=(epoch == cfg.epochs - 1),
                allow_undefined_task_metric=True,
            )
            row.task_metric = result.task_metric
            if result.ident is not None:
                row.mcc = result.ident.mcc
                row.block_r2 = result.ident.block_r2
                row.edge_auc = result.ident.edge_auc
            val_total = result.loss_means["total"]
            if val_total < best_val_total:
                best_val_total = val_total
                best_epoch = epoch
                best_state = model.state()
                if paths is not None:
                    save_checkpoint(
                        model, paths.best,
                        extra={
                            "train_config": dataclasses.asdict(cfg),
                            "epoch": epoch,
                            "val_total": val_total,
                        },
                    )
        log.append(row)
        last_good = model.state()

    if paths is not None:
        save_checkpoint(
            model, paths.final,
            extra={"train_config": dataclasses.asdict(cfg), "epoch": cfg.epochs - 1},
        )
        log.write_csv(out_path / "metrics.csv")
    return TrainResult(
        model=model,
        log=log,
        checkpoints=paths,
        best_state=best_state,
        best_epoch=best_epoch,
        best_val_total=best_val_total,
    )


@dataclass(eq=False)
class RunResult:
    variant: str
    seed: int
    status: str
    ident: Optional[IdentReport] = None
    task_metric: Optional[float] = None
    error: str = ""


def run_ablation(
    dataset: Dataset,
    base_cfg: TrainConfig,
    variants: Sequence[str],
    seeds: Sequence[int],
    *,
    model_config: Optional[ModelConfig] = None,
    out_dir: Optional[Path | str] = None,
):
    """Train every (variant, seed) pair from identical per-seed initializations.

    Each run's best-validation model is evaluated on the run's held-out
    split with full identifiability metrics. A failing run is recorded as
    failed and the grid continues. Returns (comparison table, raw results).
    """
    from .ident_eval import ablation_report

    if len(seeds) < 3:
        raise ConfigError("run_ablation needs at least 3 seeds")
    for variant in variants:
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}")
    if model_config is None:
        model_config = default_model_config(dataset, base_cfg)

    results: Dict[str, List[RunResult]] = {variant: [] for variant in variants}
    for variant in variants:
        for seed in seeds:
            cfg = dataclasses.replace(base_cfg, variant=variant, seed=int(seed))
            run_dir = (
                Path(out_dir) / f"{variant}_seed{seed}" if out_dir is not None else None
            )
            try:
                model = SCIModel(model_config, torch.Generator().manual_seed(int(seed)))
                outcome = train(model, dataset, cfg, run_dir)
                model.load_state(outcome.best_state)
                _, val_idx = train_val_split(len(dataset), cfg.seed)
                val_subset = dataset.subset([int(i) for i in val_idx])
                result = evaluate(
                    model, val_subset, cfg.task,
                    train_cfg=cfg, seed=derive_seed(cfg.seed, "eval-root"),
                    compute_block_r2=True,
                )
                results[variant].append(
                    RunResult(
                        variant=variant,
                        seed=int(seed),
                        status="ok",
                        ident=result.ident,
                        task_metric=result.task_metric,
                    )
                )
            except Exception as exc:  # noqa: BLE001 - a failed run must not kill the grid
                results[variant].append(
                    RunResult(variant=variant, seed=int(seed), status="failed", error=str(exc))
                )

    reports = {
        variant: [r.ident for r in runs if r.status == "ok" and r.ident is not None]
        for variant, runs in results.items()
    }
    task_metrics = {
        variant: [r.task_metric for r in runs if r.status == "ok" and r.task_metric is not None]
        for variant, runs in results.items()
    }
    table = ablation_report(reports, task_metrics)
    return table, results


def default_model_config(dataset: Dataset, cfg: TrainConfig, **overrides) -> ModelConfig:
    """Model hyperparameters inferred from a (fixed node count) dataset."""
    if len(dataset) == 0:
        raise ConfigError("dataset is empty")
    graph = dataset[0][0]
    n = None
    for _, truth in dataset:
        if truth is not None:
            n = truth.latent_dim
            break
    params = dict(
        num_nodes=graph.num_nodes,
        feat_dim=graph.feat_dim,
        latent_dim=n if n is not None else graph.feat_dim,
        num_atom_types=dataset.num_atom_types,
        task=cfg.task,
        rho_prior=cfg.rho_prior,
    )
    params.update(overrides)
    return ModelConfig(**params)
