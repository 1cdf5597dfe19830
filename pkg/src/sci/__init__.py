"""Semantic-structure generative modeling workbench for graph data.

A variational autoencoder that splits a molecular graph into
property-relevant structure, property-irrelevant structure, and per-node
latents, trained with an augmentation-based substructure regularizer and
sparsity penalties; plus a synthetic-data generator with recorded ground
truth and metrics that score how well the latent quantities are recovered.
"""

__version__ = "0.1.0"

from .core_types import (
    EPS,
    BernoulliAdj,
    Dataset,
    GaussianParams,
    GroundTruthRecord,
    LatentSample,
    MoleculeGraph,
    symmetrize_upper,
    upper_triangle,
    validate_graph,
)
from .errors import (
    ConfigError,
    DatasetError,
    DegenerateComponentError,
    DeterminismError,
    DimensionError,
    LockError,
    NumericFailureError,
    ParameterError,
    SCIError,
    UndefinedMetricError,
)
from .ident_eval import (
    AblationTable,
    IdentReport,
    ablation_report,
    block_r2,
    component_mcc,
    edge_auc,
)
from .losses import (
    LossBreakdown,
    elbo,
    elbo_tensors,
    kl_bernoulli,
    kl_gaussian,
    knn_entropy,
    shuffle_augment,
    sparsity_penalty,
    substructure_regularizer,
    total_loss,
)
from .svae import (
    ForwardOutputs,
    ModelConfig,
    SCIModel,
    forward,
    forward_tensors,
    load_checkpoint,
    save_checkpoint,
)
from .synthgen import (
    GenConfig,
    GroundTruthProcess,
    audit_assumptions,
    make_process,
    read_dataset,
    sample_dataset,
    sample_molecule,
    write_dataset,
)
from .trainer import (
    EvalResult,
    MetricsLog,
    MetricsRow,
    TrainConfig,
    TrainResult,
    evaluate,
    run_ablation,
    train,
)

__all__ = [
    "__version__",
    "EPS",
    "BernoulliAdj",
    "Dataset",
    "GaussianParams",
    "GroundTruthRecord",
    "LatentSample",
    "MoleculeGraph",
    "symmetrize_upper",
    "upper_triangle",
    "validate_graph",
    "SCIError",
    "ConfigError",
    "DatasetError",
    "DegenerateComponentError",
    "DeterminismError",
    "DimensionError",
    "LockError",
    "NumericFailureError",
    "ParameterError",
    "UndefinedMetricError",
    "AblationTable",
    "IdentReport",
    "ablation_report",
    "block_r2",
    "component_mcc",
    "edge_auc",
    "LossBreakdown",
    "elbo",
    "elbo_tensors",
    "kl_bernoulli",
    "kl_gaussian",
    "knn_entropy",
    "shuffle_augment",
    "sparsity_penalty",
    "substructure_regularizer",
    "total_loss",
    "ForwardOutputs",
    "ModelConfig",
    "SCIModel",
    "forward",
    "forward_tensors",
    "load_checkpoint",
    "save_checkpoint",
    "GenConfig",
    "GroundTruthProcess",
    "audit_assumptions",
    "make_process",
    "read_dataset",
    "sample_dataset",
    "sample_molecule",
    "write_dataset",
    "EvalResult",
    "MetricsLog",
    "MetricsRow",
    "TrainConfig",
    "TrainResult",
    "evaluate",
    "run_ablation",
    "train",
]
