"""Shared graph, latent, and distribution-parameter types with validation.

All array fields are float64 torch tensors (int64 for atom labels) so every
type can flow directly into differentiable operations. Constructors coerce
array-likes; coercion never copies a tensor that already has the right dtype,
so objects built from live autograd tensors keep their gradient history.

Leading batch dimensions are permitted on distribution-parameter types
(``BernoulliAdj``, ``GaussianParams``): the documented shapes apply to the
trailing dimensions.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Tuple

import torch

from .errors import DimensionError, ParameterError

EPS = 1e-6
"""Global probability clamp: Bernoulli parameters live in [EPS, 1 - EPS]."""

TASKS = ("classification", "regression")


def _as_float(t) -> torch.Tensor:
    return torch.as_tensor(t, dtype=torch.float64)


def _as_int(t) -> torch.Tensor:
    return torch.as_tensor(t, dtype=torch.int64)


def _is_binary(t: torch.Tensor) -> bool:
    return bool(((t == 0.0) | (t == 1.0)).all())


def _is_symmetric(t: torch.Tensor) -> bool:
    return bool(torch.equal(t, t.mT))


def _zero_diagonal(t: torch.Tensor) -> bool:
    return bool((t.diagonal(dim1=-2, dim2=-1) == 0.0).all())


def _require_square(t: torch.Tensor, name: str) -> None:
    if t.ndim < 2 or t.shape[-1] != t.shape[-2]:
        raise DimensionError(f"{name} must be square, got shape {tuple(t.shape)}")


@dataclass(frozen=True, eq=False)
class MoleculeGraph:
    """One observed molecule: features x, adjacency A, atom labels k, property y.

    The adjacency is stored as a float64 binary matrix so it can be used in
    numeric operations without conversion. Structural invariants (symmetry,
    zero diagonal, label ranges) are checked by :func:`validate_graph`, which
    reports violations instead of raising, so invalid graphs can be
    constructed for inspection.
    """

    num_nodes: int
    x: torch.Tensor
    A: torch.Tensor
    k: torch.Tensor
    y: float
    task: str
    num_atom_types: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", _as_float(self.x))
        object.__setattr__(self, "A", _as_float(self.A))
        object.__setattr__(self, "k", _as_int(self.k))
        object.__setattr__(self, "y", float(self.y))
        v = self.num_nodes
        if self.x.ndim != 2 or self.x.shape[0] != v:
            raise DimensionError(f"x must be ({v}, d_x), got {tuple(self.x.shape)}")
        if self.A.shape != (v, v):
            raise DimensionError(f"A must be ({v}, {v}), got {tuple(self.A.shape)}")
        if self.k.shape != (v,):
            raise DimensionError(f"k must be ({v},), got {tuple(self.k.shape)}")
        if self.task not in TASKS:
            raise ParameterError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.num_atom_types < 1:
            raise ParameterError("num_atom_types must be positive")

    @property
    def feat_dim(self) -> int:
        return int(self.x.shape[1])

    @property
    def has_isolated_nodes(self) -> bool:
        """True when some row of A is all zero (allowed, recorded)."""
        return bool((self.A.sum(dim=1) == 0).any())


@dataclass(frozen=True, eq=False)
class LatentSample:
    """One latent configuration: atom latents s and substructures G_r, G_ir."""

    s: torch.Tensor
    G_r: torch.Tensor
    G_ir: torch.Tensor

    def __post_init__(self) -> None:
        object.__setattr__(self, "s", _as_float(self.s))
        object.__setattr__(self, "G_r", _as_float(self.G_r))
        object.__setattr__(self, "G_ir", _as_float(self.G_ir))
        for name in ("G_r", "G_ir"):
            g = getattr(self, name)
            _require_square(g, name)
            if not _is_binary(g):
                raise ParameterError(f"{name} entries must be 0 or 1")
            if not _is_symmetric(g):
                raise ParameterError(f"{name} must be symmetric")
            if not _zero_diagonal(g):
                raise ParameterError(f"{name} must have zero diagonal")
        if not bool(torch.isfinite(self.s).all()):
            raise ParameterError("s entries must be finite")


@dataclass(frozen=True, eq=False)
class BernoulliAdj:
    """Symmetric edge-probability matrix with entries clamped to [EPS, 1-EPS].

    The diagonal is retained (clamped) for reconstruction terms; samplers
    ignore it. Invariants are asserted at construction, so every instance in
    the system is valid by construction.
    """

    B: torch.Tensor

    def __post_init__(self) -> None:
        object.__setattr__(self, "B", _as_float(self.B))
        _require_square(self.B, "B")
        if not _is_symmetric(self.B):
            raise ParameterError("B must be symmetric")
        lo, hi = EPS, 1.0 - EPS
        if not bool(((self.B >= lo) & (self.B <= hi)).all()):
            raise ParameterError(f"B entries must lie in [{lo}, {hi}]")

    @property
    def num_nodes(self) -> int:
        return int(self.B.shape[-1])


@dataclass(frozen=True, eq=False)
class GaussianParams:
    """Per-node diagonal Gaussian parameters (mu, sigma), sigma > 0."""

    mu: torch.Tensor
    sigma: torch.Tensor

    def __post_init__(self) -> None:
        object.__setattr__(self, "mu", _as_float(self.mu))
        object.__setattr__(self, "sigma", _as_float(self.sigma))
        if self.mu.shape != self.sigma.shape:
            raise DimensionError(
                f"mu shape {tuple(self.mu.shape)} != sigma shape {tuple(self.sigma.shape)}"
            )
        if not bool((self.sigma > 0).all()):
            raise ParameterError("sigma entries must be strictly positive")


@dataclass(frozen=True, eq=False)
class GroundTruthRecord:
    """The generator's true latents for one record, for identifiability scoring."""

    s_true: torch.Tensor
    G_r_true: torch.Tensor
    G_ir_true: torch.Tensor
    B_r_true: BernoulliAdj
    B_ir_true: BernoulliAdj
    context_id: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "s_true", _as_float(self.s_true))
        object.__setattr__(self, "G_r_true", _as_float(self.G_r_true))
        object.__setattr__(self, "G_ir_true", _as_float(self.G_ir_true))
        for name in ("G_r_true", "G_ir_true"):
            g = getattr(self, name)
            _require_square(g, name)
            if not _is_binary(g):
                raise ParameterError(f"{name} entries must be 0 or 1")
            if not _is_symmetric(g):
                raise ParameterError(f"{name} must be symmetric")
            if not _zero_diagonal(g):
                raise ParameterError(f"{name} must have zero diagonal")
        if self.context_id < 0:
            raise ParameterError("context_id must be nonnegative")

    @property
    def latent_dim(self) -> int:
        return int(self.s_true.shape[-1])


@dataclass(frozen=True, eq=False)
class Dataset:
    """A sequence of (graph, optional ground truth) records with shared schema.

    All graphs share the feature width and atom-type vocabulary; the node
    count may vary per record, so batching is by list rather than padding.
    """

    records: Tuple[Tuple[MoleculeGraph, Optional[GroundTruthRecord]], ...]
    task: str
    num_contexts: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(tuple(r) for r in self.records))
        if self.task not in TASKS:
            raise ParameterError(f"task must be one of {TASKS}, got {self.task!r}")
        if not self.records:
            return
        d_x = self.records[0][0].feat_dim
        K = self.records[0][0].num_atom_types
        n = None
        for graph, truth in self.records:
            if graph.feat_dim != d_x:
                raise DimensionError("all graphs must share the feature width d_x")
            if graph.num_atom_types != K:
                raise DimensionError("all graphs must share the atom-type count K")
            if truth is not None:
                if n is None:
                    n = truth.latent_dim
                elif truth.latent_dim != n:
                    raise DimensionError("all ground-truth records must share n")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[Tuple[MoleculeGraph, Optional[GroundTruthRecord]]]:
        return iter(self.records)

    def __getitem__(self, i: int) -> Tuple[MoleculeGraph, Optional[GroundTruthRecord]]:
        return self.records[i]

    @property
    def feat_dim(self) -> int:
        return self.records[0][0].feat_dim

    @property
    def num_atom_types(self) -> int:
        return self.records[0][0].num_atom_types

    @property
    def has_ground_truth(self) -> bool:
        return all(truth is not None for _, truth in self.records)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        recs = tuple(self.records[i] for i in indices)
        return dataclasses.replace(self, records=recs)


def validate_graph(g: MoleculeGraph) -> list[str]:
    """Check a graph against its invariants; return violations, never raise.

    Isolated nodes are allowed and therefore not reported; they are exposed
    via :attr:`MoleculeGraph.has_isolated_nodes`.
    """
    report: list[str] = []
    if not _is_binary(g.A):
        report.append("adjacency entries not in {0,1}")
    if not _is_symmetric(g.A):
        report.append("asymmetric adjacency")
    if not _zero_diagonal(g.A):
        report.append("nonzero adjacency diagonal")
    if not bool(torch.isfinite(g.x).all()):
        report.append("non-finite features")
    if bool((g.k < 0).any()) or bool((g.k >= g.num_atom_types).any()):
        report.append("label out of range")
    if g.task == "classification" and g.y not in (0.0, 1.0):
        report.append("classification property not in {0,1}")
    return report


def symmetrize_upper(B_raw: torch.Tensor) -> BernoulliAdj:
    """Build a BernoulliAdj from a raw square matrix.

    The upper triangle is authoritative: output[i,j] = output[j,i] =
    clamp(B_raw[i,j], EPS, 1-EPS) for i < j. The diagonal is clamped and
    retained. Differentiable; leading batch dimensions pass through.
    """
    B_raw = _as_float(B_raw)
    _require_square(B_raw, "B_raw")
    clamped = B_raw.clamp(EPS, 1.0 - EPS)
    upper = torch.triu(clamped, diagonal=1)
    diag = torch.diag_embed(clamped.diagonal(dim1=-2, dim2=-1))
    return BernoulliAdj(upper + upper.mT + diag)


def upper_triangle(M: torch.Tensor) -> torch.Tensor:
    """Flatten the strict upper triangle of (..., v, v) into (..., v(v-1)/2)."""
    _require_square(M, "M")
    v = M.shape[-1]
    iu = torch.triu_indices(v, v, offset=1)
    return M[..., iu[0], iu[1]]
