"""Training objectives: closed-form KLs, ELBO assembly, shuffle augmentation,
the substructure regularizer with its entropy term, sparsity penalties, and
the total loss.

Reduction convention: every term is a sum over one graph's elements
(upper-triangle edges, node-feature entries, nodes, the property), then a
mean over any leading batch dimensions, so batched and single-graph values
are on the same scale. All terms are 0-dim float64 tensors and stay
differentiable; use :meth:`LossBreakdown.as_floats` for logging.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import List, Sequence, Tuple, Union

import torch
from scipy.special import digamma

from .core_types import (
    EPS,
    BernoulliAdj,
    GaussianParams,
    MoleculeGraph,
    upper_triangle,
)
from .errors import DimensionError, NumericFailureError, ParameterError
from .svae import (
    ForwardOutputs,
    SCIModel,
    decode_structure,
    encode_relevant,
    prior_ir,
    prior_r,
    prior_s,
)

LOG_2PI = math.log(2.0 * math.pi)
KNN_ENTROPY_K = 3
KNN_DISTANCE_FLOOR = 1e-12

Batch = Union[torch.Tensor, Sequence[torch.Tensor]]


@dataclass(frozen=True, eq=False)
class LossBreakdown:
    """Every objective term; rec_* are log-likelihoods (sign convention:
    neg_elbo = kl_gr + kl_gir + kl_s - rec_A - rec_x - rec_k - rec_y)."""

    kl_gr: torch.Tensor
    kl_gir: torch.Tensor
    kl_s: torch.Tensor
    rec_A: torch.Tensor
    rec_x: torch.Tensor
    rec_k: torch.Tensor
    rec_y: torch.Tensor
    neg_elbo: torch.Tensor
    L_r: torch.Tensor
    L_h: torch.Tensor
    L_n: torch.Tensor
    total: torch.Tensor

    FIELDS = (
        "kl_gr", "kl_gir", "kl_s", "rec_A", "rec_x", "rec_k", "rec_y",
        "neg_elbo", "L_r", "L_h", "L_n", "total",
    )

    def as_floats(self) -> dict:
        return {
            name: float(torch.as_tensor(getattr(self, name)).detach())
            for name in self.FIELDS
        }


def _scalar(x: float = 0.0) -> torch.Tensor:
    return torch.tensor(float(x), dtype=torch.float64)


def _reduce(per_graph: torch.Tensor) -> torch.Tensor:
    """Mean over leading batch dims of an already-summed per-graph value."""
    return per_graph.mean() if per_graph.ndim > 0 else per_graph


def _check_term(name: str, value: torch.Tensor) -> torch.Tensor:
    if not bool(torch.isfinite(value).all()):
        raise NumericFailureError(f"non-finite loss term {name}")
    return value


def kl_bernoulli(q: BernoulliAdj, p: BernoulliAdj) -> torch.Tensor:
    """Sum over strict-upper entries of KL(Bern(q) || Bern(p)); >= 0."""
    if q.B.shape != p.B.shape:
        raise DimensionError(
            f"shape mismatch {tuple(q.B.shape)} vs {tuple(p.B.shape)}"
        )
    qu, pu = upper_triangle(q.B), upper_triangle(p.B)
    kl = qu * (torch.log(qu) - torch.log(pu)) + (1.0 - qu) * (
        torch.log1p(-qu) - torch.log1p(-pu)
    )
    return _reduce(kl.sum(dim=-1))


def kl_gaussian(q: GaussianParams, p: GaussianParams) -> torch.Tensor:
    """Sum over (node, component) of KL(N(q) || N(p)) for diagonal Gaussians."""
    if q.mu.shape != p.mu.shape:
        raise DimensionError(
            f"shape mismatch {tuple(q.mu.shape)} vs {tuple(p.mu.shape)}"
        )
    kl = (
        torch.log(p.sigma / q.sigma)
        + (q.sigma**2 + (q.mu - p.mu) ** 2) / (2.0 * p.sigma**2)
        - 0.5
    )
    return _reduce(kl.sum(dim=(-2, -1)))


def bernoulli_loglik_upper(sample: torch.Tensor, B: BernoulliAdj) -> torch.Tensor:
    """Log-likelihood of a binary symmetric sample's strict upper triangle."""
    su, pu = upper_triangle(torch.as_tensor(sample, dtype=torch.float64)), upper_triangle(B.B)
    ll = su * torch.log(pu) + (1.0 - su) * torch.log1p(-pu)
    return _reduce(ll.sum(dim=-1))


def gaussian_loglik(value: torch.Tensor, params: GaussianParams) -> torch.Tensor:
    """Diagonal Gaussian log-density summed over (node, component)."""
    value = torch.as_tensor(value, dtype=torch.float64)
    ll = -0.5 * (
        ((value - params.mu) / params.sigma) ** 2
        + 2.0 * torch.log(params.sigma)
        + LOG_2PI
    )
    return _reduce(ll.sum(dim=(-2, -1)))


def loglik_adjacency(A: torch.Tensor, A_hat: torch.Tensor) -> torch.Tensor:
    """Bernoulli log-likelihood of the observed adjacency's upper triangle."""
    au = upper_triangle(torch.as_tensor(A, dtype=torch.float64))
    pu = upper_triangle(torch.as_tensor(A_hat, dtype=torch.float64)).clamp(EPS, 1.0 - EPS)
    ll = au * torch.log(pu) + (1.0 - au) * torch.log1p(-pu)
    return _reduce(ll.sum(dim=-1))


def loglik_features(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Unit-variance Gaussian log-likelihood of the features."""
    x = torch.as_tensor(x, dtype=torch.float64)
    ll = -0.5 * ((x - x_hat) ** 2 + LOG_2PI)
    return _reduce(ll.sum(dim=(-2, -1)))


def loglik_labels(k: torch.Tensor, k_logits: torch.Tensor) -> torch.Tensor:
    """Categorical log-likelihood of the atom labels."""
    k = torch.as_tensor(k, dtype=torch.int64)
    logp = torch.log_softmax(k_logits, dim=-1)
    picked = torch.gather(logp, -1, k.unsqueeze(-1)).squeeze(-1)
    return _reduce(picked.sum(dim=-1))


def loglik_property(y: torch.Tensor, y_hat: torch.Tensor, task: str) -> torch.Tensor:
    """Bernoulli (classification) or unit-variance Gaussian (regression)."""
    y = torch.as_tensor(y, dtype=torch.float64)
    if task == "classification":
        p = torch.as_tensor(y_hat, dtype=torch.float64).clamp(EPS, 1.0 - EPS)
        ll = y * torch.log(p) + (1.0 - y) * torch.log1p(-p)
    elif task == "regression":
        ll = -0.5 * ((y - y_hat) ** 2 + LOG_2PI)
    else:
        raise ParameterError(f"unknown task {task!r}")
    return _reduce(ll)


def elbo_tensors(
    outputs: ForwardOutputs,
    x: torch.Tensor,
    A: torch.Tensor,
    k: torch.Tensor,
    y: torch.Tensor,
    task: str,
    model: SCIModel,
    *,
    include_atom_classifier: bool = True,
) -> LossBreakdown:
    """Single-sample ELBO terms for stacked targets; see :func:`elbo`."""
    kl_gr = _check_term("kl_gr", kl_bernoulli(outputs.B_hat_r, prior_r(model, outputs.B_hat_r.B)))
    kl_gir = _check_term(
        "kl_gir", kl_bernoulli(outputs.B_hat_ir, prior_ir(model, outputs.G_r, outputs.s))
    )
    kl_s = _check_term(
        "kl_s", kl_gaussian(outputs.gaussian, prior_s(model, outputs.G_r))
    )
    rec_A = _check_term("rec_A", loglik_adjacency(A, outputs.A_hat))
    rec_x = _check_term("rec_x", loglik_features(x, outputs.x_hat))
    if include_atom_classifier:
        rec_k = _check_term("rec_k", loglik_labels(k, outputs.k_logits))
    else:
        rec_k = _scalar(0.0)
    rec_y = _check_term("rec_y", loglik_property(y, outputs.y_hat, task))
    neg_elbo = kl_gr + kl_gir + kl_s - rec_A - rec_x - rec_k - rec_y
    zero = _scalar(0.0)
    return LossBreakdown(
        kl_gr=kl_gr,
        kl_gir=kl_gir,
        kl_s=kl_s,
        rec_A=rec_A,
        rec_x=rec_x,
        rec_k=rec_k,
        rec_y=rec_y,
        neg_elbo=neg_elbo,
        L_r=zero,
        L_h=zero,
        L_n=zero,
        total=neg_elbo,
    )


def elbo(
    outputs: ForwardOutputs,
    g: MoleculeGraph,
    model: SCIModel,
    *,
    include_atom_classifier: bool = True,
) -> LossBreakdown:
    """Single-sample negative-ELBO terms for one graph.

    KLs: relevant structure against the fixed sparse Bernoulli prior,
    irrelevant structure against the conditional prior given (G_r, s), atom
    latents against the conditional prior given G_r. Reconstruction terms are
    log-likelihoods of A, x, k, y under the decoded heads. The returned
    breakdown is partial: regularizer fields are zero and ``total`` equals
    ``neg_elbo`` until :func:`total_loss` completes it.
    """
    return elbo_tensors(
        outputs,
        g.x,
        g.A,
        g.k,
        torch.tensor(g.y, dtype=torch.float64),
        g.task,
        model,
        include_atom_classifier=include_atom_classifier,
    )


def _derangement(size: int, rng: torch.Generator) -> torch.Tensor:
    """Uniform random derangement by rejection sampling."""
    idx = torch.arange(size)
    while True:
        perm = torch.randperm(size, generator=rng)
        if not bool((perm == idx).any()):
            return perm


def shuffle_augment(G_ir_batch: Batch, rng: torch.Generator) -> Batch:
    """Reassign each graph's irrelevant substructure to a different graph.

    Applies a uniform derangement of batch indices (no element keeps its
    position). A batch of one cannot be deranged: it is returned unchanged
    with a warning. Accepts a stacked (B, v, v) tensor or a sequence of
    (v, v) tensors and returns the same container kind.
    """
    is_tensor = isinstance(G_ir_batch, torch.Tensor)
    size = G_ir_batch.shape[0] if is_tensor else len(G_ir_batch)
    if size == 0:
        raise ParameterError("empty batch")
    if size == 1:
        warnings.warn("batch of size 1 cannot be deranged; returning unchanged")
        return G_ir_batch if is_tensor else list(G_ir_batch)
    perm = _derangement(size, rng)
    if is_tensor:
        return G_ir_batch[perm]
    return [G_ir_batch[int(i)] for i in perm]


def augmented_structures(
    model: SCIModel, G_r_batch: Batch, G_ir_shuffled: Batch
) -> Batch:
    """Counterfactual adjacencies from recombined substructure pairs.

    Decodes each (G_r_i, shuffled G_ir_i) pair and hard-thresholds at 0.5
    into a binary symmetric zero-diagonal matrix, detached from the graph:
    augmented structures are re-encoded as data.
    """
    is_tensor = isinstance(G_r_batch, torch.Tensor)
    G_r = G_r_batch if is_tensor else torch.stack([torch.as_tensor(g, dtype=torch.float64) for g in G_r_batch])
    G_ir = (
        G_ir_shuffled
        if isinstance(G_ir_shuffled, torch.Tensor)
        else torch.stack([torch.as_tensor(g, dtype=torch.float64) for g in G_ir_shuffled])
    )
    if G_r.shape != G_ir.shape:
        raise DimensionError("batch shapes must match")
    A_hat = decode_structure(model, G_r, G_ir)
    v = A_hat.shape[-1]
    off_diag = 1.0 - torch.eye(v, dtype=torch.float64)
    A_aug = ((A_hat >= 0.5).to(torch.float64) * off_diag).detach()
    return A_aug if is_tensor else list(A_aug)


def knn_entropy(
    points: torch.Tensor,
    k: int = KNN_ENTROPY_K,
    *,
    floor: float = KNN_DISTANCE_FLOOR,
) -> torch.Tensor:
    """Kozachenko-Leonenko k-nearest-neighbor differential entropy estimate.

    H = psi(N) - psi(k) + ln V_m + (m/N) sum_i ln r_i with r_i the distance
    to the k-th nearest neighbor and V_m the unit-ball volume in dimension m.
    Distances are floored so duplicate points give a large negative (not
    infinite) entropy. Differentiable in the points.
    """
    points = torch.as_tensor(points, dtype=torch.float64)
    if points.ndim != 2:
        raise DimensionError(f"points must be (N, m), got {tuple(points.shape)}")
    N, m = points.shape
    if k < 1:
        raise ParameterError("k must be >= 1")
    if N < k + 1:
        raise ParameterError(f"need at least k+1 = {k + 1} points, got {N}")
    dist = torch.cdist(points, points)
    dist = dist.masked_fill(torch.eye(N, dtype=torch.bool), float("inf"))
    r_k = dist.kthvalue(k, dim=1).values.clamp_min(floor)
    log_vm = (m / 2.0) * math.log(math.pi) - math.lgamma(m / 2.0 + 1.0)
    return (
        float(digamma(N))
        - float(digamma(k))
        + log_vm
        + (m / N) * torch.log(r_k).sum()
    )


def _stack(batch: Batch) -> torch.Tensor:
    if isinstance(batch, torch.Tensor):
        return torch.as_tensor(batch, dtype=torch.float64)
    return torch.stack([torch.as_tensor(b, dtype=torch.float64) for b in batch])


def substructure_regularizer(
    model: SCIModel, x_batch: Batch, A_batch: Batch, A_aug_batch: Batch
) -> torch.Tensor:
    """Alignment-minus-entropy regularizer on the relevant encoder.

    L_r = mean_i ||B_hat_r(x_i, A_i) - B_hat_r(x_i, A'_i)||^2 - H(B_hat_r batch)
    where the entropy is the kNN estimate over the batch of upper-triangle
    edge-probability vectors of the unaugmented inputs. Needs batch >= 4 so
    the k=3 entropy estimator has neighbors.
    """
    x = _stack(x_batch)
    A = _stack(A_batch)
    A_aug = _stack(A_aug_batch)
    if not (x.shape[0] == A.shape[0] == A_aug.shape[0]):
        raise DimensionError("batch lengths must match")
    if x.shape[0] < KNN_ENTROPY_K + 1:
        raise ParameterError(
            f"substructure regularizer needs batch >= {KNN_ENTROPY_K + 1}, "
            f"got {x.shape[0]}"
        )
    _, B_orig = encode_relevant(model, x, A)
    _, B_aug = encode_relevant(model, x, A_aug)
    u_orig = upper_triangle(B_orig.B)
    u_aug = upper_triangle(B_aug.B)
    align = ((u_orig - u_aug) ** 2).sum(dim=-1).mean()
    entropy = knn_entropy(u_orig, KNN_ENTROPY_K)
    return align - entropy


def sparsity_penalty(B: BernoulliAdj) -> torch.Tensor:
    """Mean strict-upper edge probability (L1 of nonnegative entries)."""
    return upper_triangle(B.B).mean()


def total_loss(
    parts: LossBreakdown, alpha: float, beta: float, gamma: float
) -> LossBreakdown:
    """Complete a breakdown: total = neg_elbo + alpha*L_r + beta*L_h + gamma*L_n."""
    total = parts.neg_elbo + alpha * parts.L_r + beta * parts.L_h + gamma * parts.L_n
    _check_term("total", total)
    return replace(parts, total=total)
