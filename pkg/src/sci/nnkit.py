"""Differentiable neural primitives with explicit numerical contracts.

Everything here runs in float64. Operations accept leading batch dimensions:
documented shapes apply to the trailing dimensions. Parameters live in
:class:`ParamGroup` objects whose tensors carry ``requires_grad`` so torch
autograd provides the analytic gradient route; :func:`finite_diff_gradcheck`
provides the independent numeric route by re-evaluating the loss under
manual coordinate perturbations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, Mapping, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .core_types import EPS, BernoulliAdj
from .errors import DeterminismError, DimensionError, NumericFailureError, ParameterError

LEAKY_SLOPE = 0.2
ELU_ALPHA = 1.0


def _as_float(t) -> torch.Tensor:
    return torch.as_tensor(t, dtype=torch.float64)


class ParamGroup(Mapping[str, torch.Tensor]):
    """Named mapping from parameter name to a float64 tensor with a gradient slot.

    Tensors are leaves with ``requires_grad=True``; the gradient slot is the
    tensor's ``.grad``. A group is single-writer during backward passes and
    safe for concurrent read-only inference.
    """

    def __init__(self, tensors: Mapping[str, torch.Tensor]):
        self._tensors: Dict[str, torch.Tensor] = {}
        for name, t in tensors.items():
            t = _as_float(t)
            if not t.is_leaf or not t.requires_grad:
                t = t.detach().clone().requires_grad_(True)
            self._tensors[name] = t

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def tensors(self) -> Dict[str, torch.Tensor]:
        return dict(self._tensors)

    def zero_(self) -> "ParamGroup":
        """Set every parameter to zero in place (keeps gradient history off)."""
        with torch.no_grad():
            for t in self._tensors.values():
                t.zero_()
        return self

    def assert_finite(self, where: str = "") -> None:
        for name, t in self._tensors.items():
            if not bool(torch.isfinite(t).all()):
                raise NumericFailureError(f"non-finite parameter {name} {where}".strip())

    def state(self) -> Dict[str, torch.Tensor]:
        """Detached copies of every tensor, for checkpointing."""
        return {name: t.detach().clone() for name, t in self._tensors.items()}

    def load_state(self, state: Mapping[str, torch.Tensor]) -> None:
        if set(state) != set(self._tensors):
            raise ParameterError(
                f"state names {sorted(state)} do not match group names {sorted(self._tensors)}"
            )
        with torch.no_grad():
            for name, t in self._tensors.items():
                src = _as_float(state[name])
                if src.shape != t.shape:
                    raise DimensionError(f"state tensor {name} has shape {tuple(src.shape)}")
                t.copy_(src)


def xavier_uniform(rng: torch.Generator, fan_in: int, fan_out: int) -> torch.Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    w = torch.rand((fan_in, fan_out), generator=rng, dtype=torch.float64)
    return (w * 2.0 - 1.0) * bound


def make_mlp(rng: torch.Generator, sizes: Sequence[int]) -> ParamGroup:
    """Parameters for an MLP with the given layer widths (len >= 2).

    Layer i maps sizes[i] -> sizes[i+1] via weight ``w{i}`` and bias ``b{i}``.
    """
    if len(sizes) < 2:
        raise ParameterError("an MLP needs at least one layer (two widths)")
    tensors: Dict[str, torch.Tensor] = {}
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        tensors[f"w{i}"] = xavier_uniform(rng, a, b)
        tensors[f"b{i}"] = torch.zeros(b, dtype=torch.float64)
    return ParamGroup(tensors)


def mlp_forward(
    params: ParamGroup, input: torch.Tensor, *, hidden_activation: str = "tanh"
) -> torch.Tensor:
    """Composition of affine layers with a nonlinearity between layers only.

    A one-layer group is therefore purely affine. Differentiable with respect
    to both the parameters and the input.
    """
    num_layers = sum(1 for name in params if name.startswith("w"))
    h = _as_float(input)
    for i in range(num_layers):
        w, b = params[f"w{i}"], params[f"b{i}"]
        if h.shape[-1] != w.shape[0]:
            raise DimensionError(
                f"layer {i} expects width {w.shape[0]}, got {h.shape[-1]}"
            )
        h = h @ w + b
        if i < num_layers - 1:
            if hidden_activation == "tanh":
                h = torch.tanh(h)
            elif hidden_activation == "linear":
                pass
            else:
                raise ParameterError(f"unknown activation {hidden_activation!r}")
    return h


def make_gcn(rng: torch.Generator, in_dim: int, out_dim: int) -> ParamGroup:
    return ParamGroup({"w": xavier_uniform(rng, in_dim, out_dim)})


def gcn_layer(
    x: torch.Tensor,
    A: torch.Tensor,
    params: ParamGroup,
    *,
    activation: str = "tanh",
) -> torch.Tensor:
    """Symmetric-normalized graph convolution without bias.

    output = act(D^{-1/2} (A + I) D^{-1/2} x W) with D the degree matrix of
    A + I, so isolated nodes self-normalize to weight one.
    """
    x = _as_float(x)
    A = _as_float(A)
    if A.shape[-1] != A.shape[-2]:
        raise DimensionError(f"A must be square, got {tuple(A.shape)}")
    if A.shape[-1] != x.shape[-2]:
        raise DimensionError(
            f"A has {A.shape[-1]} nodes but x has {x.shape[-2]} rows"
        )
    w = params["w"]
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"x width {x.shape[-1]} != W rows {w.shape[0]}")
    eye = torch.eye(A.shape[-1], dtype=torch.float64)
    A_hat = A + eye
    inv_sqrt_deg = A_hat.sum(dim=-1).pow(-0.5)
    norm = A_hat * inv_sqrt_deg.unsqueeze(-1) * inv_sqrt_deg.unsqueeze(-2)
    out = norm @ x @ w
    if activation == "tanh":
        return torch.tanh(out)
    if activation == "linear":
        return out
    raise ParameterError(f"unknown activation {activation!r}")


def k_hop_mask(A: torch.Tensor, hops: int) -> torch.Tensor:
    """Boolean mask of nodes at shortest-path distance in [1, hops].

    Cumulative neighborhood: computed as ((A + I)^hops > 0) minus the
    diagonal, so each extra hop strictly enlarges the receptive field.
    """
    if hops < 1:
        raise ParameterError("hops must be >= 1")
    A = _as_float(A)
    if A.shape[-1] != A.shape[-2]:
        raise DimensionError(f"A must be square, got {tuple(A.shape)}")
    v = A.shape[-1]
    eye = torch.eye(v, dtype=torch.float64)
    reach = (A + eye).bool().to(torch.float64)
    power = reach
    for _ in range(hops - 1):
        power = ((power @ reach) > 0).to(torch.float64)
    mask = power > 0
    return mask & ~torch.eye(v, dtype=torch.bool)


def make_gat_hop(rng: torch.Generator, dim: int) -> ParamGroup:
    """Parameters for one attention hop: attention vector, value map, GRU gates."""
    tensors: Dict[str, torch.Tensor] = {
        "attn": xavier_uniform(rng, 2 * dim, 1).squeeze(-1),
        "w_val": xavier_uniform(rng, dim, dim),
    }
    for gate in ("z", "r", "h"):
        tensors[f"w_{gate}"] = xavier_uniform(rng, dim, dim)
        tensors[f"u_{gate}"] = xavier_uniform(rng, dim, dim)
        tensors[f"b_{gate}"] = torch.zeros(dim, dtype=torch.float64)
    return ParamGroup(tensors)


def gat_hop_layer(
    h_prev: torch.Tensor,
    A: torch.Tensor,
    hop_order: int,
    params: ParamGroup,
    *,
    aggregates: str = "neighbor",
) -> torch.Tensor:
    """One multi-hop attention step followed by a gated recurrent update.

    For node j, attention logits leaky_relu(attn . [h_j, h_k]) are softmaxed
    over the order-``hop_order`` neighborhood of j; the context is
    C_j = elu(sum_k a_jk W h_k) (``aggregates="neighbor"``) or the variant
    with the node's own features h_j in place of h_k (``aggregates="self"``).
    Nodes with an empty neighborhood get C_j = 0 so the GRU falls back to a
    recurrent self-update. Output width equals input width.
    """
    if aggregates not in ("neighbor", "self"):
        raise ParameterError(f"aggregates must be 'neighbor' or 'self', got {aggregates!r}")
    h_prev = _as_float(h_prev)
    A = _as_float(A)
    dim = h_prev.shape[-1]
    attn = params["attn"]
    if attn.shape[-1] != 2 * dim:
        raise DimensionError(f"attn expects width {attn.shape[-1] // 2}, got {dim}")
    if A.shape[-1] != h_prev.shape[-2]:
        raise DimensionError(
            f"A has {A.shape[-1]} nodes but h_prev has {h_prev.shape[-2]} rows"
        )
    mask = k_hop_mask(A, hop_order)

    src = h_prev @ attn[:dim]
    dst = h_prev @ attn[dim:]
    logits = F.leaky_relu(src.unsqueeze(-1) + dst.unsqueeze(-2), LEAKY_SLOPE)
    # Finite sentinel keeps softmax defined on empty rows; the mask multiply
    # afterwards zeroes any leakage, giving those rows zero context exactly.
    sentinel = torch.full_like(logits, -1e30)
    weights = torch.softmax(torch.where(mask, logits, sentinel), dim=-1)
    weights = weights * mask.to(torch.float64)

    values = h_prev @ params["w_val"]
    if aggregates == "neighbor":
        context = F.elu(weights @ values, ELU_ALPHA)
    else:
        context = F.elu(weights.sum(dim=-1, keepdim=True) * values, ELU_ALPHA)

    z = torch.sigmoid(context @ params["w_z"] + h_prev @ params["u_z"] + params["b_z"])
    r = torch.sigmoid(context @ params["w_r"] + h_prev @ params["u_r"] + params["b_r"])
    h_tilde = torch.tanh(
        context @ params["w_h"] + (r * h_prev) @ params["u_h"] + params["b_h"]
    )
    return (1.0 - z) * h_prev + z * h_tilde


def gumbel_softmax_edges(
    B: BernoulliAdj, temperature: float, rng: torch.Generator
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Sample a binary symmetric adjacency from independent edge Bernoullis.

    Per strict-upper entry this draws the two-category Gumbel-Softmax
    relaxation of Bernoulli(B_ij): with logit theta and the difference of two
    Gumbel draws (a standard logistic variable L),
    soft = sigmoid((theta + L) / temperature). The hard output discretizes at
    0.5 with a straight-through gradient (hard forward, relaxed backward).
    The hard marginal is exactly Bernoulli(B_ij) at any temperature. Both
    outputs are symmetric with zero diagonal.

    Returns (hard, soft).
    """
    if temperature <= 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    prob = B.B
    theta = torch.log(prob) - torch.log1p(-prob)
    u = torch.rand(prob.shape, generator=rng, dtype=torch.float64)
    u = u.clamp(1e-12, 1.0 - 1e-12)
    logistic = torch.log(u) - torch.log1p(-u)
    upper = torch.triu(logistic, diagonal=1)
    noise = upper + upper.mT

    v = prob.shape[-1]
    off_diag = 1.0 - torch.eye(v, dtype=torch.float64)
    soft = torch.sigmoid((theta + noise) / temperature) * off_diag
    hard_binary = (soft > 0.5).to(torch.float64)
    hard = soft + (hard_binary - soft).detach()
    return hard, soft


@dataclass(frozen=True)
class GradcheckReport:
    """Maximum relative error per parameter tensor from central differences."""

    max_rel_error: Dict[str, float]
    worst: float
    tolerance: float
    passed: bool

    def __str__(self) -> str:
        lines = [f"gradcheck tolerance {self.tolerance:g}: {'pass' if self.passed else 'FAIL'}"]
        for name, err in sorted(self.max_rel_error.items()):
            lines.append(f"  {name}: {err:.3e}")
        return "\n".join(lines)


def finite_diff_gradcheck(
    loss_fn: Callable[[ParamGroup], torch.Tensor],
    params: ParamGroup,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    *,
    max_coords: int = 100,
    seed: int = 0,
) -> GradcheckReport:
    """Compare autograd gradients against central finite differences.

    ``loss_fn`` must be deterministic (any internal randomness frozen): it is
    called twice up front and a mismatch raises ``DeterminismError``. Up to
    ``max_coords`` coordinates per tensor are probed, sampled with a seeded
    generator. The relative error convention is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    base_a = float(loss_fn(params).detach())
    base_b = float(loss_fn(params).detach())
    if base_a != base_b:
        raise DeterminismError(
            f"loss_fn is not deterministic: {base_a!r} != {base_b!r}"
        )

    loss = loss_fn(params)
    tensors = list(params.tensors().items())
    grads = torch.autograd.grad(
        loss, [t for _, t in tensors], allow_unused=True, retain_graph=False
    )

    coord_rng = np.random.default_rng(seed)
    max_rel: Dict[str, float] = {}
    for (name, t), grad in zip(tensors, grads):
        analytic = torch.zeros_like(t) if grad is None else grad
        numel = t.numel()
        if numel <= max_coords:
            coords = np.arange(numel)
        else:
            coords = coord_rng.choice(numel, size=max_coords, replace=False)
        flat = t.view(-1)
        worst = 0.0
        for idx in coords:
            idx = int(idx)
            orig = flat[idx].item()
            with torch.no_grad():
                flat[idx] = orig + step
            f_plus = float(loss_fn(params).detach())
            with torch.no_grad():
                flat[idx] = orig - step
            f_minus = float(loss_fn(params).detach())
            with torch.no_grad():
                flat[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = analytic.view(-1)[idx].item()
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, rel)
        max_rel[name] = worst

    overall = max(max_rel.values()) if max_rel else 0.0
    return GradcheckReport(
        max_rel_error=max_rel,
        worst=overall,
        tolerance=tolerance,
        passed=overall <= tolerance,
    )
