"""The semantic-relevant variational graph autoencoder.

Three encoders (relevant structure, irrelevant structure, atom latents),
three decoders (structure, features, atom labels), a property predictor over
the relevant substructure, and two learned conditional-prior networks.

All operations accept leading batch dimensions; documented shapes apply to
the trailing dimensions. A model is a set of named :class:`~sci.nnkit.ParamGroup`
objects plus a frozen hyperparameter config; it is deliberately not tied to
any framework module system so checkpoints are plain named-tensor maps.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, Optional, Tuple

import torch
import torch.nn.functional as F

from .core_types import (
    BernoulliAdj,
    GaussianParams,
    MoleculeGraph,
    symmetrize_upper,
)
from .errors import DimensionError, NumericFailureError, ParameterError
from .nnkit import (
    ParamGroup,
    gat_hop_layer,
    gcn_layer,
    gumbel_softmax_edges,
    make_gat_hop,
    make_gcn,
    make_mlp,
    mlp_forward,
)

SIGMA_FLOOR = 1e-4
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters fixing every parameter shape."""

    num_nodes: int
    feat_dim: int
    latent_dim: int
    num_atom_types: int
    task: str = "classification"
    hidden_dim: int = 32
    embed_dim: int = 16
    predictor_dim: int = 32
    max_hops: int = 3
    rho_prior: float = 0.3
    learned_priors: bool = True
    attention_aggregates: str = "neighbor"

    def __post_init__(self) -> None:
        if min(self.num_nodes, self.feat_dim, self.latent_dim) < 1:
            raise ParameterError("num_nodes, feat_dim, latent_dim must be positive")
        if self.num_atom_types < 2:
            raise ParameterError("num_atom_types must be >= 2")
        if self.task not in ("classification", "regression"):
            raise ParameterError(f"unknown task {self.task!r}")
        if not 1 <= self.max_hops <= 3:
            raise ParameterError("max_hops must be in [1, 3]")
        if not 0.0 < self.rho_prior < 1.0:
            raise ParameterError("rho_prior must be in (0, 1)")
        if self.attention_aggregates not in ("neighbor", "self"):
            raise ParameterError("attention_aggregates must be 'neighbor' or 'self'")


@dataclass(frozen=True, eq=False)
class ForwardOutputs:
    """Everything one stochastic forward pass produces."""

    B_hat_r: BernoulliAdj
    B_hat_ir: BernoulliAdj
    G_r: torch.Tensor
    G_ir: torch.Tensor
    mu: torch.Tensor
    sigma: torch.Tensor
    s: torch.Tensor
    A_hat: torch.Tensor
    x_hat: torch.Tensor
    k_logits: torch.Tensor
    y_hat: torch.Tensor

    @property
    def gaussian(self) -> GaussianParams:
        return GaussianParams(self.mu, self.sigma)


class SCIModel:
    """Named parameter groups plus the hyperparameter config."""

    def __init__(self, config: ModelConfig, rng: torch.Generator):
        self.config = config
        v, d_x, n = config.num_nodes, config.feat_dim, config.latent_dim
        h, e, b = config.hidden_dim, config.embed_dim, config.predictor_dim
        K = config.num_atom_types
        m = n + b

        groups: Dict[str, ParamGroup] = {}
        groups["enc_r"] = ParamGroup(
            {"w1": _gcn_w(rng, d_x, h), "w2": _gcn_w(rng, h, e)}
        )
        groups["enc_ir"] = ParamGroup(
            {"w1": _gcn_w(rng, d_x, h), "w2": _gcn_w(rng, h, e)}
        )
        groups["enc_mu"] = make_mlp(rng, [d_x, h, h, n])
        groups["enc_sigma"] = make_mlp(rng, [d_x, h, h, n])
        groups["dec_A"] = make_mlp(rng, [2 * v * v, h, v * v])
        groups["dec_x"] = make_mlp(rng, [n + 2 * v, h, d_x])
        groups["dec_k"] = make_mlp(rng, [n, K])
        groups["pred_embed"] = make_mlp(rng, [d_x, b])
        for i in range(1, config.max_hops + 1):
            groups[f"pred_hop{i}"] = make_gat_hop(rng, b)
        groups["pred_read"] = make_gat_hop(rng, m)
        groups["pred_super"] = ParamGroup(
            {
                "attn": _vec(rng, 2 * m),
                "w_val": _gcn_w(rng, m, m),
            }
        )
        groups["pred_out"] = make_mlp(rng, [m, 1])
        groups["prior_ir_net"] = make_mlp(rng, [v * v + n, h, v * v])
        groups["prior_s_net"] = make_mlp(rng, [v, h, 2 * n])
        self.groups = groups

    def parameters(self) -> Iterator[Tuple[str, torch.Tensor]]:
        for group_name, group in self.groups.items():
            for name, t in group.items():
                yield f"{group_name}.{name}", t

    def parameter_tensors(self) -> list[torch.Tensor]:
        return [t for _, t in self.parameters()]

    def assert_finite(self, where: str = "") -> None:
        for name, group in self.groups.items():
            group.assert_finite(f"in group {name} {where}".strip())

    def state(self) -> Dict[str, Dict[str, torch.Tensor]]:
        return {name: group.state() for name, group in self.groups.items()}

    def load_state(self, state: Dict[str, Dict[str, torch.Tensor]]) -> None:
        if set(state) != set(self.groups):
            raise ParameterError(
                f"state groups {sorted(state)} do not match model groups "
                f"{sorted(self.groups)}"
            )
        for name, group in self.groups.items():
            group.load_state(state[name])


def _gcn_w(rng: torch.Generator, a: int, b: int) -> torch.Tensor:
    from .nnkit import xavier_uniform

    return xavier_uniform(rng, a, b)


def _vec(rng: torch.Generator, width: int) -> torch.Tensor:
    from .nnkit import xavier_uniform

    return xavier_uniform(rng, width, 1).squeeze(-1)


def _flatten_adj(G: torch.Tensor) -> torch.Tensor:
    v = G.shape[-1]
    return G.reshape(*G.shape[:-2], v * v)


def encode_relevant(
    model: SCIModel, x: torch.Tensor, A: torch.Tensor
) -> Tuple[torch.Tensor, BernoulliAdj]:
    """Two stacked graph convolutions, then edge probabilities sigma(Z Z^T)."""
    g = model.groups["enc_r"]
    z1 = gcn_layer(x, A, ParamGroup({"w": g["w1"]}), activation="tanh")
    z = gcn_layer(z1, A, ParamGroup({"w": g["w2"]}), activation="linear")
    B_hat = symmetrize_upper(torch.sigmoid(z @ z.mT))
    return z, B_hat


def encode_irrelevant(
    model: SCIModel, x: torch.Tensor, A: torch.Tensor
) -> Tuple[torch.Tensor, BernoulliAdj]:
    """Same contract as encode_relevant with the irrelevant-branch parameters."""
    g = model.groups["enc_ir"]
    z1 = gcn_layer(x, A, ParamGroup({"w": g["w1"]}), activation="tanh")
    z = gcn_layer(z1, A, ParamGroup({"w": g["w2"]}), activation="linear")
    B_hat = symmetrize_upper(torch.sigmoid(z @ z.mT))
    return z, B_hat


def encode_atoms(model: SCIModel, x: torch.Tensor) -> GaussianParams:
    """Per-node Gaussian posterior parameters; sigma floored strictly positive."""
    x = torch.as_tensor(x, dtype=torch.float64)
    if x.shape[-1] != model.config.feat_dim:
        raise DimensionError(
            f"x width {x.shape[-1]} != feat_dim {model.config.feat_dim}"
        )
    mu = mlp_forward(model.groups["enc_mu"], x)
    sigma = F.softplus(mlp_forward(model.groups["enc_sigma"], x)) + SIGMA_FLOOR
    return GaussianParams(mu, sigma)


def reparameterize(params: GaussianParams, rng: torch.Generator) -> torch.Tensor:
    """s = mu + sigma * standard normal noise; differentiable in mu and sigma."""
    noise = torch.randn(params.mu.shape, generator=rng, dtype=torch.float64)
    return params.mu + params.sigma * noise


def decode_structure(
    model: SCIModel, G_r: torch.Tensor, G_ir: torch.Tensor
) -> torch.Tensor:
    """Adjacency probabilities from the two substructures.

    sigmoid(MLP([G_r flattened | G_ir flattened])) reshaped to (v, v), then
    symmetrized by averaging with its transpose; entries stay in (0, 1).
    """
    G_r = torch.as_tensor(G_r, dtype=torch.float64)
    G_ir = torch.as_tensor(G_ir, dtype=torch.float64)
    if G_r.shape != G_ir.shape:
        raise DimensionError("G_r and G_ir must share a shape")
    v = model.config.num_nodes
    if G_r.shape[-2:] != (v, v):
        raise DimensionError(f"substructures must be (..., {v}, {v})")
    flat = torch.cat([_flatten_adj(G_r), _flatten_adj(G_ir)], dim=-1)
    logits = mlp_forward(model.groups["dec_A"], flat)
    raw = torch.sigmoid(logits).reshape(*G_r.shape[:-2], v, v)
    return (raw + raw.mT) / 2.0


def decode_features(
    model: SCIModel, G_r: torch.Tensor, G_ir: torch.Tensor, s: torch.Tensor
) -> torch.Tensor:
    """Per-node feature reconstruction from [s_j | G_r row j | G_ir row j]."""
    inp = torch.cat(
        [
            torch.as_tensor(s, dtype=torch.float64),
            torch.as_tensor(G_r, dtype=torch.float64),
            torch.as_tensor(G_ir, dtype=torch.float64),
        ],
        dim=-1,
    )
    return mlp_forward(model.groups["dec_x"], inp)


def decode_atom_label(model: SCIModel, s: torch.Tensor) -> torch.Tensor:
    """One affine layer from atom latents to per-node class logits."""
    s = torch.as_tensor(s, dtype=torch.float64)
    if s.shape[-1] != model.config.latent_dim:
        raise DimensionError(
            f"s width {s.shape[-1]} != latent_dim {model.config.latent_dim}"
        )
    return mlp_forward(model.groups["dec_k"], s)


def predict_property(
    model: SCIModel,
    x: torch.Tensor,
    A: torch.Tensor,
    G_r: torch.Tensor,
    s: torch.Tensor,
) -> torch.Tensor:
    """Property head: multi-hop attention on A, readout restricted to G_r.

    h0 embeds the input features; hop i applies gat_hop_layer(h, A, i); the
    per-node vectors [s | h_last] pass one attention layer on G_r and a
    supernode connected to every node aggregates them with one more attention
    (query: mean node vector). Classification returns a probability,
    regression a real scalar; shape (...,) matching leading batch dims.
    """
    cfg = model.config
    x = torch.as_tensor(x, dtype=torch.float64)
    h = mlp_forward(model.groups["pred_embed"], x)
    for i in range(1, cfg.max_hops + 1):
        h = gat_hop_layer(
            h, A, i, model.groups[f"pred_hop{i}"], aggregates=cfg.attention_aggregates
        )
    m = torch.cat([torch.as_tensor(s, dtype=torch.float64), h], dim=-1)
    m = gat_hop_layer(
        m, G_r, 1, model.groups["pred_read"], aggregates=cfg.attention_aggregates
    )

    sup = model.groups["pred_super"]
    width = m.shape[-1]
    attn = sup["attn"]
    query = m.mean(dim=-2, keepdim=True)
    logits = F.leaky_relu(
        (query @ attn[:width]).unsqueeze(-1) + (m @ attn[width:]).unsqueeze(-2), 0.2
    )
    weights = torch.softmax(logits, dim=-1)
    readout = F.elu((weights @ (m @ sup["w_val"])).squeeze(-2), 1.0)
    y_raw = mlp_forward(model.groups["pred_out"], readout).squeeze(-1)
    if cfg.task == "classification":
        return torch.sigmoid(y_raw)
    return y_raw


def prior_ir(model: SCIModel, G_r: torch.Tensor, s: torch.Tensor) -> BernoulliAdj:
    """Conditional prior over the irrelevant substructure given (G_r, s)."""
    cfg = model.config
    G_r = torch.as_tensor(G_r, dtype=torch.float64)
    if cfg.learned_priors:
        pooled = torch.as_tensor(s, dtype=torch.float64).mean(dim=-2)
        inp = torch.cat([_flatten_adj(G_r), pooled], dim=-1)
        out = torch.sigmoid(mlp_forward(model.groups["prior_ir_net"], inp))
        v = cfg.num_nodes
        return symmetrize_upper(out.reshape(*G_r.shape[:-2], v, v))
    return BernoulliAdj(torch.full_like(G_r, cfg.rho_prior))


def prior_s(model: SCIModel, G_r: torch.Tensor) -> GaussianParams:
    """Conditional prior over atom latents given each node's G_r row."""
    cfg = model.config
    G_r = torch.as_tensor(G_r, dtype=torch.float64)
    n = cfg.latent_dim
    if cfg.learned_priors:
        out = mlp_forward(model.groups["prior_s_net"], G_r)
        mu = out[..., :n]
        sigma = F.softplus(out[..., n:]) + SIGMA_FLOOR
        return GaussianParams(mu, sigma)
    shape = (*G_r.shape[:-1], n)
    return GaussianParams(
        torch.zeros(shape, dtype=torch.float64), torch.ones(shape, dtype=torch.float64)
    )


def prior_r(model: SCIModel, like: torch.Tensor) -> BernoulliAdj:
    """Fixed Bernoulli(rho_prior) prior over the relevant substructure."""
    return BernoulliAdj(
        torch.full(like.shape, model.config.rho_prior, dtype=torch.float64)
    )


_HEADS = ("B_hat_r", "B_hat_ir", "G_r", "G_ir", "mu", "sigma", "s", "A_hat", "x_hat", "k_logits", "y_hat")


def forward_tensors(
    model: SCIModel,
    x: torch.Tensor,
    A: torch.Tensor,
    rng: torch.Generator,
    temperature: float,
    *,
    hard: bool = True,
) -> ForwardOutputs:
    """Full stochastic pass on stacked tensors x (..., v, d_x), A (..., v, v).

    Noise consumption order: relevant edges, irrelevant edges, atom latents.
    ``hard=False`` propagates the relaxed edge samples instead of the
    straight-through hard ones (used by gradient checks).
    """
    _, B_hat_r = encode_relevant(model, x, A)
    _, B_hat_ir = encode_irrelevant(model, x, A)
    Gr_hard, Gr_soft = gumbel_softmax_edges(B_hat_r, temperature, rng)
    Gir_hard, Gir_soft = gumbel_softmax_edges(B_hat_ir, temperature, rng)
    G_r = Gr_hard if hard else Gr_soft
    G_ir = Gir_hard if hard else Gir_soft

    posterior = encode_atoms(model, x)
    s = reparameterize(posterior, rng)

    A_hat = decode_structure(model, G_r, G_ir)
    x_hat = decode_features(model, G_r, G_ir, s)
    k_logits = decode_atom_label(model, s)
    y_hat = predict_property(model, x, A, G_r, s)

    out = ForwardOutputs(
        B_hat_r=B_hat_r,
        B_hat_ir=B_hat_ir,
        G_r=G_r,
        G_ir=G_ir,
        mu=posterior.mu,
        sigma=posterior.sigma,
        s=s,
        A_hat=A_hat,
        x_hat=x_hat,
        k_logits=k_logits,
        y_hat=y_hat,
    )
    for head in _HEADS:
        val = getattr(out, head)
        t = val.B if isinstance(val, BernoulliAdj) else val
        if not bool(torch.isfinite(t).all()):
            raise NumericFailureError(f"non-finite values in forward head {head}")
    return out


def forward(
    model: SCIModel,
    g: MoleculeGraph,
    rng: torch.Generator,
    temperature: float,
    *,
    hard: bool = True,
) -> ForwardOutputs:
    """Full stochastic pass on one graph; deterministic given rng state."""
    if g.feat_dim != model.config.feat_dim:
        raise DimensionError(
            f"graph feat_dim {g.feat_dim} != model feat_dim {model.config.feat_dim}"
        )
    if g.num_nodes != model.config.num_nodes:
        raise DimensionError(
            f"graph has {g.num_nodes} nodes, model expects {model.config.num_nodes}"
        )
    return forward_tensors(model, g.x, g.A, rng, temperature, hard=hard)


def save_checkpoint(
    model: SCIModel,
    path: Path | str,
    *,
    extra: Optional[dict] = None,
    rng_state: Optional[torch.Tensor] = None,
) -> None:
    """Single-file binary checkpoint: config, named tensors, rng state, extras."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(model.config),
        "params": model.state(),
        "rng_state": rng_state,
        "extra": extra or {},
    }
    torch.save(payload, str(path))


def load_checkpoint(path: Path | str) -> Tuple[SCIModel, dict]:
    """Rebuild a model from a checkpoint; round-trips parameters exactly."""
    try:
        payload = torch.load(str(path), weights_only=False)
    except Exception as exc:
        raise ParameterError(f"cannot load checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "config" not in payload or "params" not in payload:
        raise ParameterError(f"not a model checkpoint: {path}")
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ParameterError(
            f"unsupported checkpoint version {payload.get('format_version')!r}"
        )
    config = ModelConfig(**payload["config"])
    model = SCIModel(config, torch.Generator().manual_seed(0))
    model.load_state(payload["params"])
    return model, payload
