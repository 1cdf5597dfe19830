"""Synthetic ground-truth generator with recorded latents, plus serialization.

The generative process per record: a context supplies the per-node attribute
distribution; atom latents are strictly monotone componentwise maps of the
attributes plus small noise; the relevant substructure is drawn from a
context-assigned motif probability matrix, the irrelevant one from a sparse
context-assigned background matrix; the observed adjacency composes the two;
atom labels are the argmax of a fixed full-rank linear map of the latents;
the property reads out the relevant substructure and the latents only.

Every latent is recorded so identifiability metrics can score recovery
against the truth. Sampling derives one generator per record index, so
datasets are reproducible and the index space is partitionable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

from .core_types import (
    EPS,
    BernoulliAdj,
    Dataset,
    GroundTruthRecord,
    MoleculeGraph,
    TASKS,
)
from .errors import DatasetError, DimensionError, ParameterError

OVERLAP_POLICIES = ("union", "relevant_wins")

MOTIF_EDGE_PROB = 0.9
BACKGROUND_EDGE_PROB = 0.08
CALIBRATION_SAMPLES = 2000

# Attribute-geometry scales. Attribute components split into two channels:
# the first n "factor" components drive the latents (componentwise monotone
# map), the remaining d_x - n "identity" components carry per-node signatures
# and the context offset. Keeping signatures off the factor components stops
# a compressed node-identity code from being the cheapest thing to store in
# the latent bottleneck, and giving the factor components distinct scales
# breaks rotational symmetry so componentwise recovery is preferred.
# Signatures must stand above the per-node noise so node identity (and with
# it the motif placement) stays readable from the attributes; the context
# mean offset must stand above the node-averaged noise so the context is
# readable.
SIGNATURE_SCALE = 2.5
CONTEXT_MEAN_SCALE = 0.8
CONTEXT_ALIGN_SCALE = 1.1
CONTEXT_STD_LOW = 0.3
CONTEXT_STD_HIGH = 0.7
FACTOR_STD_LOW = 1.4
FACTOR_STD_HIGH = 3.0
FACTOR_STD_JITTER = 0.25
GK_SCALE = 1.5
GK_STD_SAMPLES = 256
GY_EDGE_LOW = 0.9
GY_EDGE_HIGH = 1.1
GY_S_SCALE = 0.05


@dataclass(frozen=True)
class GenConfig:
    """Configuration of the synthetic process."""

    v: int
    n: int
    d_x: int
    K: int
    num_contexts: int
    motif_bank_size: int = 9
    noise_scale: float = 0.05
    overlap_policy: str = "union"
    seed: int = 0
    task: str = "classification"

    def __post_init__(self) -> None:
        if self.v < 2:
            raise ParameterError("v must be >= 2")
        if self.n < 1:
            raise ParameterError("n must be >= 1")
        if self.d_x < self.n:
            raise ParameterError(
                "d_x must be >= n (each latent component is a monotone map of "
                "one attribute component)"
            )
        if self.K < 2:
            raise ParameterError("K must be >= 2")
        if self.num_contexts < 2 * self.n + 1:
            raise ParameterError(
                f"num_contexts must be >= 2n+1 = {2 * self.n + 1} "
                f"(context coverage requirement), got {self.num_contexts}"
            )
        if self.motif_bank_size < 1:
            raise ParameterError("motif_bank_size must be >= 1")
        if self.noise_scale <= 0:
            raise ParameterError("noise_scale must be positive")
        if self.overlap_policy not in OVERLAP_POLICIES:
            raise ParameterError(
                f"overlap_policy must be one of {OVERLAP_POLICIES}"
            )
        if self.task not in TASKS:
            raise ParameterError(f"task must be one of {TASKS}")


@dataclass(frozen=True, eq=False)
class GroundTruthProcess:
    """Frozen parameters of the synthetic process, deterministic in the seed."""

    cfg: GenConfig
    context_means: np.ndarray
    context_stds: np.ndarray
    node_signatures: np.ndarray
    fs_a: np.ndarray
    fs_b: np.ndarray
    fs_c: np.ndarray
    B_r_contexts: np.ndarray
    B_ir_contexts: np.ndarray
    gk_w: np.ndarray
    gk_b: np.ndarray
    gy_edge_w: np.ndarray
    gy_s_w: np.ndarray
    gy_bias: float
    gy_threshold: float

    def f_s(self, x: np.ndarray) -> np.ndarray:
        """Componentwise strictly monotone map from attributes to latents."""
        xi = x[..., : self.cfg.n]
        return self.fs_a * xi + self.fs_b * xi**3 + self.fs_c

    def b_r_true(self, context_id: int) -> BernoulliAdj:
        return BernoulliAdj(self.B_r_contexts[context_id])

    def b_ir_true(self, context_id: int) -> BernoulliAdj:
        return BernoulliAdj(self.B_ir_contexts[context_id])

    def g_y_logit(self, G_r: np.ndarray, s: np.ndarray) -> float:
        edge_part = float((np.triu(self.gy_edge_w, 1) * np.triu(G_r, 1)).sum())
        s_part = float(self.gy_s_w @ s.mean(axis=0))
        return edge_part + s_part + self.gy_bias


def _motif_bank(rng: np.random.Generator, v: int, size: int) -> np.ndarray:
    """Binary motif adjacencies: rings, chains, and stars on node subsets.

    For v >= 5 every motif carries the same edge count (a ring on v-2 nodes,
    a chain or star on v-1), so the expected total relevant-edge weight is
    context-independent and the property label hinges on which edges are
    realized rather than on which motif the context uses. Subsets are drawn
    independently per entry, so banks differ in support. Below v = 5 the
    subset size steps down instead (too few nodes to equalize counts).
    """
    motifs = np.zeros((size, v, v), dtype=np.float64)
    min_size = 3
    for t in range(size):
        shape = ("ring", "chain", "star")[t % 3]
        if v >= 5:
            span = v - 2 if shape == "ring" else v - 1
        else:
            span = max(min_size, v - ((t // 3) % (v - min_size + 1)))
        nodes = rng.permutation(v)[:span]
        edges: List[Tuple[int, int]] = []
        if shape == "ring":
            edges = [(nodes[i], nodes[(i + 1) % span]) for i in range(span)]
        elif shape == "chain":
            edges = [(nodes[i], nodes[i + 1]) for i in range(span - 1)]
        else:
            edges = [(nodes[0], nodes[i]) for i in range(1, span)]
        for a, b in edges:
            motifs[t, a, b] = 1.0
            motifs[t, b, a] = 1.0
    return motifs


def make_process(cfg: GenConfig) -> GroundTruthProcess:
    """Freeze a synthetic process: deterministic given cfg.seed.

    Per-context attribute distributions vary in both mean and per-component
    standard deviation, so contexts modulate every latent component. The
    property threshold is calibrated on a dedicated sample stream so later
    record sampling is unaffected.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xC0FFEE]))
    C, n, d_x, v = cfg.num_contexts, cfg.n, cfg.d_x, cfg.v

    # Stable per-node mean offsets shared across contexts on the identity
    # components only: node identity is readable from the attributes (so
    # index-tied structure — which nodes a motif occupies, per-pair property
    # weights — is learnable by a permutation-equivariant model) without
    # contaminating the factor components the latents are a map of.
    node_signatures = rng.uniform(-SIGNATURE_SCALE, SIGNATURE_SCALE, size=(v, d_x))
    node_signatures[:, :n] = 0.0

    motifs = _motif_bank(rng, v, cfg.motif_bank_size)

    # Context and relevant structure share a cause, so the context's
    # attribute mean carries the signatures of the nodes its motif occupies
    # (atoms of the active substructure have distinctive attributes); the
    # per-component scales modulate every latent's conditional variance.
    context_means = CONTEXT_MEAN_SCALE * rng.uniform(-1.0, 1.0, size=(C, d_x))
    for c in range(C):
        motif_nodes = np.flatnonzero(motifs[c % cfg.motif_bank_size].sum(axis=1) > 0)
        if motif_nodes.size:
            blend = node_signatures[motif_nodes].sum(axis=0) / math.sqrt(motif_nodes.size)
            context_means[c] = context_means[c] + CONTEXT_ALIGN_SCALE * blend
    context_stds = rng.uniform(CONTEXT_STD_LOW, CONTEXT_STD_HIGH, size=(C, d_x))

    # Factor components get a fixed geometric ladder of scales (distinct per
    # component, large enough that storing them in the latent bottleneck
    # pays for its rate) with a mild per-context modulation, so contexts
    # vary both the mean and the variance of every latent component.
    factor_scales = np.geomspace(FACTOR_STD_LOW, FACTOR_STD_HIGH, n)
    jitter = rng.uniform(1.0 - FACTOR_STD_JITTER, 1.0 + FACTOR_STD_JITTER, size=(C, n))
    context_stds[:, :n] = factor_scales * jitter

    fs_a = rng.uniform(0.5, 1.5, size=n)
    fs_b = rng.uniform(0.02, 0.10, size=n)
    fs_c = rng.uniform(-0.5, 0.5, size=n)
    B_r = np.empty((C, v, v), dtype=np.float64)
    B_ir = np.empty((C, v, v), dtype=np.float64)
    off_diag = 1.0 - np.eye(v)
    for c in range(C):
        motif = motifs[c % cfg.motif_bank_size]
        B_r[c] = np.where(motif > 0, MOTIF_EDGE_PROB, EPS) * off_diag + EPS * np.eye(v)
        background = (
            rng.random((v, v)) < BACKGROUND_EDGE_PROB
        ).astype(np.float64)
        background = np.triu(background, 1)
        background = background + background.T
        B_ir[c] = (
            np.where(background > 0, MOTIF_EDGE_PROB, EPS) * off_diag + EPS * np.eye(v)
        )

    # Atom-type weights are normalized by the marginal latent scale (from a
    # dedicated sample stream) so the argmax depends on every component about
    # equally: the type label then anchors each latent component, not just
    # the widest one.
    std_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x57D5]))
    s_draws = []
    for i in range(GK_STD_SAMPLES):
        c = i % C
        xi = (
            context_means[c, :n]
            + context_stds[c, :n] * std_rng.standard_normal((v, n))
        )
        s_draws.append(fs_a * xi + fs_b * xi**3 + fs_c)
    s_scale = np.concatenate(s_draws, axis=0).std(axis=0) + EPS
    gk_w = GK_SCALE * rng.standard_normal((cfg.K, n)) / s_scale
    gk_b = 0.2 * rng.standard_normal(cfg.K)

    # Edge weights near 1 keep the expected weighted sum context-independent
    # (equal motif edge counts), so the label is decided by the realized
    # relevant edges; the latent readout stays a mild tie-breaker.
    gy_edge_w = rng.uniform(GY_EDGE_LOW, GY_EDGE_HIGH, size=(v, v))
    gy_edge_w = (gy_edge_w + gy_edge_w.T) / 2.0
    gy_s_w = rng.uniform(-GY_S_SCALE, GY_S_SCALE, size=n)
    gy_bias = float(rng.standard_normal())

    proc = GroundTruthProcess(
        cfg=cfg,
        context_means=context_means,
        context_stds=context_stds,
        node_signatures=node_signatures,
        fs_a=fs_a,
        fs_b=fs_b,
        fs_c=fs_c,
        B_r_contexts=B_r,
        B_ir_contexts=B_ir,
        gk_w=gk_w,
        gk_b=gk_b,
        gy_edge_w=gy_edge_w,
        gy_s_w=gy_s_w,
        gy_bias=gy_bias,
        gy_threshold=0.0,
    )

    calib_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xCA11B]))
    logits = []
    for i in range(CALIBRATION_SAMPLES):
        c = i % C
        x = (
            context_means[c]
            + node_signatures
            + context_stds[c] * calib_rng.standard_normal((v, d_x))
        )
        s = proc.f_s(x) + cfg.noise_scale * calib_rng.standard_normal((v, n))
        G_r = _sample_edges(B_r[c], calib_rng)
        logits.append(proc.g_y_logit(G_r, s))
    threshold = float(np.median(logits))

    object.__setattr__(proc, "gy_threshold", threshold)
    return proc


def _sample_edges(B: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw a symmetric zero-diagonal binary matrix with edge probabilities B."""
    v = B.shape[-1]
    draws = rng.random((v, v))
    upper = (np.triu(draws, 1) < np.triu(B, 1)).astype(np.float64)
    return upper + upper.T


def sample_molecule(
    proc: GroundTruthProcess, context_id: int, rng: np.random.Generator
) -> Tuple[MoleculeGraph, GroundTruthRecord]:
    """Draw one (graph, ground truth) pair from the given context.

    Consumption order of ``rng``: attributes, latent noise, relevant edges,
    irrelevant edges.
    """
    cfg = proc.cfg
    if not 0 <= context_id < cfg.num_contexts:
        raise ParameterError(
            f"context_id must be in [0, {cfg.num_contexts}), got {context_id}"
        )
    x = (
        proc.context_means[context_id]
        + proc.node_signatures
        + proc.context_stds[context_id] * rng.standard_normal((cfg.v, cfg.d_x))
    )
    s = proc.f_s(x) + cfg.noise_scale * rng.standard_normal((cfg.v, cfg.n))
    G_r = _sample_edges(proc.B_r_contexts[context_id], rng)
    G_ir_raw = _sample_edges(proc.B_ir_contexts[context_id], rng)

    if cfg.overlap_policy == "relevant_wins":
        G_ir = G_ir_raw * (1.0 - G_r)
    else:
        G_ir = G_ir_raw
    A = np.maximum(G_r, G_ir)

    k = np.argmax(s @ proc.gk_w.T + proc.gk_b, axis=1)

    logit = proc.g_y_logit(G_r, s)
    if cfg.task == "classification":
        y = 1.0 if logit > proc.gy_threshold else 0.0
    else:
        y = logit

    graph = MoleculeGraph(
        num_nodes=cfg.v,
        x=x,
        A=A,
        k=k,
        y=y,
        task=cfg.task,
        num_atom_types=cfg.K,
    )
    truth = GroundTruthRecord(
        s_true=s,
        G_r_true=G_r,
        G_ir_true=G_ir,
        B_r_true=proc.b_r_true(context_id),
        B_ir_true=proc.b_ir_true(context_id),
        context_id=context_id,
    )
    return graph, truth


def sample_dataset(
    proc: GroundTruthProcess, num_samples: int, rng: np.random.Generator
) -> Dataset:
    """Sample a dataset with round-robin context assignment.

    Record i uses context i mod num_contexts and its own generator derived
    from ``rng``, so every context appears floor(num_samples/num_contexts)
    times or once more.
    """
    cfg = proc.cfg
    if num_samples < cfg.num_contexts:
        raise ParameterError(
            f"num_samples must be >= num_contexts = {cfg.num_contexts}"
        )
    record_seeds = rng.integers(0, 2**63 - 1, size=num_samples)
    records = []
    for i in range(num_samples):
        rec_rng = np.random.default_rng(int(record_seeds[i]))
        records.append(sample_molecule(proc, i % cfg.num_contexts, rec_rng))
    return Dataset(records=tuple(records), task=cfg.task, num_contexts=cfg.num_contexts)


def audit_assumptions(ds: Dataset) -> Dict[str, object]:
    """Check context coverage and per-context latent variability.

    Returns a report with the distinct-context count, the minimum per-context
    per-component empirical variance of s, and an overall ok flag. Requires
    ground truth on every record.
    """
    if not ds.has_ground_truth:
        raise ParameterError("assumption audit requires ground truth on every record")
    by_context: Dict[int, List[np.ndarray]] = {}
    n = None
    for _, truth in ds:
        assert truth is not None
        n = truth.latent_dim
        by_context.setdefault(truth.context_id, []).append(truth.s_true.numpy())
    min_var = math.inf
    for rows in by_context.values():
        s = np.concatenate(rows, axis=0)
        if s.shape[0] >= 2:
            min_var = min(min_var, float(s.var(axis=0).min()))
    distinct = len(by_context)
    required = 2 * (n or 0) + 1
    ok = distinct >= required and min_var > 0
    return {
        "distinct_contexts": distinct,
        "required_contexts": required,
        "min_component_variance": min_var,
        "ok": ok,
    }


def _int_matrix(t: torch.Tensor) -> List[List[int]]:
    return [[int(round(x)) for x in row] for row in t.tolist()]


def _record_to_json(graph: MoleculeGraph, truth: Optional[GroundTruthRecord]) -> str:
    obj: Dict[str, object] = {
        "v": graph.num_nodes,
        "x": graph.x.tolist(),
        "A": _int_matrix(graph.A),
        "k": [int(i) for i in graph.k.tolist()],
        "y": float(graph.y),
        "task": graph.task,
        "context": truth.context_id if truth is not None else -1,
        "num_atom_types": graph.num_atom_types,
    }
    if truth is not None:
        obj["latents"] = {
            "s": truth.s_true.tolist(),
            "G_r": _int_matrix(truth.G_r_true),
            "G_ir": _int_matrix(truth.G_ir_true),
            "B_r": truth.B_r_true.B.tolist(),
            "B_ir": truth.B_ir_true.B.tolist(),
        }
    return json.dumps(obj, separators=(",", ":"))


def write_dataset(ds: Dataset, path: Path | str) -> None:
    """Write one JSON object per line; floats keep full precision."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for graph, truth in ds:
            fh.write(_record_to_json(graph, truth))
            fh.write("\n")


_REQUIRED_KEYS = ("v", "x", "A", "k", "y", "task", "context")
_LATENT_KEYS = ("s", "G_r", "G_ir", "B_r", "B_ir")


def read_dataset(path: Path | str) -> Dataset:
    """Read a JSON-lines dataset written by :func:`write_dataset`.

    Records without a "latents" member load with the ground truth absent.
    A missing "num_atom_types" falls back to max(k)+1 over the file
    (externally supplied data).
    """
    path = Path(path)
    raw: List[Dict[str, object]] = []
    try:
        fh = path.open("r", encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DatasetError(f"line {lineno}: record must be a JSON object")
            for key in _REQUIRED_KEYS:
                if key not in obj:
                    raise DatasetError(f"line {lineno}: missing required field {key!r}")
            if "latents" in obj:
                latents = obj["latents"]
                if not isinstance(latents, dict):
                    raise DatasetError(f"line {lineno}: latents must be an object")
                for key in _LATENT_KEYS:
                    if key not in latents:
                        raise DatasetError(
                            f"line {lineno}: latents missing required field {key!r}"
                        )
            obj["_lineno"] = lineno
            raw.append(obj)
    if not raw:
        raise DatasetError("dataset file contains no records")

    inferred_K = 1 + max(
        (max(rec["k"]) if rec["k"] else 0) for rec in raw
    )
    records = []
    contexts = set()
    task = str(raw[0]["task"])
    for rec in raw:
        lineno = rec["_lineno"]
        if str(rec["task"]) != task:
            raise DatasetError(f"line {lineno}: mixed task values in one dataset")
        K = int(rec.get("num_atom_types", inferred_K))
        try:
            graph = MoleculeGraph(
                num_nodes=int(rec["v"]),
                x=rec["x"],
                A=rec["A"],
                k=rec["k"],
                y=float(rec["y"]),
                task=task,
                num_atom_types=K,
            )
        except (DimensionError, ParameterError, TypeError, ValueError) as exc:
            raise DatasetError(f"line {lineno}: {exc}") from exc
        truth = None
        if "latents" in rec:
            latents = rec["latents"]
            try:
                truth = GroundTruthRecord(
                    s_true=latents["s"],
                    G_r_true=latents["G_r"],
                    G_ir_true=latents["G_ir"],
                    B_r_true=BernoulliAdj(latents["B_r"]),
                    B_ir_true=BernoulliAdj(latents["B_ir"]),
                    context_id=int(rec["context"]),
                )
            except (DimensionError, ParameterError, TypeError, ValueError) as exc:
                raise DatasetError(f"line {lineno}: {exc}") from exc
            contexts.add(truth.context_id)
        records.append((graph, truth))
    num_contexts = (max(contexts) + 1) if contexts else 0
    return Dataset(records=tuple(records), task=task, num_contexts=num_contexts)


def graphs_equal(a: MoleculeGraph, b: MoleculeGraph) -> bool:
    return (
        a.num_nodes == b.num_nodes
        and a.num_atom_types == b.num_atom_types
        and a.task == b.task
        and a.y == b.y
        and torch.equal(a.x, b.x)
        and torch.equal(a.A, b.A)
        and torch.equal(a.k, b.k)
    )


def truths_equal(a: Optional[GroundTruthRecord], b: Optional[GroundTruthRecord]) -> bool:
    if a is None or b is None:
        return a is b
    return (
        a.context_id == b.context_id
        and torch.equal(a.s_true, b.s_true)
        and torch.equal(a.G_r_true, b.G_r_true)
        and torch.equal(a.G_ir_true, b.G_ir_true)
        and torch.equal(a.B_r_true.B, b.B_r_true.B)
        and torch.equal(a.B_ir_true.B, b.B_ir_true.B)
    )


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    if a.task != b.task or a.num_contexts != b.num_contexts or len(a) != len(b):
        return False
    return all(
        graphs_equal(ga, gb) and truths_equal(ta, tb)
        for (ga, ta), (gb, tb) in zip(a, b)
    )
