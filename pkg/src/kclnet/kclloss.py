"""Depth-current positives, masked hard negatives and the KCL contrastive loss.

Per graph, the current embedding of depth D is the sum of the embeddings of
the nodes at that depth. Every ordered pair of distinct depths is a positive
pair. A hard negative for depth D is that layer's sum with its top-k
largest-norm node embeddings removed, which deliberately breaks the balance
between layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .agnn import BatchPlan, NodeEmbeddings, encode, readout
from .cktgraph import DepthAssignment
from .errors import BatchTooSmall, TooFewDepths
from .tensor import Tensor

VARIANTS = ("full", "no_pos", "no_neg", "none")


@dataclass
class LossConfig:
    temperature: float = 0.5
    top_k: int = 1
    variant: str = "full"
    augmentation_strength: float = 0.2
    gamma: float = 0.1  # weight of the in-batch GraphCL term, no_pos only
    literal: bool = False  # drop the positive term from the denominator
    exclude_endpoints: bool = False

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")


@dataclass
class DepthCurrentEmbedding:
    depth: int
    I: np.ndarray
    node_count: int


@dataclass
class NegativeEmbedding:
    depth: int
    I_hat: np.ndarray
    masked_ids: list[int] = field(default_factory=list)


def _top_k(norms: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    """Positions of the k largest norms; ties go to the smaller node id."""
    order = np.lexsort((ids, -norms))
    return order[:k]


def depth_current_embeddings(emb: NodeEmbeddings, depths: DepthAssignment) -> list[DepthCurrentEmbedding]:
    out = []
    for lvl, nodes in enumerate(depths.layers):
        if nodes:
            out.append(DepthCurrentEmbedding(lvl, emb.h[nodes].sum(axis=0), len(nodes)))
    return out


def hard_negatives(emb: NodeEmbeddings, depths: DepthAssignment, k: int = 1) -> list[NegativeEmbedding]:
    if k < 1:
        raise ValueError("k must be at least 1")
    out = []
    for lvl, nodes in enumerate(depths.layers):
        if len(nodes) <= k:
            continue
        ids = np.asarray(nodes)
        hs = emb.h[ids]
        top = _top_k(np.linalg.norm(hs, axis=1), ids, k)
        keep = np.ones(len(ids), dtype=bool)
        keep[top] = False
        out.append(NegativeEmbedding(lvl, hs[keep].sum(axis=0), sorted(ids[top].tolist())))
    return out


# -- the objective ---------------------------------------------------------

def _infonce(pos: Tensor, pair_w: np.ndarray, negterm: Tensor | None, literal: bool) -> Tensor:
    """sum_ij w_ij * -log(e^pos_ij / (e^pos_ij + sum_neg)), with negterm = log sum_neg per row.

    In literal mode the positive is dropped from the denominator; rows
    without any negative are then undefined and are left out.
    """
    if negterm is None:
        negterm = Tensor(np.full(pos.shape[0], -np.inf))
    if not literal:
        per = T.neg(pos) + T.logaddexp(pos, T.reshape(negterm, (-1, 1)))
        return T.sum_(T.mul(per, pair_w))
    live = np.flatnonzero(np.isfinite(negterm.value))
    if live.size == 0:
        return Tensor(np.array(0.0))
    per = T.neg(T.take(pos, live)) + T.reshape(T.take(negterm, live), (-1, 1))
    return T.sum_(T.mul(per, pair_w[live]))


def kcl_objective(currents: Tensor, cur_group: np.ndarray, negatives: Tensor | None,
                  neg_group: np.ndarray, cfg: LossConfig, cross_graph_negatives: bool = False):
    """Mean over graphs of the mean over ordered depth pairs of the InfoNCE term.

    currents: (M x h), one row per (graph, depth); negatives: (Q x h).
    With cross_graph_negatives the negatives of a graph are the depth currents
    of every other graph in the batch instead of its own masked layers.
    Returns the loss tensor and a stats dict.
    """
    cur_group = np.asarray(cur_group)
    graphs, counts = np.unique(cur_group, return_counts=True)
    if np.any(counts < 2):
        raise TooFewDepths("every graph needs at least two non-empty depths")
    tau = cfg.temperature
    cn = T.normalize_rows(currents)
    sims = T.matmul(cn, T.transpose(cn))
    pos = T.mul(sims, 1.0 / tau)
    same = cur_group[:, None] == cur_group[None, :]
    pair_mask = same & ~np.eye(len(cur_group), dtype=bool)
    pairs_of = dict(zip(graphs, counts * (counts - 1)))
    pair_w = pair_mask / np.array([pairs_of[g] for g in cur_group])[:, None] / len(graphs)

    negterm = None
    neg_sims = np.zeros(0)
    if cross_graph_negatives:
        if len(graphs) < 2:
            raise BatchTooSmall("in-batch negatives need at least two graphs")
        nmask = ~same
        negterm = T.masked_logsumexp(pos, nmask, axis=1)
        neg_sims = sims.value[nmask]
    elif negatives is not None and negatives.shape[0] > 0:
        nn = T.normalize_rows(negatives)
        nsim = T.matmul(cn, T.transpose(nn))
        nmask = cur_group[:, None] == np.asarray(neg_group)[None, :]
        negterm = T.masked_logsumexp(T.mul(nsim, 1.0 / tau), nmask, axis=1)
        neg_sims = nsim.value[nmask]
    loss = _infonce(pos, pair_w, negterm, cfg.literal)
    stats = {
        "pair_count": int(pair_mask.sum()),
        "mean_pos_sim": float(sims.value[pair_mask].mean()),
        "mean_neg_sim": float(neg_sims.mean()) if neg_sims.size else float("nan"),
    }
    return loss, stats


def kcl_loss(currents: list[DepthCurrentEmbedding], negatives: list[NegativeEmbedding],
             cfg: LossConfig | None = None) -> float:
    """Loss of one graph from its depth currents and hard negatives."""
    cfg = cfg or LossConfig()
    if len(currents) < 2:
        raise TooFewDepths("need at least two depth embeddings")
    c = Tensor(np.stack([x.I for x in currents]))
    n = Tensor(np.stack([x.I_hat for x in negatives])) if negatives else None
    loss, _ = kcl_objective(c, np.zeros(len(currents), dtype=int), n,
                            np.zeros(len(negatives), dtype=int), cfg)
    return loss.item()


def pair_count(currents: list[DepthCurrentEmbedding]) -> int:
    m = len(currents)
    return m * (m - 1)


# -- batched construction from encoder output ------------------------------

def current_selector(plan: BatchPlan, exclude_endpoints: bool = False):
    """Sparse (rows x nodes) summing matrix, one row per non-empty (graph, depth)."""
    key = ("cur", exclude_endpoints)
    if key not in plan._cache:
        g, d = plan.graph_of, plan.depth_of
        if exclude_endpoints:
            dmax = np.array([cg.depths.max_depth for cg in plan.graphs])[g]
            keep = (d > 0) & (d < dmax)
        else:
            keep = np.ones(len(g), dtype=bool)
        span = int(d.max()) + 1
        seg = g * span + d
        uniq, row = np.unique(seg[keep], return_inverse=True)
        nodes = np.flatnonzero(keep)
        s = sp.csr_matrix((np.ones(len(nodes)), (row, nodes)), shape=(len(uniq), plan.num_nodes))
        plan._cache[key] = (s, uniq // span, uniq % span)
    return plan._cache[key]


def negative_selector(plan: BatchPlan, h_values: np.ndarray, k: int, exclude_endpoints: bool = False):
    """Sparse summing matrix over the unmasked nodes of every layer with more than k nodes."""
    g, d = plan.graph_of, plan.depth_of
    dmax = np.array([cg.depths.max_depth for cg in plan.graphs])[g]
    norms = np.linalg.norm(h_values, axis=1)
    span = int(d.max()) + 1
    seg = g * span + d
    order = np.lexsort((plan.local_of, -norms, seg))  # by layer, then norm desc, then id
    seg_sorted = seg[order]
    starts = np.flatnonzero(np.r_[True, seg_sorted[1:] != seg_sorted[:-1]])
    sizes = np.diff(np.r_[starts, len(order)])
    rank = np.arange(len(order)) - np.repeat(starts, sizes)
    size_of = np.repeat(sizes, sizes)
    eligible = size_of > k
    if exclude_endpoints:
        eligible &= (d[order] > 0) & (d[order] < dmax[order])
    keep = eligible & (rank >= k)
    nodes = order[keep]
    uniq, row = np.unique(seg[nodes], return_inverse=True)
    s = sp.csr_matrix((np.ones(len(nodes)), (row, nodes)), shape=(len(uniq), plan.num_nodes))
    return s, uniq // span, uniq % span


def batch_kcl_loss(plan: BatchPlan, h: Tensor, cfg: LossConfig):
    """KCL loss for a batch of encoded graphs (variants full and no_neg)."""
    s_cur, cur_group, _ = current_selector(plan, cfg.exclude_endpoints)
    currents = T.spmm(s_cur, h)
    if cfg.variant == "no_neg":
        return kcl_objective(currents, cur_group, None, np.zeros(0), cfg, cross_graph_negatives=True)
    s_neg, neg_group, _ = negative_selector(plan, h.value, cfg.top_k, cfg.exclude_endpoints)
    negatives = T.spmm(s_neg, h) if s_neg.shape[0] else None
    return kcl_objective(currents, cur_group, negatives, neg_group, cfg)


# -- ablations -------------------------------------------------------------

def augmented_features(x: np.ndarray, rng: np.random.Generator, strength: float) -> np.ndarray:
    """Node-dropping view: each node's features are zeroed with probability strength."""
    if strength <= 0:
        return x.copy()
    drop = rng.random(x.shape[0]) < strength
    out = x.copy()
    out[drop] = 0.0
    return out


def ablation_positives(plan: BatchPlan, params: dict[str, Tensor], cfg: LossConfig,
                       rng: np.random.Generator):
    """Two node-dropped views of every graph; returns their readouts and the first view's embeddings."""
    x1 = augmented_features(plan.features, rng, cfg.augmentation_strength)
    x2 = augmented_features(plan.features, rng, cfg.augmentation_strength)
    h1 = encode(plan, params, features=x1)
    h2 = encode(plan, params, features=x2)
    return readout(plan, h1), readout(plan, h2), h1


def ablation_negatives(group: np.ndarray) -> np.ndarray:
    """Boolean (rows x rows) mask: row i may use row j as negative iff they come from different graphs."""
    group = np.asarray(group)
    if len(np.unique(group)) < 2:
        raise BatchTooSmall("in-batch negatives need at least two graphs")
    return group[:, None] != group[None, :]


def no_pos_loss(plan: BatchPlan, z1: Tensor, z2: Tensor, h1: Tensor, cfg: LossConfig):
    """Augmented-view positives against the graph's KCL hard negatives, plus gamma * GraphCL."""
    tau = cfg.temperature
    n1, n2 = T.normalize_rows(z1), T.normalize_rows(z2)
    cross = T.mul(T.matmul(n1, T.transpose(n2)), 1.0 / tau)  # (G x G)
    G = plan.num_graphs
    eye = np.eye(G, dtype=bool)
    pos = T.sum_(T.mul(cross, eye.astype(float)), axis=1)  # diag
    s_neg, neg_group, _ = negative_selector(plan, h1.value, cfg.top_k)
    if s_neg.shape[0]:
        nn = T.normalize_rows(T.spmm(s_neg, h1))
        nsim = T.mul(T.matmul(n1, T.transpose(nn)), 1.0 / tau)
        nmask = np.arange(G)[:, None] == neg_group[None, :]
        negterm = T.masked_logsumexp(nsim, nmask, axis=1)
        neg_mean = float((nsim.value * tau)[nmask].mean()) if nmask.any() else float("nan")
    else:
        negterm, neg_mean = Tensor(np.full(G, -np.inf)), float("nan")
    kcl_part = T.mean(T.neg(pos) + T.logaddexp(pos, negterm))
    loss = kcl_part
    if cfg.gamma > 0 and G >= 2:
        graphcl = T.mean(T.neg(pos) + T.masked_logsumexp(cross, np.ones((G, G), dtype=bool), axis=1))
        loss = loss + T.mul(graphcl, cfg.gamma)
    stats = {"pair_count": G, "mean_pos_sim": float(pos.value.mean() * tau), "mean_neg_sim": neg_mean}
    return loss, stats
