"""Depth-asynchronous GNN encoder and its synchronous GCN baseline.

Node order inside a batch is "layer-major": all depth-0 nodes of every graph,
then all depth-1 nodes, and so on. Every arc points from a lower depth to a
higher one, so the normalized arc matrix is strictly lower triangular in this
order and one depth layer can be computed with a single sparse product
against the rows already finalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .cktgraph import DEVICE, GROUND, NET, VSOURCE, CircuitDag, DepthAssignment, assign_depths
from .errors import EmptyGraph, ShapeMismatch, UnassignedDepth
from .netlist import DeviceKind
from .tensor import Tensor

NODE_KINDS = (
    "NMOS", "PMOS", "NPN", "PNP", "DIODE", "RESISTOR", "CAPACITOR", "INDUCTOR",
    "net", "VSOURCE", "GROUND",
)
PARAM_SLOTS = 6
FEATURE_DIM = len(NODE_KINDS) + PARAM_SLOTS + 2  # 19


def node_features(dag: CircuitDag) -> np.ndarray:
    """One-hot kind, log-scaled device parameters, scaled in/out degree."""
    x = np.zeros((len(dag), FEATURE_DIM))
    base = len(NODE_KINDS)
    for i, (kind, label, p) in enumerate(zip(dag.kinds, dag.labels, dag.params)):
        x[i, NODE_KINDS.index("net" if kind == NET else label)] = 1.0
        if label in ("NMOS", "PMOS"):
            x[i, base + 0] = math.log10(1 + p.get("w", 0.0) / 1e-9)
            x[i, base + 1] = math.log10(1 + p.get("l", 0.0) / 1e-9)
        elif label == "RESISTOR":
            x[i, base + 2] = math.log10(1 + p.get("r", 0.0))
        elif label == "CAPACITOR":
            x[i, base + 3] = math.log10(1 + p.get("c", 0.0) * 1e12)
        elif label == "INDUCTOR":
            x[i, base + 4] = math.log10(1 + p.get("ind", 0.0) * 1e9)
        elif label == "VSOURCE":
            x[i, base + 5] = p.get("dc", 0.0)
        x[i, base + PARAM_SLOTS] = len(dag.preds[i]) / 10
        x[i, base + PARAM_SLOTS + 1] = len(dag.succs[i]) / 10
    return x


@dataclass
class CompiledGraph:
    dag: CircuitDag
    depths: DepthAssignment
    features: np.ndarray

    def __len__(self):
        return len(self.dag)


def prepare(dag: CircuitDag, depths: DepthAssignment | None = None) -> CompiledGraph:
    return CompiledGraph(dag, depths or assign_depths(dag), node_features(dag))


# -- configuration and parameters ------------------------------------------

@dataclass
class AgnnConfig:
    hidden_size: int = 64
    num_layers: int = 3
    activation: str = "relu"
    dropout_rate: float = 0.6
    feature_dim: int = FEATURE_DIM

    def __post_init__(self):
        if self.hidden_size < 1 or self.num_layers < 1:
            raise ValueError("hidden_size and num_layers must be positive")
        if self.activation != "relu":
            raise ValueError("only relu is supported")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(cfg: AgnnConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Input projection plus, per sweep, message / initial-feature / previous-sweep transforms."""
    h = cfg.hidden_size
    p = {
        "w_in": T.parameter(_glorot(rng, cfg.feature_dim, h)),
        "b_in": T.parameter(np.zeros(h)),
    }
    for s in range(cfg.num_layers):
        p[f"s{s}.w_msg"] = T.parameter(_glorot(rng, h, h))
        p[f"s{s}.w_init"] = T.parameter(_glorot(rng, h, h))
        if s > 0:
            p[f"s{s}.w_prev"] = T.parameter(_glorot(rng, h, h))
        p[f"s{s}.b"] = T.parameter(np.zeros(h))
    return p


# -- batching --------------------------------------------------------------

@dataclass
class BatchPlan:
    graphs: list[CompiledGraph]
    offsets: np.ndarray  # layer l occupies rows offsets[l]:offsets[l+1]
    layer_adj: list[sp.csr_matrix | None]  # (n_l x offsets[l]) normalized arcs into layer l
    perm: list[np.ndarray]  # perm[g][local node] -> batch row
    graph_of: np.ndarray
    depth_of: np.ndarray
    local_of: np.ndarray
    features: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_nodes(self) -> int:
        return int(self.offsets[-1])

    @property
    def num_graphs(self) -> int:
        return len(self.graphs)

    def readout_matrix(self) -> sp.csr_matrix:
        """(graphs x nodes) row-averaging matrix."""
        if "readout" not in self._cache:
            counts = np.bincount(self.graph_of, minlength=self.num_graphs)
            if np.any(counts == 0):
                raise EmptyGraph("graph with no nodes in batch")
            n = self.num_nodes
            self._cache["readout"] = sp.csr_matrix(
                (1.0 / counts[self.graph_of], (self.graph_of, np.arange(n))),
                shape=(self.num_graphs, n),
            )
        return self._cache["readout"]

    def undirected_adjacency(self, directed: bool = False) -> sp.csr_matrix:
        """Symmetric GCN normalization 1/sqrt((deg_i+1)(deg_j+1)) over batch rows."""
        key = ("sync", directed)
        if key not in self._cache:
            rows, cols = [], []
            for g, cg in enumerate(self.graphs):
                pm = self.perm[g]
                for i, preds in enumerate(cg.dag.preds):
                    for u in preds:
                        rows.append(pm[i])
                        cols.append(pm[u])
            n = self.num_nodes
            rows, cols = np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64)
            if directed:
                indeg = np.bincount(rows, minlength=n)
                outdeg = np.bincount(cols, minlength=n)
                coef = 1.0 / np.sqrt((indeg[rows] + 1.0) * (outdeg[cols] + 1.0))
                m = sp.csr_matrix((coef, (rows, cols)), shape=(n, n))
            else:
                r = np.concatenate([rows, cols])
                c = np.concatenate([cols, rows])
                deg = np.bincount(r, minlength=n)
                coef = 1.0 / np.sqrt((deg[r] + 1.0) * (deg[c] + 1.0))
                m = sp.csr_matrix((coef, (r, c)), shape=(n, n))
            self._cache[key] = m
        return self._cache[key]

    def gather(self, values: np.ndarray, g: int) -> np.ndarray:
        """Rows of a batch-ordered array belonging to graph g, in dag order."""
        return values[self.perm[g]]


def make_plan(graphs: Sequence[CompiledGraph]) -> BatchPlan:
    graphs = list(graphs)
    if not graphs:
        raise EmptyGraph("empty batch")
    depth_max = max(cg.depths.max_depth for cg in graphs)
    # layer-major ordering
    order_g, order_local, order_depth = [], [], []
    for lvl in range(depth_max + 1):
        for g, cg in enumerate(graphs):
            if lvl <= cg.depths.max_depth:
                for i in cg.depths.layers[lvl]:
                    order_g.append(g)
                    order_local.append(i)
                    order_depth.append(lvl)
    graph_of = np.array(order_g, dtype=np.int64)
    local_of = np.array(order_local, dtype=np.int64)
    depth_of = np.array(order_depth, dtype=np.int64)
    for cg in graphs:
        if len(cg.depths.depth) != len(cg.dag):
            raise UnassignedDepth(f"{cg.dag.name}: depth map does not cover every node")
    n = len(order_g)
    perm = [np.empty(len(cg.dag), dtype=np.int64) for cg in graphs]
    for row in range(n):
        perm[graph_of[row]][local_of[row]] = row
    offsets = np.searchsorted(depth_of, np.arange(depth_max + 2), side="left")

    rows, cols, coef = [], [], []
    for g, cg in enumerate(graphs):
        pm = perm[g]
        dag = cg.dag
        outdeg = [len(s) for s in dag.succs]
        for i, preds in enumerate(dag.preds):
            if not preds:
                continue
            ni = len(preds) + 1.0
            for u in preds:
                rows.append(pm[i])
                cols.append(pm[u])
                coef.append(1.0 / math.sqrt(ni * (outdeg[u] + 1.0)))
    rows_a = np.array(rows, dtype=np.int64)
    cols_a = np.array(cols, dtype=np.int64)
    if np.any(depth_of[cols_a] >= depth_of[rows_a]):
        raise UnassignedDepth("an arc does not increase depth")
    full = sp.csr_matrix((np.array(coef), (rows_a, cols_a)), shape=(n, n))
    layer_adj: list[sp.csr_matrix | None] = []
    for lvl in range(depth_max + 1):
        lo, hi = offsets[lvl], offsets[lvl + 1]
        blk = full[lo:hi, :lo]
        layer_adj.append(blk.tocsr() if blk.nnz else None)
    x = np.empty((n, graphs[0].features.shape[1]))
    for g, cg in enumerate(graphs):
        x[perm[g]] = cg.features
    return BatchPlan(graphs, offsets, layer_adj, perm, graph_of, depth_of, local_of, x)


# -- asynchronous propagation ----------------------------------------------

def depth_propagate(base: Tensor, w_msg: Tensor, plan: BatchPlan,
                    trace: Callable[[int, np.ndarray], None] | None = None) -> Tensor:
    """One source-to-sink sweep: h_L = relu(A_L h_<L W_msg + base_L), layer by layer.

    Fused op with a hand-written reverse sweep over the layers.
    """
    n, h = base.shape
    if n != plan.num_nodes or w_msg.shape != (h, h):
        raise ShapeMismatch(f"base {base.shape}, w_msg {w_msg.shape}, plan nodes {plan.num_nodes}")
    W = w_msg.value
    B = base.value
    H = np.zeros((n, h))
    Z = np.empty((n, h))
    E = np.zeros((n, h))
    offs = plan.offsets
    for lvl, adj in enumerate(plan.layer_adj):
        lo, hi = offs[lvl], offs[lvl + 1]
        if hi == lo:
            continue
        if adj is None:
            Z[lo:hi] = B[lo:hi]
        else:
            e = adj @ H[:lo]
            E[lo:hi] = e
            Z[lo:hi] = e @ W + B[lo:hi]
        np.maximum(Z[lo:hi], 0.0, out=H[lo:hi])
        if trace is not None:
            trace(lvl, np.arange(lo, hi))
    active = Z > 0

    def bw(g):
        R = g.copy()
        dZ = np.zeros((n, h))
        Wt = W.T
        for lvl in range(len(plan.layer_adj) - 1, -1, -1):
            lo, hi = offs[lvl], offs[lvl + 1]
            if hi == lo:
                continue
            dz = R[lo:hi] * active[lo:hi]
            dZ[lo:hi] = dz
            adj = plan.layer_adj[lvl]
            if adj is not None:
                R[:lo] += adj.T @ (dz @ Wt)
        if base.requires_grad:
            base._accumulate(dZ)
        if w_msg.requires_grad:
            w_msg._accumulate(E.T @ dZ)

    return T._make(H, (base, w_msg), bw)


def encode(plan: BatchPlan, params: dict[str, Tensor], num_layers: int | None = None,
           features: np.ndarray | None = None, trace=None) -> Tensor:
    """Batch-ordered final-sweep node embeddings (num_nodes x hidden)."""
    if num_layers is None:
        num_layers = sum(1 for k in params if k.endswith(".w_msg"))
    x = plan.features if features is None else features
    if x.shape[0] != plan.num_nodes:
        raise ShapeMismatch(f"features have {x.shape[0]} rows, plan has {plan.num_nodes} nodes")
    h0 = T.matmul(x, params["w_in"]) + params["b_in"]
    h = None
    for s in range(num_layers):
        base = T.matmul(h0, params[f"s{s}.w_init"]) + params[f"s{s}.b"]
        if h is not None:
            base = base + T.matmul(h, params[f"s{s}.w_prev"])
        tr = None if trace is None else (lambda lvl, rows, s=s: trace(s, lvl, rows))
        h = depth_propagate(base, params[f"s{s}.w_msg"], plan, tr)
    return h


def encode_sync(plan: BatchPlan, params: dict[str, Tensor], num_layers: int | None = None,
                directed: bool = False, features: np.ndarray | None = None) -> Tensor:
    """Synchronous GCN with the same AGG/COMBINE forms: every node updates at once."""
    if num_layers is None:
        num_layers = sum(1 for k in params if k.endswith(".w_msg"))
    x = plan.features if features is None else features
    if x.shape[0] != plan.num_nodes:
        raise ShapeMismatch(f"features have {x.shape[0]} rows, plan has {plan.num_nodes} nodes")
    adj = plan.undirected_adjacency(directed)
    h0 = T.matmul(x, params["w_in"]) + params["b_in"]
    h = h0
    for s in range(num_layers):
        z = T.matmul(T.spmm(adj, h), params[f"s{s}.w_msg"])
        z = z + T.matmul(h0, params[f"s{s}.w_init"]) + params[f"s{s}.b"]
        if s > 0:
            z = z + T.matmul(h, params[f"s{s}.w_prev"])
        h = T.relu(z)
    return h


@dataclass
class NodeEmbeddings:
    h: np.ndarray  # (nodes x hidden), dag node order
    layer: list[int]  # depth layer in which each node was finalized
    names: list[str]

    def of(self, name: str) -> np.ndarray:
        return self.h[self.names.index(name)]


def forward_async(dag: CircuitDag, depths: DepthAssignment, x: np.ndarray,
                  params: dict[str, Tensor], trace=None) -> NodeEmbeddings:
    if x.shape[0] != len(dag):
        raise ShapeMismatch(f"features have {x.shape[0]} rows, dag has {len(dag)} nodes")
    plan = make_plan([CompiledGraph(dag, depths, x)])
    h = encode(plan, params, trace=trace)
    return NodeEmbeddings(plan.gather(h.value, 0), list(depths.depth), list(dag.names))


def forward_sync(dag: CircuitDag, x: np.ndarray, params: dict[str, Tensor],
                 directed: bool = False) -> NodeEmbeddings:
    if x.shape[0] != len(dag):
        raise ShapeMismatch(f"features have {x.shape[0]} rows, dag has {len(dag)} nodes")
    plan = make_plan([CompiledGraph(dag, assign_depths(dag), x)])
    h = encode_sync(plan, params, directed=directed)
    return NodeEmbeddings(plan.gather(h.value, 0), [0] * len(dag), list(dag.names))


READOUTS = ("mean", "max", "meanmax")


def readout_width(hidden: int, mode: str = "mean") -> int:
    return 2 * hidden if mode == "meanmax" else hidden


def graph_readout(emb: NodeEmbeddings | np.ndarray, mode: str = "mean") -> np.ndarray:
    h = emb.h if isinstance(emb, NodeEmbeddings) else np.asarray(emb)
    if h.shape[0] == 0:
        raise EmptyGraph("cannot read out an empty graph")
    if mode not in READOUTS:
        raise ValueError(f"readout must be one of {READOUTS}")
    parts = {"mean": [h.mean(axis=0)], "max": [h.max(axis=0)], "meanmax": [h.mean(axis=0), h.max(axis=0)]}
    return np.concatenate(parts[mode])


def _segment_max(plan: BatchPlan, h: Tensor) -> Tensor:
    hv = h.value
    idx = np.empty((plan.num_graphs, hv.shape[1]), dtype=np.int64)
    for g, rows in enumerate(plan.perm):
        idx[g] = rows[np.argmax(hv[rows], axis=0)]  # first maximal row on ties
    return T.take(h, (idx, np.arange(hv.shape[1])[None, :]))


def readout(plan: BatchPlan, h: Tensor, mode: str = "mean") -> Tensor:
    """Differentiable per-graph readout (graphs x width): mean, max, or both side by side."""
    if mode not in READOUTS:
        raise ValueError(f"readout must be one of {READOUTS}")
    if mode == "max":
        return _segment_max(plan, h)
    mean = T.spmm(plan.readout_matrix(), h)
    if mode == "mean":
        return mean
    return T.concat([mean, _segment_max(plan, h)], axis=1)
