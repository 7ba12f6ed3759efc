"""Finite-difference checks of every trainable path: KCL loss through the encoder and the three task losses."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .agnn import AgnnConfig, encode, init_params, make_plan, prepare, readout
from .cktgraph import compile_circuit
from .kclloss import LossConfig, batch_kcl_loss
from .netlist import parse_netlist
from .synthdata import NUM_CLASSES, gen_circuit
from .tasks import classifier_logits, detector_logits, ged_predict, init_head, loss_cls, loss_det, loss_ged

# seven DAG nodes: V1, vdd, R1, R2, C1, 0, GND; the parallel layer emits a hard negative
PARALLEL_7 = "V1 vdd 0 1.8\nR1 vdd 0 1k\nR2 vdd 0 2k\nC1 vdd 0 1p\n"
# seven DAG nodes in a chain: V1, vdd, R1, mid, R2, 0, GND
CHAIN_7 = "V1 vdd 0 1.8\nR1 vdd mid 1k\nR2 mid 0 2k\n"


def probe_graphs():
    """Circuits between 7 and 30 DAG nodes."""
    circuits = [parse_netlist(PARALLEL_7, "parallel7"), parse_netlist(CHAIN_7, "chain7"),
                gen_circuit(1, size=2, seed=0), gen_circuit(6, size=1, seed=0),
                gen_circuit(2, size=1, seed=0)]
    return [prepare(compile_circuit(c)) for c in circuits]


def run_gradient_suite(hidden: int = 8, seed: int = 0, eps: float = 1e-5) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    params = init_params(AgnnConfig(hidden_size=hidden), rng)
    graphs = probe_graphs()
    out = {}

    for cg in graphs:
        plan = make_plan([cg])
        out[f"kcl_loss[{cg.dag.name}]"] = float(T.grad_check(
            lambda: batch_kcl_loss(plan, encode(plan, params), LossConfig())[0], params, eps))

    plan = make_plan(graphs)
    p = dict(params)
    p.update(init_head("cls", hidden, NUM_CLASSES, rng))
    y = np.arange(len(graphs)) % NUM_CLASSES
    out["loss_cls"] = float(T.grad_check(
        lambda: loss_cls(classifier_logits(readout(plan, encode(plan, p)), p), y), p, eps))

    p = dict(params)
    p.update(init_head("det", hidden, NUM_CLASSES, rng))
    labels = (rng.random(plan.num_nodes) < 0.3).astype(float)
    cls = rng.integers(NUM_CLASSES, size=plan.num_nodes)
    out["loss_det"] = float(T.grad_check(
        lambda: loss_det(detector_logits(encode(plan, p), cls, NUM_CLASSES, p), labels), p, eps))

    p = dict(params)
    p.update(init_head("ged", hidden, NUM_CLASSES, rng))
    d = np.array([1.0, 3.0])

    def ged():
        z = readout(plan, encode(plan, p))
        return loss_ged(ged_predict(T.take(z, np.array([0, 2])), T.take(z, np.array([1, 3])), p), d)

    out["loss_ged"] = float(T.grad_check(ged, p, eps))
    return out
