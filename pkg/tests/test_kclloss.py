import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kclnet import tensor as T
from kclnet.agnn import AgnnConfig, NodeEmbeddings, encode, init_params, make_plan, prepare
from kclnet.cktgraph import DepthAssignment, assign_depths, compile_circuit
from kclnet.errors import BatchTooSmall, TooFewDepths
from kclnet.kclloss import (
    DepthCurrentEmbedding,
    LossConfig,
    NegativeEmbedding,
    ablation_negatives,
    ablation_positives,
    augmented_features,
    batch_kcl_loss,
    depth_current_embeddings,
    hard_negatives,
    kcl_loss,
    no_pos_loss,
    pair_count,
)
from kclnet.netlist import parse_netlist
from kclnet.synthdata import gen_circuit
from oracles import loop_kcl_loss


def _emb(rows):
    h = np.array(rows, dtype=float)
    return NodeEmbeddings(h, [0] * len(h), [str(i) for i in range(len(h))])


def _cur(*vecs):
    return [DepthCurrentEmbedding(i, np.array(v, dtype=float), 1) for i, v in enumerate(vecs)]


def _neg(*vecs):
    return [NegativeEmbedding(i, np.array(v, dtype=float)) for i, v in enumerate(vecs)]


def test_depth_currents_sum_layers():
    da = DepthAssignment([0, 0, 1], [[0, 1], [2]], 1)
    cur = depth_current_embeddings(_emb([[1, 0], [0, 1], [2, 5]]), da)
    assert np.array_equal(cur[0].I, [1, 1]) and cur[0].node_count == 2
    assert np.array_equal(cur[1].I, [2, 5])


def test_depth_currents_telescope_on_real_circuit():
    dag = compile_circuit(gen_circuit(4, seed=3))
    da = assign_depths(dag)
    h = np.random.default_rng(0).normal(size=(len(dag), 5))
    cur = depth_current_embeddings(NodeEmbeddings(h, da.depth, dag.names), da)
    assert [c.depth for c in cur] == sorted(c.depth for c in cur)
    assert np.allclose(sum(c.I for c in cur), h.sum(axis=0))


def test_hard_negative_masks_largest():
    da = DepthAssignment([0, 0, 0], [[0, 1, 2]], 0)
    h = [[3, 0], [1, 0], [0, 2]]
    (neg,) = hard_negatives(_emb(h), da, 1)
    assert neg.masked_ids == [0]
    assert np.array_equal(neg.I_hat, [1, 2])


def test_hard_negative_ties_to_smaller_id():
    da = DepthAssignment([0, 0, 0], [[0, 1, 2]], 0)
    (neg,) = hard_negatives(_emb([[0, 1], [1, 0], [0, 0.5]]), da, 1)
    assert neg.masked_ids == [0]


def test_singleton_layer_emits_no_negative():
    da = DepthAssignment([0, 1, 1], [[0], [1, 2]], 1)
    negs = hard_negatives(_emb([[1, 0], [1, 1], [0, 1]]), da, 1)
    assert [n.depth for n in negs] == [1]


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_masked_nodes_have_maximal_norm(size, k, seed):
    h = np.random.default_rng(seed).normal(size=(size, 3))
    da = DepthAssignment([0] * size, [list(range(size))], 0)
    negs = hard_negatives(_emb(h), da, k)
    if size <= k:
        assert negs == []
        return
    norms = np.linalg.norm(h, axis=1)
    kept = [i for i in range(size) if i not in negs[0].masked_ids]
    assert len(negs[0].masked_ids) == k
    assert min(norms[negs[0].masked_ids]) >= max(norms[kept])
    assert np.allclose(negs[0].I_hat, h[kept].sum(axis=0))


def test_hand_example():
    loss = kcl_loss(_cur([1, 0], [2, 0]), _neg([0, 1]), LossConfig(temperature=1.0))
    assert abs(loss - (-math.log(math.e / (math.e + 1)))) < 1e-12
    assert loss == pytest.approx(0.3133, abs=1e-4)


def test_pair_count():
    assert pair_count(_cur(*np.eye(4))) == 12
    assert pair_count(_cur([1, 0], [0, 1])) == 2


def test_too_few_depths():
    with pytest.raises(TooFewDepths):
        kcl_loss(_cur([1, 0]), [], LossConfig())


def test_monotonicity_probe():
    aligned = kcl_loss(_cur([1, 0, 0], [1, 0, 0], [1, 0, 0]), _neg([0, 1, 0]), LossConfig())
    orth = kcl_loss(_cur([1, 0, 0], [0, 1, 0], [0, 0, 1]), _neg([0, 1, 0]), LossConfig())
    assert aligned < orth


def test_no_negatives_gives_zero_loss():
    # with the positive alone in the denominator every term is -log 1
    assert kcl_loss(_cur([1, 0], [0, 1]), [], LossConfig()) == 0.0


vec = st.lists(st.floats(-5, 5, allow_nan=False), min_size=3, max_size=3)


@settings(max_examples=100, deadline=None)
@given(st.lists(vec, min_size=2, max_size=5), st.lists(vec, min_size=1, max_size=3),
       st.sampled_from([0.1, 0.5, 1.0]), st.floats(0.01, 100))
def test_matches_loop_oracle_positive_and_scale_free(cur, neg, tau, alpha):
    cfg = LossConfig(temperature=tau)
    loss = kcl_loss(_cur(*cur), _neg(*neg), cfg)
    assert loss == pytest.approx(loop_kcl_loss(cur, neg, tau), rel=1e-9, abs=1e-12)
    assert loss > 0
    scaled = kcl_loss(_cur(*(np.array(cur) * alpha)), _neg(*(np.array(neg) * alpha)), cfg)
    assert scaled == pytest.approx(loss, rel=1e-9, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(vec, min_size=2, max_size=4), st.lists(vec, min_size=1, max_size=3))
def test_literal_mode_matches_oracle(cur, neg):
    cfg = LossConfig(literal=True)
    assert kcl_loss(_cur(*cur), _neg(*neg), cfg) == pytest.approx(loop_kcl_loss(cur, neg, 0.5, literal=True),
                                                                  rel=1e-9, abs=1e-12)


def _graphs(n=3):
    return [prepare(compile_circuit(gen_circuit(k, seed=k + 1))) for k in range(n)]


def _per_graph(cg, params, cfg):
    plan = make_plan([cg])
    h = encode(plan, params).value
    emb = NodeEmbeddings(h[plan.perm[0]], cg.depths.depth, cg.dag.names)
    return kcl_loss(depth_current_embeddings(emb, cg.depths), hard_negatives(emb, cg.depths, cfg.top_k), cfg)


@pytest.mark.parametrize("k", [1, 2])
def test_batched_loss_is_mean_of_graph_losses(k):
    graphs = _graphs()
    params = init_params(AgnnConfig(hidden_size=6), np.random.default_rng(0))
    cfg = LossConfig(top_k=k)
    plan = make_plan(graphs)
    loss, st_ = batch_kcl_loss(plan, encode(plan, params), cfg)
    expected = np.mean([_per_graph(cg, params, cfg) for cg in graphs])
    assert loss.item() == pytest.approx(expected, rel=1e-12)
    assert st_["pair_count"] == sum(pair_count(depth_current_embeddings(
        NodeEmbeddings(np.ones((len(cg.dag), 1)), cg.depths.depth, cg.dag.names), cg.depths)) for cg in graphs)


def test_no_neg_uses_other_graphs():
    graphs = _graphs(2)
    params = init_params(AgnnConfig(hidden_size=6), np.random.default_rng(0))
    plan = make_plan(graphs)
    h = encode(plan, params)
    cfg = LossConfig(variant="no_neg")
    loss, _ = batch_kcl_loss(plan, h, cfg)
    losses = []
    for g, other in ((0, 1), (1, 0)):
        emb = [NodeEmbeddings(h.value[plan.perm[i]], graphs[i].depths.depth, graphs[i].dag.names) for i in (g, other)]
        cur = [c.I for c in depth_current_embeddings(emb[0], graphs[g].depths)]
        neg = [c.I for c in depth_current_embeddings(emb[1], graphs[other].depths)]
        losses.append(loop_kcl_loss(cur, neg, cfg.temperature))
    assert loss.item() == pytest.approx(np.mean(losses), rel=1e-10)
    with pytest.raises(BatchTooSmall):
        batch_kcl_loss(make_plan(graphs[:1]), encode(make_plan(graphs[:1]), params), cfg)


def test_ablation_negative_mask():
    m = ablation_negatives(np.array([0, 1]))
    assert m.tolist() == [[False, True], [True, False]]
    m = ablation_negatives(np.arange(32))
    assert (m.sum(axis=1) == 31).all() and not m.diagonal().any()
    with pytest.raises(BatchTooSmall):
        ablation_negatives(np.zeros(3, dtype=int))


def test_augmentation():
    x = np.ones((50, 4))
    assert np.array_equal(augmented_features(x, np.random.default_rng(0), 0.0), x)
    rng = np.random.default_rng(1)
    a, b = augmented_features(x, rng, 0.2), augmented_features(x, rng, 0.2)
    assert not np.array_equal(a, b)
    assert set(np.unique(a)) <= {0.0, 1.0}


def test_no_pos_zero_strength_views_coincide():
    graphs = _graphs()
    plan = make_plan(graphs)
    params = init_params(AgnnConfig(hidden_size=6), np.random.default_rng(0))
    cfg = LossConfig(variant="no_pos", augmentation_strength=0.0)
    z1, z2, h1 = ablation_positives(plan, params, cfg, np.random.default_rng(0))
    assert np.array_equal(z1.value, z2.value)
    loss, st_ = no_pos_loss(plan, z1, z2, h1, cfg)
    assert st_["mean_pos_sim"] == pytest.approx(1.0)
    assert loss.item() > 0


@pytest.mark.parametrize("variant", ["full", "no_neg"])
def test_gradient_through_encoder_on_chain(variant):
    c = parse_netlist("V1 vdd 0 1.8\nR1 vdd mid 1k\nR2 mid 0 2k\nR3 vdd 0 5k\n")
    graphs = [prepare(compile_circuit(c)), _graphs(1)[0]]
    plan = make_plan(graphs)
    params = init_params(AgnnConfig(hidden_size=5), np.random.default_rng(3))
    cfg = LossConfig(variant=variant)
    assert T.grad_check(lambda: batch_kcl_loss(plan, encode(plan, params), cfg)[0], params) < 1e-4


def test_config_validation():
    for bad in ({"temperature": 0}, {"top_k": 0}, {"variant": "both"}):
        with pytest.raises(ValueError):
            LossConfig(**bad)
