import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kclnet import tensor as T
from kclnet.errors import EmptyEvaluation, LabelOutOfRange, ShapeMismatch, TaskMismatch
from kclnet.tasks import (
    average_precision,
    compute_metrics,
    detector_logits,
    ged_pair_features,
    init_head,
    iou,
    loss_cls,
    loss_det,
    loss_ged,
    macro_recall_f1,
    roc_auc,
    softmax,
    top_k_accuracy,
)


def test_loss_cls_closed_forms():
    assert loss_cls(T.Tensor(np.zeros((3, 12))), [0, 5, 11]).item() == pytest.approx(math.log(12), abs=1e-12)
    big = np.full((2, 4), -50.0)
    big[[0, 1], [1, 3]] = 50.0
    assert loss_cls(T.Tensor(big), [1, 3]).item() < 1e-40
    with pytest.raises(LabelOutOfRange):
        loss_cls(T.Tensor(np.zeros((1, 3))), [3])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_softmax_rows_sum_to_one(seed):
    p = softmax(np.random.default_rng(seed).normal(scale=20, size=(4, 12)))
    assert np.all(np.abs(p.sum(axis=1) - 1) <= 1e-12)


def test_loss_det_closed_forms():
    assert loss_det(T.Tensor(np.zeros(4)), [0, 1, 1, 0]).item() == pytest.approx(math.log(2), abs=1e-15)
    assert loss_det(T.Tensor(np.array([40.0, -40.0])), [1, 0]).item() < 1e-15


def test_loss_ged():
    assert loss_ged(T.Tensor(np.array([1.0, 3.0])), [1.0, 3.0]).item() == 0.0
    assert loss_ged(T.Tensor(np.array([0.0, 0.0])), [1.0, 3.0]).item() == 5.0
    with pytest.raises(ShapeMismatch):
        loss_ged(T.Tensor(np.zeros(2)), [1.0])


def test_ged_features_symmetric():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    assert np.array_equal(ged_pair_features(a, b), ged_pair_features(b, a))
    f = ged_pair_features(a, a)
    assert not f[:, :4].any()


def test_detector_one_logit_per_query():
    head = init_head("det", 3, 12, np.random.default_rng(0))
    z = T.Tensor(np.ones((5, 3)))
    out = detector_logits(z, np.array([0, 1, 2, 3, 11]), 12, head)
    assert out.shape == (5,)
    w = head["head.w"].value[:, 0]
    assert np.allclose(out.value, w[:3].sum() + w[3 + np.array([0, 1, 2, 3, 11])])


def test_head_shapes():
    rng = np.random.default_rng(0)
    assert init_head("cls", 8, 12, rng)["head.w"].shape == (8, 12)
    assert init_head("det", 8, 12, rng)["head.w"].shape == (20, 1)
    assert init_head("ged", 8, 12, rng)["head.w"].shape == (16, 1)
    with pytest.raises(TaskMismatch):
        init_head("seg", 8, 12, rng)


def test_top_k():
    logits = np.array([[0.1, 0.9, 0.0], [0.5, 0.2, 0.3], [0.2, 0.3, 0.5]])
    y = np.array([1, 2, 0])
    assert top_k_accuracy(logits, y, 1) == pytest.approx(1 / 3)
    assert top_k_accuracy(logits, y, 2) == pytest.approx(2 / 3)
    assert top_k_accuracy(logits, y, 5) == 1.0


def test_macro_f1_golden():
    # per class (tp, fp, fn): 0 -> (1,1,1), 1 -> (1,0,1), 2 -> (1,1,0)
    pred = [0, 0, 1, 2, 2]
    y = [0, 1, 1, 2, 0]
    rec, f1 = macro_recall_f1(pred, y)
    assert rec == pytest.approx((1 / 2 + 1 / 2 + 1) / 3)
    assert f1 == pytest.approx((1 / 2 + 2 / 3 + 2 / 3) / 3)


def test_average_precision_golden():
    # ranked labels 1,0,1,0: precision at hits 1 and 2/3
    assert average_precision([0.9, 0.8, 0.7, 0.1], [1, 0, 1, 0]) == pytest.approx((1 + 2 / 3) / 2)
    assert average_precision([0.9, 0.1], [1, 0]) == 1.0
    assert math.isnan(average_precision([0.5], [0]))


def _auc_pairs(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=30))
def test_auc_matches_pair_count(data):
    scores, labels = [float(s) for s, _ in data], [l for _, l in data]
    if all(labels) or not any(labels):
        assert math.isnan(roc_auc(scores, labels))
    else:
        assert roc_auc(scores, labels) == pytest.approx(_auc_pairs(scores, labels), abs=1e-12)


def test_auc_random_scores_near_half():
    rng = np.random.default_rng(0)
    assert abs(roc_auc(rng.random(20000), rng.random(20000) < 0.3) - 0.5) < 0.02


def test_iou():
    assert iou([0, 0], [0, 0]) == 1.0
    assert iou([1, 1, 0], [1, 0, 1]) == pytest.approx(1 / 3)


def test_compute_metrics_cls():
    logits = np.eye(3)[[0, 1, 2, 0]]
    rep = compute_metrics("cls", logits, [0, 1, 2, 0])
    assert rep["acc@1"] == 1.0 and rep["f1"] == 1.0 and rep.primary == 1.0


def test_compute_metrics_det_and_ged():
    rep = compute_metrics("det", [np.array([0.9, 0.2]), np.array([0.1, 0.7])],
                          [np.array([1, 0]), np.array([0, 1])], groups=[0, 1])
    assert rep["mAP"] == 1.0 and rep["auc"] == 1.0 and rep["iou"] == 1.0
    rep = compute_metrics("ged", [1.0, 2.0], [2.0, 2.0])
    assert rep["mae"] == 0.5 and rep["mse"] == 0.5 and rep.primary == -0.5
    with pytest.raises(EmptyEvaluation):
        compute_metrics("cls", [], [])
