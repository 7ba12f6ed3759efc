"""Downstream heads, task losses and evaluation metrics.

Three tasks sit on top of the encoder: circuit classification (``cls``),
per-node subcircuit detection (``det``) and edit-count regression on
circuit pairs (``ged``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import tensor as T
from .errors import EmptyEvaluation, LabelOutOfRange, ShapeMismatch, TaskMismatch
from .tensor import Tensor

TASKS = ("cls", "det", "ged")
PRIMARY_METRIC = {"cls": "acc@1", "det": "mAP", "ged": "mae"}
DET_THRESHOLD = 0.5


# -- heads -----------------------------------------------------------------

def init_head(task: str, hidden: int, num_classes: int, rng: np.random.Generator) -> dict[str, Tensor]:
    """Head parameters under the ``head.`` prefix.

    cls: hidden -> C logits. det: [z ⊕ onehot(S)] -> one logit.
    ged: [|z1-z2| ⊕ z1*z2] -> one value.
    """
    fan_in = {"cls": hidden, "det": hidden + num_classes, "ged": 2 * hidden}
    if task not in fan_in:
        raise TaskMismatch(f"unknown task {task!r}")
    out = num_classes if task == "cls" else 1
    limit = np.sqrt(6.0 / (fan_in[task] + out))
    return {
        "head.w": T.parameter(rng.uniform(-limit, limit, size=(fan_in[task], out))),
        "head.b": T.parameter(np.zeros(out)),
    }


def classifier_logits(z: Tensor, head: dict[str, Tensor]) -> Tensor:
    return T.matmul(z, head["head.w"]) + head["head.b"]


def detector_logits(z_nodes: Tensor, block_class: np.ndarray, num_classes: int,
                    head: dict[str, Tensor]) -> Tensor:
    """One logit per (node, queried subcircuit class)."""
    onehot = np.zeros((z_nodes.shape[0], num_classes))
    onehot[np.arange(z_nodes.shape[0]), np.asarray(block_class)] = 1.0
    x = T.concat([z_nodes, Tensor(onehot)], axis=1)
    return T.reshape(T.matmul(x, head["head.w"]) + head["head.b"], (-1,))


def ged_pair_features(z1, z2):
    """[|z1 - z2| ⊕ z1*z2] along the last axis; symmetric in its arguments."""
    if isinstance(z1, Tensor) or isinstance(z2, Tensor):
        z1, z2 = T.as_tensor(z1), T.as_tensor(z2)
        if z1.shape != z2.shape:
            raise ShapeMismatch(f"pair widths {z1.shape} vs {z2.shape}")
        return T.concat([T.abs_(z1 - z2), T.mul(z1, z2)], axis=-1)
    a, b = np.asarray(z1, dtype=np.float64), np.asarray(z2, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"pair widths {a.shape} vs {b.shape}")
    return np.concatenate([np.abs(a - b), a * b], axis=-1)


def ged_regress(features: Tensor, head: dict[str, Tensor]) -> Tensor:
    return T.reshape(T.matmul(features, head["head.w"]) + head["head.b"], (-1,))


def ged_predict(z1: Tensor, z2: Tensor, head: dict[str, Tensor]) -> Tensor:
    return ged_regress(ged_pair_features(z1, z2), head)


# -- losses ----------------------------------------------------------------

def softmax(logits) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def loss_cls(logits: Tensor, y) -> Tensor:
    """Mean softmax cross-entropy."""
    y = np.asarray(y, dtype=np.int64)
    n, c = logits.shape
    if y.shape != (n,):
        raise ShapeMismatch(f"{n} logit rows vs {y.shape} labels")
    if np.any((y < 0) | (y >= c)):
        raise LabelOutOfRange(f"labels must lie in [0, {c})")
    picked = T.take(T.log_softmax(logits), (np.arange(n), y))
    return T.neg(T.mean(picked))


def loss_det(logits: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy over nodes."""
    return T.bce_with_logits(logits, np.asarray(labels, dtype=np.float64))


def loss_ged(pred: Tensor, d) -> Tensor:
    d = np.asarray(d, dtype=np.float64)
    if pred.shape != d.shape:
        raise ShapeMismatch(f"{pred.shape} predictions vs {d.shape} labels")
    diff = pred - d
    return T.mean(T.mul(diff, diff))


# -- metrics ---------------------------------------------------------------

@dataclass
class MetricsReport:
    task: str
    values: dict[str, float] = field(default_factory=dict)

    def __getitem__(self, key: str) -> float:
        return self.values[key]

    @property
    def primary(self) -> float:
        """Higher is better: acc@1, mAP, or -MAE."""
        v = self.values[PRIMARY_METRIC[self.task]]
        return -v if self.task == "ged" else v


def top_k_accuracy(logits, y, k: int) -> float:
    logits = np.asarray(logits)
    y = np.asarray(y)
    k = min(k, logits.shape[1])
    # rank of the true class = number of classes scoring strictly higher
    true = logits[np.arange(len(y)), y]
    rank = (logits > true[:, None]).sum(axis=1)
    return float(np.mean(rank < k))


def macro_recall_f1(pred, y) -> tuple[float, float]:
    pred, y = np.asarray(pred), np.asarray(y)
    recalls, f1s = [], []
    for c in np.union1d(pred, y):
        tp = np.sum((pred == c) & (y == c))
        fp = np.sum((pred == c) & (y != c))
        fn = np.sum((pred != c) & (y == c))
        r = tp / (tp + fn) if tp + fn else 0.0
        p = tp / (tp + fp) if tp + fp else 0.0
        recalls.append(r)
        f1s.append(2 * p * r / (p + r) if p + r else 0.0)
    return float(np.mean(recalls)), float(np.mean(f1s))


def average_precision(scores, labels) -> float:
    """Area under the all-points interpolated precision-recall curve."""
    scores, labels = np.asarray(scores, dtype=np.float64), np.asarray(labels).astype(bool)
    npos = labels.sum()
    if npos == 0:
        return float("nan")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(hits) + 1)
    recall = tp / npos
    # precision envelope, then sum over recall steps
    env = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * env))


def roc_auc(scores, labels) -> float:
    """Mann-Whitney U statistic normalized to [0, 1]; ties count one half."""
    scores, labels = np.asarray(scores, dtype=np.float64), np.asarray(labels).astype(bool)
    npos, nneg = labels.sum(), (~labels).sum()
    if npos == 0 or nneg == 0:
        return float("nan")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - npos * (npos + 1) / 2.0
    return float(u / (npos * nneg))


def binary_recall_f1(pred, labels) -> tuple[float, float]:
    pred, labels = np.asarray(pred).astype(bool), np.asarray(labels).astype(bool)
    tp = np.sum(pred & labels)
    fp = np.sum(pred & ~labels)
    fn = np.sum(~pred & labels)
    r = tp / (tp + fn) if tp + fn else 0.0
    p = tp / (tp + fp) if tp + fp else 0.0
    return float(r), float(2 * p * r / (p + r) if p + r else 0.0)


def iou(pred, labels) -> float:
    pred, labels = np.asarray(pred).astype(bool), np.asarray(labels).astype(bool)
    union = np.sum(pred | labels)
    return 1.0 if union == 0 else float(np.sum(pred & labels) / union)


def compute_metrics(task: str, predictions, labels, groups=None) -> MetricsReport:
    """Metrics for one evaluation pass.

    cls: predictions are (N x C) logits, labels class ids.
    det: predictions and labels are per-graph sequences of node scores
    (probabilities) and 0/1 labels; groups holds each graph's queried class.
    ged: predictions and labels are real vectors.
    """
    if task not in TASKS:
        raise TaskMismatch(f"unknown task {task!r}")
    if len(predictions) == 0:
        raise EmptyEvaluation(f"no {task} samples to evaluate")
    if len(predictions) != len(labels):
        raise ShapeMismatch(f"{len(predictions)} predictions vs {len(labels)} labels")
    if task == "cls":
        logits = np.asarray(predictions, dtype=np.float64)
        y = np.asarray(labels, dtype=np.int64)
        rec, f1 = macro_recall_f1(logits.argmax(axis=1), y)
        return MetricsReport(task, {
            "acc@1": top_k_accuracy(logits, y, 1),
            "acc@2": top_k_accuracy(logits, y, 2),
            "acc@5": top_k_accuracy(logits, y, 5),
            "recall": rec,
            "f1": f1,
        })
    if task == "det":
        groups = np.zeros(len(labels), dtype=int) if groups is None else np.asarray(groups)
        aps = []
        for g in np.unique(groups):
            idx = np.flatnonzero(groups == g)
            ap = average_precision(np.concatenate([predictions[i] for i in idx]),
                                   np.concatenate([labels[i] for i in idx]))
            if not np.isnan(ap):
                aps.append(ap)
        s = np.concatenate([np.asarray(p, dtype=np.float64) for p in predictions])
        y = np.concatenate([np.asarray(t) for t in labels])
        rec, f1 = binary_recall_f1(s >= DET_THRESHOLD, y)
        return MetricsReport(task, {
            "mAP": float(np.mean(aps)) if aps else 0.0,
            "recall": rec,
            "f1": f1,
            "auc": roc_auc(s, y),
            "iou": float(np.mean([iou(np.asarray(p) >= DET_THRESHOLD, t)
                                  for p, t in zip(predictions, labels)])),
        })
    pred = np.asarray(predictions, dtype=np.float64)
    d = np.asarray(labels, dtype=np.float64)
    err = pred - d
    return MetricsReport(task, {"mae": float(np.mean(np.abs(err))), "mse": float(np.mean(err * err))})
