"""Pretraining and finetuning loops, SGD with cosine decay, checkpoints and run records."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from . import tensor as T
from .agnn import READOUTS, AgnnConfig, CompiledGraph, encode, init_params, make_plan, prepare, readout, readout_width
from .cktgraph import DEVICE, NET, compile_circuit
from .errors import ShapeMismatch, TaskMismatch
from .kclloss import LossConfig, ablation_positives, batch_kcl_loss, no_pos_loss
from .netlist import Circuit
from .synthdata import NUM_CLASSES, Dataset, LabeledSample
from .tasks import (
    PRIMARY_METRIC,
    MetricsReport,
    classifier_logits,
    compute_metrics,
    detector_logits,
    ged_pair_features,
    ged_regress,
    init_head,
    loss_cls,
    loss_det,
    loss_ged,
)
from .tensor import Tensor

TRACE_FIELDS = ("epoch", "mean_loss", "mean_pos_sim", "mean_neg_sim", "pair_count")


@dataclass
class PretrainConfig:
    lr0: float = 0.025
    momentum: float = 0.0
    weight_decay: float = 0.00125
    epochs: int = 200
    batch_size: int = 32
    tau: float = 0.5
    top_k: int = 1
    variant: str = "full"
    seed: int = 0
    hidden_size: int = 64
    num_layers: int = 3

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if self.lr0 <= 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("learning rate must be positive, momentum and decay non-negative")

    def loss_config(self) -> LossConfig:
        return LossConfig(temperature=self.tau, top_k=self.top_k, variant=self.variant)


FINETUNE_DEFAULTS = {
    "cls": {"lr0": 0.01, "weight_decay": 0.005},
    "det": {"lr0": 0.03, "weight_decay": 0.005},
    "ged": {"lr0": 0.01, "weight_decay": 0.0025},
}


@dataclass
class FinetuneConfig:
    task: str = "cls"
    lr0: float | None = None
    weight_decay: float | None = None
    momentum: float = 0.0
    epochs: int = 20
    batch_size: int = 16
    hidden_size: int = 64
    dropout: float = 0.6
    activation: str = "relu"
    freeze_encoder: bool = False
    readout: str = "meanmax"
    clip_norm: float | None = 5.0

    def __post_init__(self):
        if self.task not in FINETUNE_DEFAULTS:
            raise TaskMismatch(f"unknown task {self.task!r}")
        if self.readout not in READOUTS:
            raise ValueError(f"readout must be one of {READOUTS}")
        d = FINETUNE_DEFAULTS[self.task]
        if self.lr0 is None:
            self.lr0 = d["lr0"]
        if self.weight_decay is None:
            self.weight_decay = d["weight_decay"]


# -- optimizer -------------------------------------------------------------

def cosine_lr(epoch: int, total_epochs: int, lr0: float) -> float:
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return lr0 * (1.0 + math.cos(math.pi * epoch / total_epochs)) / 2.0


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float,
             momentum: float = 0.0, weight_decay: float = 0.0,
             buffers: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """p <- p - lr * v with v = momentum * v + g + weight_decay * p."""
    out = {}
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ShapeMismatch(f"{k}: gradient {g.shape} vs parameter {p.shape}")
        step = g + weight_decay * p
        if buffers is not None and momentum:
            buf = buffers.get(k)
            step = step if buf is None else momentum * buf + step
            buffers[k] = step
        out[k] = p - lr * step
    return out


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float | None) -> dict[str, np.ndarray]:
    """Scale all gradients together so their joint L2 norm is at most max_norm."""
    if max_norm is None:
        return grads
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total <= max_norm:
        return grads
    return {k: g * (max_norm / total) for k, g in grads.items()}


def _apply_sgd(params: dict[str, Tensor], lr, momentum, wd, buffers, only=None, clip=None):
    keys = [k for k in params if only is None or only(k)]
    vals = {k: params[k].value for k in keys}
    grads = clip_grad_norm({k: params[k].grad for k in keys if params[k].grad is not None}, clip)
    new = sgd_step(vals, grads, lr, momentum, wd, buffers)
    for k in keys:
        params[k].value = new[k]
        params[k].grad = None


def _zero(params: dict[str, Tensor]):
    for p in params.values():
        p.grad = None


# -- checkpoints -----------------------------------------------------------

@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config: dict
    epoch: int = 0
    seed: int = 0
    history: list[dict] = field(default_factory=list)

    def tensors(self) -> dict[str, Tensor]:
        return {k: T.parameter(v.copy()) for k, v in self.params.items()}

    def encoder(self) -> dict[str, Tensor]:
        return {k: T.parameter(v.copy()) for k, v in self.params.items() if not k.startswith("head.")}

    def to_json(self) -> str:
        doc = {
            "config": self.config,
            "epoch": self.epoch,
            "seed": self.seed,
            "history": self.history,
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                       for k, v in self.params.items()},
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "Checkpoint":
        doc = json.loads(text)
        params = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
                  for k, v in doc["params"].items()}
        return cls(params, doc["config"], doc["epoch"], doc["seed"], doc["history"])

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_json(Path(path).read_text())


def write_trace(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
        w.writeheader()
        for row in history:
            w.writerow({k: row[k] for k in TRACE_FIELDS})


# -- pretraining -----------------------------------------------------------

def compile_all(circuits: list[Circuit]) -> list[CompiledGraph]:
    out = []
    for c in circuits:
        try:
            out.append(prepare(compile_circuit(c)))
        except Exception as exc:
            raise type(exc)(f"{c.name}: {exc}") from exc
    return out


def _batches(n: int, size: int, rng: np.random.Generator, min_graphs: int = 1) -> list[np.ndarray]:
    order = rng.permutation(n)
    out = [order[i:i + size] for i in range(0, n, size)]
    if len(out) > 1 and len(out[-1]) < min_graphs:
        tail = out.pop()
        out[-1] = np.concatenate([out[-1], tail])
    return out


def pretrain(graphs: list[CompiledGraph], cfg: PretrainConfig, trace_path=None) -> Checkpoint:
    """Contrastive pretraining of the encoder; variant ``none`` returns the initialization."""
    rng = np.random.default_rng(cfg.seed)
    acfg = AgnnConfig(hidden_size=cfg.hidden_size, num_layers=cfg.num_layers)
    params = init_params(acfg, rng)
    lcfg = cfg.loss_config()
    history: list[dict] = []
    if cfg.variant != "none":
        min_graphs = 2 if cfg.variant == "no_neg" else 1
        buffers: dict = {}
        for epoch in range(cfg.epochs):
            lr = cosine_lr(epoch, cfg.epochs, cfg.lr0)
            losses, pos, neg, pairs = [], [], [], 0
            for idx in _batches(len(graphs), cfg.batch_size, rng, min_graphs):
                plan = make_plan([graphs[i] for i in idx])
                if cfg.variant == "no_pos":
                    z1, z2, h1 = ablation_positives(plan, params, lcfg, rng)
                    loss, st = no_pos_loss(plan, z1, z2, h1, lcfg)
                else:
                    loss, st = batch_kcl_loss(plan, encode(plan, params), lcfg)
                _zero(params)
                loss.backward()
                _apply_sgd(params, lr, cfg.momentum, cfg.weight_decay, buffers)
                losses.append(loss.item())
                pos.append(st["mean_pos_sim"])
                neg.append(st["mean_neg_sim"])
                pairs += st["pair_count"]
            history.append({
                "epoch": epoch + 1,
                "mean_loss": float(np.mean(losses)),
                "mean_pos_sim": float(np.mean(pos)),
                "mean_neg_sim": float(np.nanmean(neg)) if not np.all(np.isnan(neg)) else float("nan"),
                "pair_count": pairs,
            })
    ckpt = Checkpoint({k: v.value.copy() for k, v in params.items()}, asdict(cfg),
                      cfg.epochs if cfg.variant != "none" else 0, cfg.seed, history)
    if trace_path is not None:
        write_trace(history, trace_path)
    return ckpt


# -- finetuning ------------------------------------------------------------

@dataclass
class TaskData:
    """Compiled samples of one split with their labels laid out for batching."""
    task: str
    graphs: list[CompiledGraph]
    pairs: list[CompiledGraph] | None
    labels: list

    def __len__(self):
        return len(self.graphs)


def task_data(samples: list[LabeledSample], task: str) -> TaskData:
    graphs = compile_all([s.circuit for s in samples])
    pairs = compile_all([s.pair for s in samples]) if task == "ged" else None
    labels = []
    for s, cg in zip(samples, graphs):
        if s.task != task:
            raise TaskMismatch(f"sample of task {s.task!r} in a {task!r} run")
        if task == "det":
            cls, lab = s.label
            labels.append((cls, np.array([lab.get(n, 0) for n in cg.dag.names], dtype=np.float64)))
        else:
            labels.append(s.label)
    return TaskData(task, graphs, pairs, labels)


def _query_mask(cg: CompiledGraph) -> np.ndarray:
    return np.array([k in (DEVICE, NET) for k in cg.dag.kinds])


def _forward(task: str, data: TaskData, idx, params: dict[str, Tensor], dropout: float,
             rng: np.random.Generator | None, mode: str = "mean"):
    """(prediction tensor, label array, extra) for the samples idx."""
    if task == "ged":
        graphs = [g for i in idx for g in (data.graphs[i], data.pairs[i])]
    else:
        graphs = [data.graphs[i] for i in idx]
    plan = make_plan(graphs)
    h = encode(plan, params)
    if task == "cls":
        z = T.dropout(readout(plan, h, mode), dropout, rng)
        return classifier_logits(z, params), np.array([data.labels[i] for i in idx]), None
    if task == "ged":
        z = readout(plan, h, mode)
        n = len(idx)
        z1 = T.take(z, np.arange(0, 2 * n, 2))
        z2 = T.take(z, np.arange(1, 2 * n, 2))
        # dropout after pairing, so identical circuits still give |z1 - z2| = 0
        feats = T.dropout(ged_pair_features(z1, z2), dropout, rng)
        return ged_regress(feats, params), np.array([data.labels[i] for i in idx], dtype=np.float64), None
    rows, classes, ys, sizes = [], [], [], []
    for g, i in enumerate(idx):
        cls, lab = data.labels[i]
        m = _query_mask(data.graphs[i])
        rows.append(plan.perm[g][m])
        ys.append(lab[m])
        classes.append(np.full(m.sum(), cls))
        sizes.append(int(m.sum()))
    rows_a = np.concatenate(rows)
    z = T.dropout(T.take(h, rows_a), dropout, rng)
    logits = detector_logits(z, np.concatenate(classes), NUM_CLASSES, params)
    return logits, np.concatenate(ys), sizes


def _task_loss(task, pred, y):
    return {"cls": loss_cls, "det": loss_det, "ged": loss_ged}[task](pred, y)


def evaluate(task: str, data: TaskData, params: dict[str, Tensor], batch_size: int = 64,
             mode: str = "mean") -> MetricsReport:
    preds, labels, groups = [], [], []
    for start in range(0, len(data), batch_size):
        idx = list(range(start, min(start + batch_size, len(data))))
        pred, y, sizes = _forward(task, data, idx, params, 0.0, None, mode)
        if task == "det":
            prob = 1.0 / (1.0 + np.exp(-pred.value))
            cuts = np.cumsum(sizes)[:-1]
            preds.extend(np.split(prob, cuts))
            labels.extend(np.split(y, cuts))
            groups.extend(data.labels[i][0] for i in idx)
        else:
            preds.extend(pred.value)
            labels.extend(y)
    return compute_metrics(task, preds, labels, groups if task == "det" else None)


@dataclass
class FinetuneResult:
    params: dict[str, np.ndarray]
    test: MetricsReport
    val: MetricsReport
    best_epoch: int
    history: list[dict]


def finetune(encoder: dict[str, np.ndarray], train: TaskData, val: TaskData, test: TaskData,
             cfg: FinetuneConfig, seed: int = 0) -> FinetuneResult:
    """Joint encoder + head training; test metrics are taken at the best validation epoch."""
    task = cfg.task
    rng = np.random.default_rng([seed, 101])
    params = {k: T.parameter(np.array(v, dtype=np.float64)) for k, v in encoder.items()
              if not k.startswith("head.")}
    hidden = params["w_in"].shape[1]
    width = hidden if task == "det" else readout_width(hidden, cfg.readout)
    params.update(init_head(task, width, NUM_CLASSES, rng))
    only = (lambda k: k.startswith("head.")) if cfg.freeze_encoder else None
    buffers: dict = {}
    best = None
    history = []
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr0)
        losses = []
        for idx in _batches(len(train), cfg.batch_size, rng):
            pred, y, _ = _forward(task, train, idx, params, cfg.dropout, rng, cfg.readout)
            loss = _task_loss(task, pred, y)
            _zero(params)
            loss.backward()
            _apply_sgd(params, lr, cfg.momentum, cfg.weight_decay, buffers, only, cfg.clip_norm)
            losses.append(loss.item())
        v = evaluate(task, val, params, mode=cfg.readout)
        history.append({"epoch": epoch + 1, "train_loss": float(np.mean(losses)),
                        "val_" + PRIMARY_METRIC[task]: v[PRIMARY_METRIC[task]]})
        if best is None or v.primary > best[1].primary:
            best = (epoch + 1, v, evaluate(task, test, params, mode=cfg.readout),
                    {k: p.value.copy() for k, p in params.items()})
    epoch, v, t, snapshot = best
    return FinetuneResult(snapshot, t, v, epoch, history)


# -- multi-seed runs -------------------------------------------------------

def max_workers() -> int:
    env = os.environ.get("KCLNET_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            return max(1, min(int(env), cap))
        except ValueError:
            pass
    return cap


def parallel_map(fn, items: list) -> list:
    """Ordered map over worker processes, capped by KCLNET_THREADS."""
    workers = min(max_workers(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


@dataclass
class SplitData:
    train: TaskData
    val: TaskData
    test: TaskData


def split_data(ds: Dataset) -> SplitData:
    return SplitData(*(task_data(ds.split(s), ds.task) for s in ("train", "val", "test")))


def mean_metrics(reports: list[MetricsReport]) -> MetricsReport:
    keys = reports[0].values.keys()
    return MetricsReport(reports[0].task, {k: float(np.mean([r.values[k] for r in reports])) for k in keys})


def write_metrics_csv(rows: list[tuple], path) -> None:
    """Rows of (seed, task, metric, value)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "task", "metric", "value"])
        for seed, task, metric, value in rows:
            w.writerow([seed, task, metric, repr(float(value))])


def _finetune_seed(encoder, data: SplitData, cfg: FinetuneConfig, seed: int) -> FinetuneResult:
    return finetune(encoder, data.train, data.val, data.test, cfg, seed)


def finetune_seeds(encoder: dict[str, np.ndarray], data: SplitData, cfg: FinetuneConfig,
                   seeds: list[int]) -> list[FinetuneResult]:
    """One finetuning run per seed, spread over up to KCLNET_THREADS processes."""
    return parallel_map(partial(_finetune_seed, encoder, data, cfg), list(seeds))
