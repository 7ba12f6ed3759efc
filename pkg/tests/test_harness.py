import json

import numpy as np
import pytest

from kclnet.agnn import AgnnConfig, init_params
from kclnet.harness import (
    Checkpoint,
    FinetuneConfig,
    PretrainConfig,
    _batches,
    compile_all,
    cosine_lr,
    finetune,
    finetune_seeds,
    max_workers,
    mean_metrics,
    pretrain,
    sgd_step,
    split_data,
    write_metrics_csv,
)
from kclnet.synthdata import gen_circuit, make_dataset


@pytest.fixture(scope="module")
def toy():
    return compile_all([gen_circuit(k % 12, seed=k) for k in range(20)])


@pytest.fixture(scope="module")
def cls_data():
    return split_data(make_dataset("cls", 48, seed=1))


def test_cosine_schedule():
    assert cosine_lr(100, 200, 0.025) == 0.0125
    assert cosine_lr(0, 200, 0.025) == 0.025
    assert cosine_lr(200, 200, 0.025) == 0.0
    lrs = [cosine_lr(e, 50, 1.0) for e in range(51)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    with pytest.raises(ValueError):
        cosine_lr(201, 200, 0.025)


def test_sgd_step_hand():
    out = sgd_step({"p": np.array([1.0])}, {"p": np.array([0.5])}, lr=0.1, weight_decay=0.1)
    assert out["p"][0] == pytest.approx(1.0 - 0.1 * 0.6)
    buf = {}
    p = {"p": np.array([1.0])}
    p = sgd_step(p, {"p": np.array([1.0])}, 0.1, momentum=0.9, buffers=buf)
    p = sgd_step(p, {"p": np.array([1.0])}, 0.1, momentum=0.9, buffers=buf)
    assert p["p"][0] == pytest.approx(1.0 - 0.1 - 0.1 * 1.9)
    # missing gradient leaves only decay
    assert sgd_step({"q": np.array([2.0])}, {}, 0.5, weight_decay=0.1)["q"][0] == pytest.approx(1.9)


def test_config_golden():
    p = PretrainConfig()
    assert (p.lr0, p.momentum, p.weight_decay, p.batch_size, p.top_k, p.epochs, p.hidden_size) == \
        (0.025, 0.0, 0.00125, 32, 1, 200, 64)
    f = FinetuneConfig(task="cls")
    assert (f.epochs, f.hidden_size, f.dropout, f.activation, f.momentum) == (20, 64, 0.6, "relu", 0.0)
    assert (f.lr0, f.weight_decay) == (0.01, 0.005)
    assert (FinetuneConfig(task="det").lr0, FinetuneConfig(task="det").weight_decay) == (0.03, 0.005)
    assert (FinetuneConfig(task="ged").lr0, FinetuneConfig(task="ged").weight_decay) == (0.01, 0.0025)


def test_batches_cover_and_merge_tail():
    parts = _batches(10, 4, np.random.default_rng(0), min_graphs=3)
    assert [len(p) for p in parts] == [4, 6]
    assert sorted(np.concatenate(parts)) == list(range(10))


def test_pretrain_none_is_initialization(toy):
    ck = pretrain(toy, PretrainConfig(variant="none", seed=3, epochs=5))
    init = init_params(AgnnConfig(), np.random.default_rng(3))
    assert ck.history == []
    assert all(np.array_equal(ck.params[k], init[k].value) for k in init)


@pytest.mark.parametrize("variant", ["full", "no_neg", "no_pos"])
def test_pretrain_deterministic_and_trending(toy, variant, tmp_path):
    cfg = PretrainConfig(epochs=5, seed=0, variant=variant, hidden_size=16, batch_size=8)
    a = pretrain(toy, cfg, trace_path=tmp_path / "a.csv")
    b = pretrain(toy, cfg, trace_path=tmp_path / "b.csv")
    assert a.to_json() == b.to_json()
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    if variant != "no_pos":  # augmented views make the no_pos trace noisy over 5 epochs
        assert a.history[-1]["mean_loss"] <= a.history[0]["mean_loss"]
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "epoch,mean_loss,mean_pos_sim,mean_neg_sim,pair_count"


def test_checkpoint_round_trip(toy, tmp_path):
    ck = pretrain(toy, PretrainConfig(epochs=2, hidden_size=8))
    ck.save(tmp_path / "c.json")
    back = Checkpoint.load(tmp_path / "c.json")
    assert back.to_json() == ck.to_json()
    assert all(np.array_equal(back.params[k], ck.params[k]) for k in ck.params)
    assert json.loads(back.to_json())["params"]["w_in"]["shape"] == [19, 8]


@pytest.mark.parametrize("task", ["cls", "det", "ged"])
def test_finetune_deterministic(task, tmp_path):
    data = split_data(make_dataset(task, 36, seed=2))
    enc = pretrain([], PretrainConfig(variant="none", hidden_size=8)).params
    cfg = FinetuneConfig(task=task, epochs=2, batch_size=8)
    a = finetune(enc, data.train, data.val, data.test, cfg, seed=4)
    b = finetune(enc, data.train, data.val, data.test, cfg, seed=4)
    assert a.test.values == b.test.values and a.history == b.history
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    rows = [(4, task, k, v) for k, v in a.test.values.items()]
    write_metrics_csv(rows, tmp_path / "a.csv")
    write_metrics_csv(rows, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_finetune_freeze_keeps_encoder(cls_data):
    enc = pretrain([], PretrainConfig(variant="none", hidden_size=8)).params
    res = finetune(enc, cls_data.train, cls_data.val, cls_data.test,
                   FinetuneConfig(task="cls", epochs=1, batch_size=8, freeze_encoder=True))
    assert all(np.array_equal(res.params[k], enc[k]) for k in enc)
    assert not np.array_equal(res.params["head.b"], np.zeros(12)) or res.best_epoch == 1


def test_finetune_seeds_matches_serial(cls_data, monkeypatch):
    monkeypatch.setenv("KCLNET_THREADS", "1")
    enc = pretrain([], PretrainConfig(variant="none", hidden_size=8)).params
    cfg = FinetuneConfig(task="cls", epochs=1, batch_size=8)
    runs = finetune_seeds(enc, cls_data, cfg, [0, 1])
    solo = finetune(enc, cls_data.train, cls_data.val, cls_data.test, cfg, seed=1)
    assert runs[1].test.values == solo.test.values
    assert mean_metrics([r.test for r in runs])["acc@1"] == pytest.approx(
        np.mean([r.test["acc@1"] for r in runs]))


def test_max_workers_env(monkeypatch):
    monkeypatch.setenv("KCLNET_THREADS", "1")
    assert max_workers() == 1
    monkeypatch.setenv("KCLNET_THREADS", "junk")
    assert max_workers() >= 1
    monkeypatch.setenv("KCLNET_THREADS", "100000")
    assert max_workers() <= 100000
