"""Command line entry point: ``kclnet gen|compile|pretrain|finetune|eval|verify-kcl|gradcheck``.

Exit status is 0 on success, 2 when an input fails validation and 3 when a
numerical check (gradients, witness) does not pass.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import KclNetError

EXIT_OK, EXIT_INVALID, EXIT_CHECK = 0, 2, 3

log = logging.getLogger("kclnet")


def _cmd_gen(args) -> int:
    from .synthdata import make_dataset, write_dataset

    ds = make_dataset(args.task, args.n, args.seed)
    path = write_dataset(ds, args.out)
    log.info("wrote %d %s samples to %s", len(ds.samples), args.task, path)
    print(path)
    return EXIT_OK


def _cmd_compile(args) -> int:
    from .cktgraph import assign_depths, compile_circuit, dag_to_json
    from .netlist import read_netlist, validate_circuit

    c = read_netlist(args.netlist)
    report = validate_circuit(c)
    for issue in report.issues:
        log.warning("%s %s: %s", issue.severity.value, issue.code, issue.message)
    if not report.ok:
        return EXIT_INVALID
    dag = compile_circuit(c)
    text = dag_to_json(dag, assign_depths(dag))
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return EXIT_OK


def _cmd_pretrain(args) -> int:
    from .harness import PretrainConfig, compile_all, pretrain
    from .synthdata import read_dataset

    ds = read_dataset(args.data)
    cfg = PretrainConfig(lr0=args.lr0, epochs=args.epochs, batch_size=args.batch_size, tau=args.tau,
                         top_k=args.topk, variant=args.variant, seed=args.seed,
                         hidden_size=args.hidden, momentum=args.momentum,
                         weight_decay=args.weight_decay)
    ckpt = pretrain(compile_all(ds.circuits()), cfg, trace_path=args.trace)
    ckpt.save(args.out)
    if ckpt.history:
        log.info("final mean loss %.6f", ckpt.history[-1]["mean_loss"])
    print(args.out)
    return EXIT_OK


def _cmd_finetune(args) -> int:
    from .harness import Checkpoint, FinetuneConfig, finetune_seeds, mean_metrics, split_data, write_metrics_csv
    from .synthdata import read_dataset

    ckpt = Checkpoint.load(args.ckpt)
    ds = read_dataset(args.data)
    if ds.task != args.task:
        from .errors import TaskMismatch
        raise TaskMismatch(f"dataset holds {ds.task!r} samples, asked for {args.task!r}")
    cfg = FinetuneConfig(task=args.task, lr0=args.lr0, epochs=args.epochs, batch_size=args.batch_size,
                         freeze_encoder=args.freeze_encoder, readout=args.readout)
    data = split_data(ds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports, rows = [], []
    seeds = list(range(args.seed, args.seed + args.runs))
    for seed, res in zip(seeds, finetune_seeds(ckpt.params, data, cfg, seeds)):
        reports.append(res.test)
        rows.extend((seed, args.task, k, v) for k, v in res.test.values.items())
        Checkpoint(res.params, {"task": args.task, **asdict(cfg)}, res.best_epoch, seed,
                   res.history).save(out / f"finetuned_seed{seed}.json")
    mean = mean_metrics(reports)
    write_metrics_csv(rows, out / "metrics.csv")
    (out / "metrics.json").write_text(json.dumps({"task": args.task, "mean": mean.values}, indent=1))
    print(json.dumps(mean.values))
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .harness import Checkpoint, evaluate, task_data
    from .synthdata import read_dataset

    ckpt = Checkpoint.load(args.ckpt)
    ds = read_dataset(args.data)
    task = ckpt.config.get("task", args.task)
    samples = ds.split(args.split) if args.split != "all" else ds.samples
    report = evaluate(task, task_data(samples, task), ckpt.tensors(), mode=ckpt.config.get("readout", "meanmax"))
    print(json.dumps({"task": task, "split": args.split, **report.values}))
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .cktgraph import compile_circuit
    from .harness import Checkpoint
    from .kclverify import verify_trained_model
    from .netlist import read_netlist

    ckpt = Checkpoint.load(args.ckpt)
    params = ckpt.encoder()
    ok = True
    for path in args.netlist:
        res = verify_trained_model(params, compile_circuit(read_netlist(path)))
        print(json.dumps(res.to_json()))
        ok &= res.passed
    return EXIT_OK if ok else EXIT_CHECK


def _cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradient_suite

    results = run_gradient_suite(hidden=args.hidden, seed=args.seed)
    worst = 0.0
    for name, err in results.items():
        print(f"{name}: max relative error {err:.3e}")
        worst = max(worst, err)
    return EXIT_OK if worst < args.tol else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kclnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--task", choices=("cls", "det", "ged"), required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=_cmd_gen)

    c = sub.add_parser("compile", help="netlist to depth-annotated DAG JSON")
    c.add_argument("netlist")
    c.add_argument("--out")
    c.set_defaults(fn=_cmd_compile)

    pt = sub.add_parser("pretrain", help="contrastive encoder pretraining")
    pt.add_argument("--data", required=True, help="dataset manifest.json")
    pt.add_argument("--out", required=True, help="checkpoint path")
    pt.add_argument("--lr0", type=float, default=0.025)
    pt.add_argument("--momentum", type=float, default=0.0)
    pt.add_argument("--weight-decay", type=float, default=0.00125)
    pt.add_argument("--epochs", type=int, default=200)
    pt.add_argument("--batch-size", type=int, default=32)
    pt.add_argument("--tau", type=float, default=0.5)
    pt.add_argument("--topk", type=int, default=1)
    pt.add_argument("--variant", choices=("full", "no_pos", "no_neg", "none"), default="full")
    pt.add_argument("--hidden", type=int, default=64)
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("--trace", help="loss trace CSV path")
    pt.set_defaults(fn=_cmd_pretrain)

    ft = sub.add_parser("finetune", help="train a task head on a pretrained encoder")
    ft.add_argument("--ckpt", required=True)
    ft.add_argument("--data", required=True)
    ft.add_argument("--task", choices=("cls", "det", "ged"), required=True)
    ft.add_argument("--out", required=True, help="output directory")
    ft.add_argument("--lr0", type=float)
    ft.add_argument("--epochs", type=int, default=20)
    ft.add_argument("--batch-size", type=int, default=16)
    ft.add_argument("--readout", choices=("mean", "max", "meanmax"), default="meanmax")
    ft.add_argument("--seed", type=int, default=0)
    ft.add_argument("--runs", type=int, default=5, help="number of consecutive seeds")
    ft.add_argument("--freeze-encoder", action="store_true")
    ft.set_defaults(fn=_cmd_finetune)

    ev = sub.add_parser("eval", help="evaluate a finetuned checkpoint")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--task", choices=("cls", "det", "ged"), default="cls")
    ev.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    ev.set_defaults(fn=_cmd_eval)

    vk = sub.add_parser("verify-kcl", help="construct KCL witnesses for circuits")
    vk.add_argument("--ckpt", required=True)
    vk.add_argument("netlist", nargs="+")
    vk.set_defaults(fn=_cmd_verify)

    gc = sub.add_parser("gradcheck", help="reverse-mode vs finite-difference gradients")
    gc.add_argument("--hidden", type=int, default=8)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.set_defaults(fn=_cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    np.seterr(over="ignore")
    try:
        return args.fn(args)
    except (KclNetError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"kclnet: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
