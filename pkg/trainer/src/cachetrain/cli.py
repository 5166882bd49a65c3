"""Command line interface: train, evaluate, export-metrics."""

import argparse
import csv
import json
import time
from pathlib import Path

from .data import GeometryBuilder, load_dataset
from .network import load_network, save_network
from .train import TrainingConfig, evaluate, train, write_report

# column order shared with the experiment-harness records format
METRIC_FIELDS = (
    "config_hash",
    "seed",
    "method",
    "point",
    "nmse",
    "iterations",
    "comm_scalars",
    "comm_messages",
    "wall_time",
    "converged",
)


def _add_train(sub):
    p = sub.add_parser("train", help="fit a network on a dataset export")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="model output path (.pt)")
    p.add_argument("--report", help="per-epoch loss report path (.json)")
    p.add_argument("--stages", type=int, default=10)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=500)
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--variant", choices=("li", "ae"), default="li")
    p.add_argument("--init", choices=("solver", "random"), default="solver")
    p.add_argument("--sigma", choices=("soft", "leaky"))
    p.add_argument("--lr", type=float)
    p.add_argument("--late-lr", type=float)
    p.add_argument("--switch-epoch", type=int, default=300)
    p.add_argument(
        "--trainable", choices=("all", "threshold-only"), default="all",
        help="threshold-only freezes everything except the shrink scalars",
    )
    p.add_argument("--seed", type=int, default=0)


def _add_evaluate(sub):
    p = sub.add_parser("evaluate", help="normalized test error of a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--stages", type=int, help="evaluate a stage prefix")


def _add_export(sub):
    p = sub.add_parser(
        "export-metrics", help="write evaluation results in the records format"
    )
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)


def _cmd_train(args):
    config = TrainingConfig(
        stages=args.stages,
        batch_size=args.batch_size,
        epsilon=args.epsilon,
        epochs=args.epochs,
        variant=args.variant,
        init=args.init,
        sigma=args.sigma,
        lr=args.lr,
        late_lr=args.late_lr,
        switch_epoch=args.switch_epoch,
        trainable=args.trainable,
        seed=args.seed,
    )
    net, report = train(args.dataset, config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_network(net, out, extra={"training": report["config"]})
    if args.report:
        write_report(report, args.report)
    last = report["epochs"][-1]
    print(json.dumps({"model": str(out), "final": last}, indent=2))
    return 0


def _cmd_evaluate(args):
    net, _ = load_network(args.model)
    geometry = GeometryBuilder(load_dataset(args.dataset))
    value = evaluate(net, geometry, args.split, n_stages=args.stages)
    print(json.dumps({"split": args.split, "nmse": value}, indent=2))
    return 0


def _cmd_export(args):
    net, extra = load_network(args.model)
    dataset = load_dataset(args.dataset)
    geometry = GeometryBuilder(dataset)
    started = time.perf_counter()
    value = evaluate(net, geometry, args.split)
    elapsed = time.perf_counter() - started
    manifest = dataset.manifest
    stages = net.arch["n_stages"]
    qw = net.arch["qw"]
    n_edges = len(net.edges)
    point = {
        "m": manifest["m"],
        "q": manifest["q"],
        "stages": stages,
        "strategy": manifest["strategy"],
    }
    row = [
        manifest["config_hash"],
        extra.get("training", {}).get("seed", 0),
        "deep-collab",
        json.dumps(point, sort_keys=True),
        repr(value),
        stages,
        stages * n_edges * qw,
        stages * n_edges,
        repr(elapsed),
        True,
    ]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(METRIC_FIELDS)
        writer.writerow(row)
    print(json.dumps({"out": str(out), "nmse": value}, indent=2))
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="cachetrain",
        description="train and evaluate unrolled reconstruction networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_train(sub)
    _add_evaluate(sub)
    _add_export(sub)
    args = parser.parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "evaluate": _cmd_evaluate,
        "export-metrics": _cmd_export,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    raise SystemExit(main())
