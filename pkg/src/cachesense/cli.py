"""Command-line front end: generate, solve, sweep, report."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .basis import build_bases
from .field import field_series, generate_deployment, make_sources, source_trajectories
from .harness import (
    METHODS,
    config_from_dict,
    config_hash,
    config_to_dict,
    export_dataset,
    ExperimentConfig,
    load_dataset_instance,
    nmse,
    read_records,
    run_sweep,
    summarize,
    synthesize_instance,
    write_records,
)
from .netsim import CacheNetwork
from .solver import (
    SolverConfig,
    baseline_average,
    baseline_partition,
    field_estimate,
    solve_centralized,
    solve_collaborative,
    solve_noncollaborative,
)

CONFIG_FLAGS = (
    ("sensors", "n_sensors", int),
    ("caches", "n_caches", int),
    ("sources", "n_sources", int),
    ("window", "window", int),
    ("horizon", "horizon", int),
    ("m", "m", int),
    ("q", "q", int),
    ("strategy", "strategy", str),
    ("eta", "correlation_length", float),
)


def _add_config_flags(parser):
    parser.add_argument("--config", help="JSON file with experiment settings")
    for flag, _, kind in CONFIG_FLAGS:
        parser.add_argument(f"--{flag}", type=kind, default=None)


def _build_config(args):
    if getattr(args, "config", None):
        data = json.loads(Path(args.config).read_text())
        config = config_from_dict(data)
    else:
        config = ExperimentConfig()
    overrides = {
        name: getattr(args, flag)
        for flag, name, _ in CONFIG_FLAGS
        if getattr(args, flag, None) is not None
    }
    return dataclasses.replace(config, **overrides) if overrides else config


def _solver_config(base, args):
    fields = {}
    if args.max_iters is not None:
        fields["max_iters"] = args.max_iters
    if args.eps_pri is not None:
        fields["eps_pri"] = args.eps_pri
    if args.eps_dual is not None:
        fields["eps_dual"] = args.eps_dual
    if args.rho0 is not None:
        fields["rho0"] = args.rho0
    if args.fixed_rho is not None:
        fields["rho0"] = args.fixed_rho
        fields["adapt_rho"] = False
    return dataclasses.replace(base, **fields) if fields else base


def _write_trace(trace, path):
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["iteration", "r_sq", "s_sq", "rho", "nmse"])
        for row in trace:
            writer.writerow(
                [
                    row["iteration"],
                    repr(row["r_sq"]),
                    repr(row["s_sq"]),
                    repr(row["rho"]),
                    json.dumps(row.get("nmse")),
                ]
            )


def _dump_iterates(iterates, path):
    """Per-iteration solver state as stacked arrays, edges in sorted order."""
    edges = sorted(iterates[0]["mu"])
    payload = {
        "z": np.stack([np.stack(snap["z"]) for snap in iterates]),
        "zt": np.stack([np.stack(snap["zt"]) for snap in iterates]),
        "lam": np.stack([np.stack(snap["lam"]) for snap in iterates]),
        "xi": np.stack([np.stack(snap["xi"]) for snap in iterates]),
        "rho": np.asarray([snap["rho"] for snap in iterates]),
        "edges": np.asarray(edges, dtype=np.int64).reshape(len(edges), 2),
    }
    for name in ("mu", "msg_out", "msg_in"):
        payload[name] = np.stack(
            [np.stack([snap[name][e] for e in edges]) for snap in iterates]
        )
    np.savez(path, **payload)


def _cmd_generate(args):
    config = _build_config(args)
    if args.dataset:
        fractions = None
        if args.split:
            fractions = tuple(args.split)
        manifest = export_dataset(
            config, args.deployments, split_fractions=fractions, out_dir=args.out
        )
        print(json.dumps({"out": str(args.out), "splits": manifest["splits"]}, indent=2))
        return 0
    seed = args.seed
    deployment = generate_deployment(config.n_sensors, seed)
    sources = make_sources(
        deployment.region_side,
        config.n_sources,
        seed,
        alpha=config.alpha,
        n_states=config.n_states,
        p_self=config.p_self,
        lowpass_fraction=config.lowpass_fraction,
        correlation_length=config.correlation_length,
    )
    series = field_series(
        deployment, sources, source_trajectories(sources, config.horizon, seed).beta
    )
    np.savez(
        args.out,
        positions=deployment.positions,
        series=series,
        grid_side=deployment.grid_side,
        seed=seed,
    )
    print(
        json.dumps(
            {
                "out": str(args.out),
                "n_sensors": config.n_sensors,
                "horizon": config.horizon,
                "seed": seed,
            },
            indent=2,
        )
    )
    return 0


def _cmd_solve(args):
    if args.dump_iterates and args.method != "collab":
        raise SystemExit("--dump-iterates is only available for method collab")
    config = _build_config(args)
    solver = _solver_config(config.solver, args)
    if args.dataset:
        instance = load_dataset_instance(args.dataset, args.split, args.index)
        window = instance.truth.shape[1]
        basis = build_bases(instance.layout.n_sensors, window)
    else:
        instance = synthesize_instance(config, args.seed, start=args.start)
        basis = build_bases(config.n_sensors, config.window)
    layout, meas, anchors = instance.layout, instance.measurements, instance.anchors
    truth = instance.truth
    run_kwargs = {"stop_early": not args.no_stop}
    comm = None
    trace = None
    if args.method == "collab":
        network = CacheNetwork(layout, full_payload=basis.dimension)
        result = solve_collaborative(
            layout,
            meas,
            anchors,
            basis,
            solver,
            network=network,
            truth=truth,
            record_iterates=args.dump_iterates is not None,
            **run_kwargs,
        )
        estimates = [[field_estimate(basis, z)] for z in result.z]
        iterations, converged = result.iterations, result.converged
        comm, trace = result.comm, result.trace
        tail = {"r_sq": result.r_sq, "s_sq": result.s_sq, "rho_final": result.rho_final}
        if args.dump_iterates:
            _dump_iterates(result.iterates, args.dump_iterates)
    elif args.method == "centralized":
        result = solve_centralized(meas, basis, solver, truth=truth, **run_kwargs)
        estimates = [[field_estimate(basis, result.z[0])]]
        iterations, converged = result.iterations, result.converged
        trace = result.trace
        tail = {"r_sq": result.r_sq, "s_sq": result.s_sq, "rho_final": result.rho_final}
    elif args.method in ("noncollab", "avg", "partition"):
        results = solve_noncollaborative(meas, basis, solver, **run_kwargs)
        per_cache = [field_estimate(basis, r.z[0]) for r in results]
        if args.method == "noncollab":
            estimates = [[est] for est in per_cache]
        elif args.method == "avg":
            estimates = [[baseline_average(per_cache)]]
        else:
            estimates = [[baseline_partition(per_cache, layout)]]
        iterations = sum(r.iterations for r in results)
        converged = all(r.converged for r in results)
        tail = {}
    else:
        raise ValueError(f"unknown method {args.method!r}")
    if args.trace and trace is not None:
        _write_trace(trace, args.trace)
    payload = {
        "method": args.method,
        "nmse": nmse(estimates, [truth]),
        "iterations": iterations,
        "converged": converged,
        "comm": comm,
        **tail,
    }
    print(json.dumps(payload, indent=2))
    return 0


def _cmd_sweep(args):
    if args.print_config:
        config = _build_config(args)
        print(json.dumps(config_to_dict(config), indent=2))
        return 0
    if not args.config:
        raise SystemExit("sweep needs --config (or --print-config)")
    config = _build_config(args)
    out_dir = Path(args.out or config.output_dir)
    records = run_sweep(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_records(records, out_dir / "sweep.csv")
    summary = {
        "config": config_to_dict(config),
        "config_hash": config_hash(config),
        "curves": summarize(records),
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(
        json.dumps(
            {
                "records": len(records),
                "csv": str(out_dir / "sweep.csv"),
                "summary": str(out_dir / "summary.json"),
            },
            indent=2,
        )
    )
    return 0


def _cmd_report(args):
    records = read_records(args.records)
    payload = {"curves": summarize(records), "n_records": len(records)}
    if records:
        payload["config_hash"] = records[0].config_hash
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(json.dumps({"out": args.out, "n_records": len(records)}))
    else:
        print(text)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cachesense",
        description="Collaborative sparse recovery of sensor fields from cached "
        "compressive measurements",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a field series or a dataset")
    _add_config_flags(gen)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--dataset", action="store_true", help="export a windowed dataset")
    gen.add_argument("--deployments", type=int, default=40)
    gen.add_argument(
        "--split",
        type=float,
        nargs="*",
        default=None,
        help="split fractions (omit for a single split)",
    )
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_generate)

    solve = sub.add_parser("solve", help="recover one window with one method")
    _add_config_flags(solve)
    solve.add_argument("--method", choices=METHODS, default="collab")
    solve.add_argument("--seed", type=int, default=0)
    solve.add_argument("--start", type=int, default=0, help="window start instant")
    solve.add_argument("--dataset", help="read the instance from an exported dataset")
    solve.add_argument("--split", default="all")
    solve.add_argument("--index", type=int, default=0)
    solve.add_argument("--max-iters", type=int, default=None)
    solve.add_argument("--eps-pri", type=float, default=None)
    solve.add_argument("--eps-dual", type=float, default=None)
    solve.add_argument("--rho0", type=float, default=None)
    solve.add_argument(
        "--fixed-rho", type=float, default=None, help="set rho and disable adaptation"
    )
    solve.add_argument(
        "--no-stop",
        action="store_true",
        help="ignore the stopping rule and run max_iters iterations",
    )
    solve.add_argument("--trace", help="write per-iteration residuals to a CSV file")
    solve.add_argument("--dump-iterates", help="write per-iteration state to an npz file")
    solve.set_defaults(func=_cmd_solve)

    sweep = sub.add_parser("sweep", help="run a configured sweep")
    _add_config_flags(sweep)
    sweep.add_argument("--out", default=None, help="output directory override")
    sweep.add_argument(
        "--print-config", action="store_true", help="print the effective config and exit"
    )
    sweep.set_defaults(func=_cmd_sweep)

    report = sub.add_parser("report", help="summarize a records CSV")
    report.add_argument("--records", required=True)
    report.add_argument("--out", default=None)
    report.set_defaults(func=_cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
