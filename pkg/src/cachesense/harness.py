"""Experiment orchestration: the error metric, seeded sweeps, persistence,
and dataset export for downstream learned solvers.

A sweep walks the cartesian product of the configured axes; every (seed,
point, method) cell yields exactly one record. Baseline methods do not
depend on the anchor axes, so their results are memoized per (seed, M, C)
across sweep points. All randomness flows from the per-deployment master
seed; the generation helpers namespace their own substreams, so one integer
fans out to every stochastic object without collisions.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import build_bases
from .caching import (
    AnchorPlan,
    CacheLayout,
    MeasurementSet,
    assign_coverage,
    measurements_from_schedule,
    sample_schedule,
    select_anchors,
)
from .field import (
    DataMatrix,
    field_series,
    generate_deployment,
    make_sources,
    source_trajectories,
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

METHODS = ("centralized", "noncollab", "avg", "partition", "collab")
SWEEP_AXES = ("m", "m_over_n", "m_total", "n_caches", "proportion", "q", "strategy")


@dataclass
class ExperimentConfig:
    n_sensors: int = 100
    n_caches: int = 4
    n_sources: int = 10
    correlation_length: float = 800.0
    alpha: float = 0.9
    n_states: int = 10
    p_self: float = 0.8
    lowpass_fraction: float = 0.25
    window: int = 4
    horizon: int = 20  # T; reconstruction windows end at t = W..T
    m: int = 10  # measurements per cache per instant
    q: int = 25  # anchors per neighbor pair
    strategy: str = "pairwise-union"
    m_total: int = None  # when set, m is m_total / n_caches
    proportion: float = None  # when set, q is proportion * anchor pool size
    methods: tuple = METHODS
    seeds: tuple = tuple(range(10))
    sweep: dict = field(default_factory=dict)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output_dir: str = "results"


def config_to_dict(config):
    return dataclasses.asdict(config)


def config_from_dict(data):
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(data)
    if "solver" in kwargs and not isinstance(kwargs["solver"], SolverConfig):
        solver_names = {f.name for f in dataclasses.fields(SolverConfig)}
        bad = set(kwargs["solver"]) - solver_names
        if bad:
            raise ValueError(f"unknown solver config keys: {sorted(bad)}")
        kwargs["solver"] = SolverConfig(**kwargs["solver"])
    for key in ("seeds", "methods"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return ExperimentConfig(**kwargs)


def config_hash(config):
    """Digest of every semantic field; the output location does not count."""
    payload = config_to_dict(config)
    payload.pop("output_dir", None)
    text = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ------------------------------------------------------------------ metric

def nmse(estimates, truth):
    """Cache- and window-averaged squared error over signal energy.

    estimates[c][i] and truth[i] are (N, W) windows; frames with zero signal
    energy are excluded from the average with a warning.
    """
    truth = [np.asarray(t, dtype=float) for t in truth]
    energy = [float(np.sum(t * t)) for t in truth]
    keep = []
    for i, e in enumerate(energy):
        if e > 0.0:
            keep.append(i)
        else:
            warnings.warn(f"zero-energy truth frame {i} excluded from the error average")
    if not keep:
        raise ValueError("every truth frame has zero energy")
    total = 0.0
    count = 0
    for per_cache in estimates:
        for i in keep:
            diff = np.asarray(per_cache[i], dtype=float) - truth[i]
            total += float(np.sum(diff * diff)) / energy[i]
            count += 1
    return total / count


# ------------------------------------------------------------------ sweeps

def _anchor_pool_size(config, n_caches, strategy):
    if strategy in ("global", "pairwise-global"):
        return config.n_sensors
    layout = assign_coverage(generate_deployment(config.n_sensors, 0), n_caches)
    sizes = {
        int(np.union1d(layout.coverage[c], layout.coverage[cp]).size)
        for c, cp in layout.pairs()
    }
    if len(sizes) != 1:
        raise ValueError("anchor proportion is ambiguous: pair pools differ in size")
    return sizes.pop()


def resolve_point(config, point):
    """Merge one sweep cell with the config scalars into concrete knobs."""
    unknown = set(point) - set(SWEEP_AXES)
    if unknown:
        raise ValueError(f"unknown sweep axes: {sorted(unknown)}")
    n_caches = int(point.get("n_caches", config.n_caches))
    strategy = point.get("strategy", config.strategy)
    m_total = point.get("m_total", config.m_total)
    if m_total is not None:
        if m_total % n_caches:
            raise ValueError(f"m_total={m_total} is not divisible by n_caches={n_caches}")
        m = m_total // n_caches
    elif "m_over_n" in point:
        m = int(round(point["m_over_n"] * config.n_sensors))
    else:
        m = int(point.get("m", config.m))
    proportion = point.get("proportion", config.proportion)
    if proportion is not None:
        q = int(round(proportion * _anchor_pool_size(config, n_caches, strategy)))
    else:
        q = int(point.get("q", config.q))
    return {"m": m, "q": q, "strategy": strategy, "n_caches": n_caches}


def run_instance(config, seed, point, methods=None):
    """One deployment at one sweep point; returns per-method metrics."""
    methods = tuple(methods if methods is not None else config.methods)
    bad = set(methods) - set(METHODS)
    if bad:
        raise ValueError(f"unknown methods: {sorted(bad)}")
    resolved = resolve_point(config, point)
    m, q = resolved["m"], resolved["q"]
    strategy, n_caches = resolved["strategy"], resolved["n_caches"]
    w, horizon = config.window, config.horizon
    if horizon < w:
        raise ValueError("horizon must cover at least one window")

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
        deployment, sources, source_trajectories(sources, horizon, seed).beta
    )
    layout = assign_coverage(deployment, n_caches)
    schedule = sample_schedule(layout, m, horizon, seed)
    anchors = select_anchors(layout, strategy, q, seed) if "collab" in methods else None
    basis = build_bases(config.n_sensors, w)

    truth_windows = [series[:, s : s + w] for s in range(horizon - w + 1)]
    need_separate = bool({"noncollab", "avg", "partition"} & set(methods))
    windows = {name: [] for name in methods}
    iters = dict.fromkeys(methods, 0)
    comm_scalars = dict.fromkeys(methods, 0)
    comm_messages = dict.fromkeys(methods, 0)
    wall = dict.fromkeys(methods, 0.0)
    converged = dict.fromkeys(methods, True)

    for s in range(horizon - w + 1):
        data = DataMatrix(values=series[:, s : s + w].copy())
        meas = measurements_from_schedule(
            layout, data, [sched[s : s + w] for sched in schedule]
        )
        if "centralized" in methods:
            t0 = time.perf_counter()
            res = solve_centralized(meas, basis, config.solver)
            wall["centralized"] += time.perf_counter() - t0
            iters["centralized"] += res.iterations
            converged["centralized"] &= res.converged
            windows["centralized"].append([field_estimate(basis, res.z[0])])
        if need_separate:
            t0 = time.perf_counter()
            results = solve_noncollaborative(meas, basis, config.solver)
            elapsed = time.perf_counter() - t0
            per_cache = [field_estimate(basis, r.z[0]) for r in results]
            total_iters = sum(r.iterations for r in results)
            all_ok = all(r.converged for r in results)
            for name in ("noncollab", "avg", "partition"):
                if name in methods:
                    wall[name] += elapsed
                    iters[name] += total_iters
                    converged[name] &= all_ok
            if "noncollab" in methods:
                windows["noncollab"].append(per_cache)
            if "avg" in methods:
                windows["avg"].append([baseline_average(per_cache)])
            if "partition" in methods:
                windows["partition"].append([baseline_partition(per_cache, layout)])
        if "collab" in methods:
            network = CacheNetwork(layout, full_payload=basis.dimension)
            t0 = time.perf_counter()
            res = solve_collaborative(
                layout, meas, anchors, basis, config.solver, network=network
            )
            wall["collab"] += time.perf_counter() - t0
            iters["collab"] += res.iterations
            converged["collab"] &= res.converged
            comm_scalars["collab"] += res.comm["scalars_total"]
            comm_messages["collab"] += res.comm["messages"]
            windows["collab"].append([field_estimate(basis, z) for z in res.z])

    out = {}
    for name in methods:
        per_cache = [list(column) for column in zip(*windows[name])]
        out[name] = {
            "nmse": nmse(per_cache, truth_windows),
            "iterations": iters[name],
            "comm_scalars": comm_scalars[name],
            "comm_messages": comm_messages[name],
            "wall_time": wall[name],
            "converged": converged[name],
        }
    return out


@dataclass
class ResultRecord:
    config_hash: str
    seed: int
    method: str
    point: dict
    nmse: float
    iterations: int
    comm_scalars: int
    comm_messages: int
    wall_time: float
    converged: bool = True


def run_sweep(config):
    """One record per (seed, sweep point, method), deterministically sorted."""
    axes = sorted(config.sweep)
    bad = set(axes) - set(SWEEP_AXES)
    if bad:
        raise ValueError(f"unknown sweep axes: {sorted(bad)}")
    if not config.seeds:
        raise ValueError("need at least one seed")
    cells = [
        dict(zip(axes, combo))
        for combo in itertools.product(*(config.sweep[ax] for ax in axes))
    ] or [{}]
    digest = config_hash(config)
    baseline_methods = tuple(name for name in config.methods if name != "collab")
    memo = {}
    records = []
    for cell in cells:
        resolved = resolve_point(config, cell)
        for seed in config.seeds:
            out = {}
            if baseline_methods:
                key = (seed, resolved["m"], resolved["n_caches"])
                if key not in memo:
                    memo[key] = run_instance(config, seed, cell, methods=baseline_methods)
                out.update(memo[key])
            if "collab" in config.methods:
                out.update(run_instance(config, seed, cell, methods=("collab",)))
            for method in config.methods:
                metrics = out[method]
                records.append(
                    ResultRecord(
                        config_hash=digest,
                        seed=seed,
                        method=method,
                        point=dict(cell),
                        nmse=metrics["nmse"],
                        iterations=metrics["iterations"],
                        comm_scalars=metrics["comm_scalars"],
                        comm_messages=metrics["comm_messages"],
                        wall_time=metrics["wall_time"],
                        converged=metrics["converged"],
                    )
                )
    records.sort(key=lambda r: (json.dumps(r.point, sort_keys=True), r.seed, r.method))
    return records


# -------------------------------------------------------------- persistence

_CSV_FIELDS = (
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


def write_records(records, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(_CSV_FIELDS)
        for r in records:
            writer.writerow(
                [
                    r.config_hash,
                    r.seed,
                    r.method,
                    json.dumps(r.point, sort_keys=True),
                    repr(r.nmse),
                    r.iterations,
                    r.comm_scalars,
                    r.comm_messages,
                    repr(r.wall_time),
                    r.converged,
                ]
            )


def read_records(path):
    with Path(path).open(newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        if tuple(header) != _CSV_FIELDS:
            raise ValueError(f"unexpected record header in {path}: {header}")
        out = []
        for row in reader:
            out.append(
                ResultRecord(
                    config_hash=row[0],
                    seed=int(row[1]),
                    method=row[2],
                    point=json.loads(row[3]),
                    nmse=float(row[4]),
                    iterations=int(row[5]),
                    comm_scalars=int(row[6]),
                    comm_messages=int(row[7]),
                    wall_time=float(row[8]),
                    converged=row[9] == "True",
                )
            )
    return out


def summarize(records):
    """Seed-averaged curves per method, points in deterministic order."""
    grouped = {}
    for r in records:
        key = (r.method, json.dumps(r.point, sort_keys=True))
        grouped.setdefault(key, []).append(r)
    out = {}
    for (method, point_json) in sorted(grouped):
        rows = grouped[(method, point_json)]
        out.setdefault(method, []).append(
            {
                "point": json.loads(point_json),
                "nmse_mean": float(np.mean([r.nmse for r in rows])),
                "nmse_std": float(np.std([r.nmse for r in rows])),
                "iterations_mean": float(np.mean([r.iterations for r in rows])),
                "comm_scalars_mean": float(np.mean([r.comm_scalars for r in rows])),
                "n_seeds": len(rows),
                "all_converged": all(r.converged for r in rows),
            }
        )
    return out


# ------------------------------------------------------------------ export

def segment_lengths(total, fractions):
    """Contiguous split lengths covering total instants, largest first order kept."""
    if fractions is None:
        return [int(total)]
    fractions = np.asarray(fractions, dtype=float)
    if fractions.ndim != 1 or fractions.size < 1 or np.any(fractions <= 0):
        raise ValueError("fractions must be positive")
    fractions = fractions / fractions.sum()
    edges = np.round(np.cumsum(fractions) * total).astype(int)
    edges[-1] = total
    lengths = np.diff(np.concatenate([[0], edges]))
    if np.any(lengths <= 0):
        raise ValueError(f"split {tuple(fractions)} produces an empty segment for T={total}")
    return [int(x) for x in lengths]


def _split_names(n_segments):
    if n_segments == 1:
        return ["all"]
    if n_segments == 2:
        return ["train", "test"]
    if n_segments == 3:
        return ["train", "val", "test"]
    return [f"split{i}" for i in range(n_segments)]


def export_dataset(config, n_deployments, split_fractions=(0.64, 0.16, 0.2), out_dir="dataset"):
    """Write per-window recovery instances for training learned solvers.

    Each deployment's time axis is cut into contiguous split segments and
    windowed with stride 1 inside each segment, so no window straddles a
    split boundary. Files: one npz per split plus manifest.json.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    w = config.window
    lengths = segment_lengths(config.horizon, split_fractions)
    if min(lengths) < w:
        raise ValueError("every split segment must cover at least one window")
    names = _split_names(len(lengths))
    resolved = resolve_point(config, {})
    m, q = resolved["m"], resolved["q"]
    strategy, n_caches = resolved["strategy"], resolved["n_caches"]
    base_seed = config.seeds[0]

    buckets = {name: {"truth": [], "y": [], "phi": [], "deployment": [], "start": []} for name in names}
    anchor_rows = []
    layout = None
    for dep in range(n_deployments):
        seed = base_seed + dep
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
        layout = assign_coverage(deployment, n_caches)
        schedule = sample_schedule(layout, m, config.horizon, seed)
        anchors = select_anchors(layout, strategy, q, seed)
        anchor_rows.append(np.stack([anchors.pair(c, cp) for c, cp in layout.pairs()]))
        offset = 0
        for name, seg in zip(names, lengths):
            for s in range(offset, offset + seg - w + 1):
                data = DataMatrix(values=series[:, s : s + w].copy())
                meas = measurements_from_schedule(
                    layout, data, [sched[s : s + w] for sched in schedule]
                )
                bucket = buckets[name]
                bucket["truth"].append(data.values)
                bucket["y"].append(np.stack(meas.values))
                bucket["phi"].append(np.stack(meas.sensor_indices))
                bucket["deployment"].append(dep)
                bucket["start"].append(s)
            offset += seg

    pairs = np.asarray(layout.pairs(), dtype=np.int64).reshape(-1, 2)
    anchors_array = np.asarray(anchor_rows, dtype=np.int64)
    splits = {}
    for name, seg in zip(names, lengths):
        bucket = buckets[name]
        np.savez(
            out / f"{name}.npz",
            truth=np.asarray(bucket["truth"], dtype=np.float64),
            y=np.asarray(bucket["y"], dtype=np.float64),
            phi=np.asarray(bucket["phi"], dtype=np.int64),
            deployment=np.asarray(bucket["deployment"], dtype=np.int64),
            start=np.asarray(bucket["start"], dtype=np.int64),
            anchors=anchors_array,
            pairs=pairs,
        )
        splits[name] = {
            "file": f"{name}.npz",
            "windows": len(bucket["truth"]),
            "instants": seg,
        }

    manifest = {
        "format": "cachesense-dataset-v1",
        "n_sensors": config.n_sensors,
        "n_caches": n_caches,
        "window": w,
        "horizon": config.horizon,
        "m": m,
        "q": q,
        "strategy": strategy,
        # enough to rebuild the sparsifying dictionary without this package
        "transform": {
            "family": "dct2-kron",
            "dct": (
                "orthonormal DCT-II analysis; entry[k,i] = c_k*cos(pi*(2i+1)*k/(2n))"
                " with c_0=sqrt(1/n), c_k=sqrt(2/n) otherwise"
            ),
            "spatial_synthesis": (
                "kron(dct(side).T, dct(side).T), side=sqrt(n_sensors);"
                " sensor id = grid_row*side + grid_col"
            ),
            "temporal_synthesis": "dct(window).T",
            "vectorization": (
                "flat index = slot*n_sensors + sensor;"
                " field = kron(temporal_synthesis, spatial_synthesis) @ coefficients"
            ),
        },
        "n_deployments": n_deployments,
        "base_seed": base_seed,
        "coverage": [list(map(int, cov)) for cov in layout.coverage],
        "neighbors": [list(map(int, nb)) for nb in layout.neighbors],
        "pairs": pairs.tolist(),
        "splits": splits,
        "solver": dataclasses.asdict(config.solver),
        "config_hash": config_hash(config),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


@dataclass(frozen=True)
class DatasetInstance:
    truth: np.ndarray  # (N, W) ground-truth window
    measurements: MeasurementSet
    layout: CacheLayout
    anchors: AnchorPlan
    manifest: dict
    deployment: int
    start: int


def synthesize_instance(config, seed, start=0):
    """Generate one solver-ready window in memory (no files involved)."""
    resolved = resolve_point(config, {})
    w = config.window
    if start < 0 or start + w > config.horizon:
        raise ValueError(
            f"window [{start}, {start + w}) does not fit in horizon {config.horizon}"
        )
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
    layout = assign_coverage(deployment, resolved["n_caches"])
    schedule = sample_schedule(layout, resolved["m"], config.horizon, seed)
    anchors = select_anchors(layout, resolved["strategy"], resolved["q"], seed)
    data = DataMatrix(values=series[:, start : start + w].copy())
    measurements = measurements_from_schedule(
        layout, data, [sched[start : start + w] for sched in schedule]
    )
    return DatasetInstance(
        truth=data.values,
        measurements=measurements,
        layout=layout,
        anchors=anchors,
        manifest=None,
        deployment=seed,
        start=start,
    )


def load_dataset_instance(dataset_dir, split, index):
    """Rebuild one exported window as solver-ready objects."""
    root = Path(dataset_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    if split not in manifest["splits"]:
        raise ValueError(f"unknown split {split!r}; have {sorted(manifest['splits'])}")
    data = np.load(root / manifest["splits"][split]["file"])
    n = manifest["n_sensors"]
    layout = CacheLayout(
        coverage=tuple(np.asarray(cov, dtype=int) for cov in manifest["coverage"]),
        neighbors=tuple(np.asarray(nb, dtype=int) for nb in manifest["neighbors"]),
        grid_side=int(round(np.sqrt(n))),
    )
    measurements = MeasurementSet(
        sensor_indices=tuple(data["phi"][index, c] for c in range(manifest["n_caches"])),
        values=tuple(data["y"][index, c] for c in range(manifest["n_caches"])),
        n_sensors=n,
    )
    dep = int(data["deployment"][index])
    anchor_sets = {
        (int(c), int(cp)): data["anchors"][dep, p]
        for p, (c, cp) in enumerate(data["pairs"])
    }
    anchors = AnchorPlan(strategy=manifest["strategy"], anchor_sets=anchor_sets)
    return DatasetInstance(
        truth=data["truth"][index],
        measurements=measurements,
        layout=layout,
        anchors=anchors,
        manifest=manifest,
        deployment=dep,
        start=int(data["start"][index]),
    )
