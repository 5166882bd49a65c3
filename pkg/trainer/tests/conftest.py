"""Shared fixtures: datasets exported through the producer CLI.

Everything the trainer consumes comes from subprocess calls to the
cachesense command line, never from importing that package, so these
tests double as an interchange-format contract check.
"""

import json
import subprocess

import pytest

from cachetrain.data import GeometryBuilder, load_dataset


def run_cli(*args):
    out = subprocess.run(
        ["cachesense", *args], capture_output=True, text=True, check=True
    )
    return out.stdout


def solve_json(dataset, split, index, *extra):
    stdout = run_cli(
        "solve", "--dataset", str(dataset), "--split", split, "--index",
        str(index), "--method", "collab", *extra,
    )
    return json.loads(stdout)


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory):
    """One-deployment, two-cache dataset with ten training windows."""
    out = tmp_path_factory.mktemp("data") / "tiny"
    run_cli(
        "generate", "--dataset", "--sensors", "16", "--caches", "2",
        "--window", "2", "--horizon", "20", "--m", "5", "--q", "6",
        "--deployments", "1", "--split", "0.55", "0.2", "0.25",
        "--out", str(out),
    )
    return out


@pytest.fixture(scope="session")
def dataset(dataset_dir):
    return load_dataset(dataset_dir)


@pytest.fixture(scope="session")
def geometry(dataset):
    return GeometryBuilder(dataset)


@pytest.fixture(scope="session")
def iterate_dump(dataset_dir, tmp_path_factory):
    """Three fixed-penalty solver iterations on train window 0."""
    path = tmp_path_factory.mktemp("dump") / "iterates.npz"
    solve_json(
        dataset_dir, "train", 0, "--fixed-rho", "10", "--no-stop",
        "--max-iters", "3", "--dump-iterates", str(path),
    )
    return path


@pytest.fixture(scope="session")
def multi_cache_dataset_dir(tmp_path_factory):
    """Four caches, so distinct pairs carry distinct anchor sets."""
    out = tmp_path_factory.mktemp("data") / "quad"
    run_cli(
        "generate", "--dataset", "--sensors", "16", "--caches", "4",
        "--window", "2", "--horizon", "10", "--m", "4", "--q", "4",
        "--deployments", "1", "--split", "0.6", "0.2", "0.2",
        "--out", str(out),
    )
    return out
