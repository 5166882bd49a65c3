"""Loading cachesense dataset exports into solver-ready tensors.

A dataset directory holds manifest.json plus one npz per split. Every
window becomes one training instance: per-cache measurements with their
sampled-entry dictionary rows, plus the deployment's anchor rows shared
by all windows of that deployment.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .transform import dictionary_rows, factors_from_manifest, full_dictionary

DATASET_FORMAT = "cachesense-dataset-v1"


def slot_major_flat(indices, n_sensors, window):
    """Flat window indices for per-slot sensor picks.

    indices is (window, count) for per-slot schedules or (count,) for a
    set repeated across every slot; either way the result is slot-major.
    """
    indices = np.asarray(indices, dtype=int)
    slots = np.arange(window)[:, None] * n_sensors
    if indices.ndim == 1:
        return (indices[None, :] + slots).reshape(-1)
    return (indices + slots).reshape(-1)


@dataclass(frozen=True)
class SplitArrays:
    """Raw per-split arrays as exported (numpy, windows first)."""

    truth: np.ndarray  # (B, N, W)
    y: np.ndarray  # (B, C, W*M) slot-major measurement stacks
    phi: np.ndarray  # (B, C, W, M) sampled sensor ids
    deployment: np.ndarray  # (B,)
    start: np.ndarray  # (B,)

    def __len__(self):
        return self.truth.shape[0]


@dataclass(frozen=True)
class Dataset:
    manifest: dict
    splits: dict
    anchors: np.ndarray  # (n_deployments, n_pairs, Q)
    pairs: np.ndarray  # (n_pairs, 2) undirected cache pairs

    @property
    def n_caches(self):
        return int(self.manifest["n_caches"])

    @property
    def n_sensors(self):
        return int(self.manifest["n_sensors"])

    @property
    def window(self):
        return int(self.manifest["window"])

    @property
    def dimension(self):
        return self.n_sensors * self.window

    def directed_edges(self):
        """Sorted directed edges (c, cp), two per undirected pair."""
        edges = set()
        for c, cp in self.pairs:
            edges.add((int(c), int(cp)))
            edges.add((int(cp), int(c)))
        return sorted(edges)

    def pair_index(self, c, cp):
        for i, (a, b) in enumerate(self.pairs):
            if {int(a), int(b)} == {c, cp}:
                return i
        raise KeyError(f"no anchor pair covers caches {(c, cp)}")


def load_dataset(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format") != DATASET_FORMAT:
        raise ValueError(f"unsupported dataset format {manifest.get('format')!r}")
    splits = {}
    anchors = pairs = None
    for name, info in manifest["splits"].items():
        with np.load(directory / info["file"]) as archive:
            splits[name] = SplitArrays(
                truth=archive["truth"],
                y=archive["y"],
                phi=archive["phi"],
                deployment=archive["deployment"],
                start=archive["start"],
            )
            anchors = archive["anchors"]
            pairs = archive["pairs"]
    return Dataset(manifest=manifest, splits=splits, anchors=anchors, pairs=pairs)


@dataclass
class InstanceBatch:
    """Everything a forward pass needs, stacked over instances.

    b and gamma carry the per-instance sampled-row operators mapping
    coefficients straight to measurement and anchor values, so the
    network consumes geometry as data rather than baked-in weights.
    """

    y: torch.Tensor  # (B, C, WM)
    b: torch.Tensor  # (B, C, WM, NW)
    gamma: torch.Tensor  # (B, E, QW, NW) in directed-edge order
    truth: torch.Tensor  # (B, NW) slot-major vectorized fields
    indices: np.ndarray = field(default=None)  # split rows behind this batch

    def __len__(self):
        return self.y.shape[0]

    def narrow(self, rows):
        rows = np.asarray(rows, dtype=int)
        idx = torch.as_tensor(rows, dtype=torch.long)
        return InstanceBatch(
            y=self.y[idx],
            b=self.b[idx],
            gamma=self.gamma[idx],
            truth=self.truth[idx],
            indices=None if self.indices is None else self.indices[rows],
        )


class GeometryBuilder:
    """Turns split rows into InstanceBatch tensors for one dataset."""

    def __init__(self, dataset, dtype=torch.float64):
        self.dataset = dataset
        self.dtype = dtype
        self.spatial, self.temporal = factors_from_manifest(dataset.manifest)
        self.psi = torch.as_tensor(
            full_dictionary(self.spatial, self.temporal), dtype=dtype
        )
        self.edges = dataset.directed_edges()
        n, w = dataset.n_sensors, dataset.window
        self._edge_rows = {}
        for dep in range(dataset.anchors.shape[0]):
            per_edge = []
            for c, cp in self.edges:
                pair = dataset.anchors[dep, dataset.pair_index(c, cp)]
                flat = slot_major_flat(pair, n, w)
                per_edge.append(dictionary_rows(self.spatial, self.temporal, flat))
            self._edge_rows[dep] = np.stack(per_edge)

    def anchor_selection(self, deployment, edge):
        """x-space 0/1 selection rows for one directed edge (QW, NW)."""
        c, cp = self.edges[edge]
        pair = self.dataset.anchors[deployment, self.dataset.pair_index(c, cp)]
        flat = slot_major_flat(pair, self.dataset.n_sensors, self.dataset.window)
        out = np.zeros((flat.size, self.dataset.dimension))
        out[np.arange(flat.size), flat] = 1.0
        return out

    def batch(self, split, rows=None):
        arrays = self.dataset.splits[split]
        rows = np.arange(len(arrays)) if rows is None else np.asarray(rows, dtype=int)
        n, w = self.dataset.n_sensors, self.dataset.window
        b_rows, gamma_rows, truth_rows = [], [], []
        for r in rows:
            per_cache = [
                dictionary_rows(
                    self.spatial, self.temporal, slot_major_flat(arrays.phi[r, c], n, w)
                )
                for c in range(self.dataset.n_caches)
            ]
            b_rows.append(np.stack(per_cache))
            gamma_rows.append(self._edge_rows[int(arrays.deployment[r])])
            truth_rows.append(arrays.truth[r].reshape(-1, order="F"))
        return InstanceBatch(
            y=torch.as_tensor(arrays.y[rows], dtype=self.dtype),
            b=torch.as_tensor(np.stack(b_rows), dtype=self.dtype),
            gamma=torch.as_tensor(np.stack(gamma_rows), dtype=self.dtype),
            truth=torch.as_tensor(np.stack(truth_rows), dtype=self.dtype),
            indices=rows,
        )
