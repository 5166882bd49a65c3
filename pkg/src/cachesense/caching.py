"""Cache coverage, compressive sampling schedules, anchor selection.

Caches tile the block grid into equal rectangles (squares when the cache
count is a perfect square) and can only sample sensors inside their own tile.
Anchor sets are per-pair sensor subsets used to align neighboring caches'
reconstructions; the per-window alignment operator repeats one per-instant
selection across all W slots.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import substream

ANCHOR_STRATEGIES = ("global", "pairwise-global", "pairwise-union")


@dataclass(frozen=True)
class CacheLayout:
    coverage: tuple  # per cache, sorted sensor-index arrays
    neighbors: tuple  # per cache, neighbor cache ids
    grid_side: int

    @property
    def n_caches(self):
        return len(self.coverage)

    @property
    def n_sensors(self):
        return self.grid_side * self.grid_side

    def pairs(self):
        """Unordered neighbor pairs (c, c') with c < c'."""
        out = []
        for c in range(self.n_caches):
            for cp in self.neighbors[c]:
                if c < cp:
                    out.append((c, int(cp)))
        return out

    def owner(self, sensor):
        for c, cov in enumerate(self.coverage):
            if sensor in self._coverage_sets()[c]:
                return c
        raise ValueError(f"sensor {sensor} not covered")

    def _coverage_sets(self):
        cached = getattr(self, "_sets", None)
        if cached is None:
            cached = [set(map(int, cov)) for cov in self.coverage]
            object.__setattr__(self, "_sets", cached)
        return cached


def _tile_shape(n_caches, grid_side):
    # most-square p x q subregion grid with p*q == n_caches, both dividing
    # the block grid side
    best = None
    for p in range(1, n_caches + 1):
        if n_caches % p:
            continue
        q = n_caches // p
        if grid_side % p == 0 and grid_side % q == 0:
            if best is None or abs(p - q) < abs(best[0] - best[1]):
                best = (p, q)
    if best is None:
        raise ValueError(
            f"cannot tile a {grid_side}x{grid_side} grid into {n_caches} equal rectangles"
        )
    return best


def assign_coverage(field, n_caches):
    """Partition sensors into per-cache tiles of the block grid.

    Cache ids run row-major over the subregion grid; a sensor belongs to the
    cache whose tile contains its block.
    """
    if n_caches < 1:
        raise ValueError("need at least one cache")
    g = field.grid_side
    p, q = _tile_shape(n_caches, g)
    rows_per, cols_per = g // p, g // q
    sensors = np.arange(g * g)
    block_rows, block_cols = np.divmod(sensors, g)
    cache_of = (block_rows // rows_per) * q + (block_cols // cols_per)
    coverage = tuple(np.sort(sensors[cache_of == c]) for c in range(n_caches))
    neighbors = tuple(
        np.array([i for i in range(n_caches) if i != c], dtype=int)
        for c in range(n_caches)
    )
    return CacheLayout(coverage=coverage, neighbors=neighbors, grid_side=g)


@dataclass(frozen=True)
class MeasurementSet:
    """Per-cache compressive draws over one W-slot window.

    values[c] stacks the sampled readings slot-major: the block for window
    slot t occupies positions t*M .. (t+1)*M - 1.
    """

    sensor_indices: tuple  # per cache, (W, M) sensor ids
    values: tuple  # per cache, (W*M,)
    n_sensors: int

    @property
    def n_caches(self):
        return len(self.sensor_indices)

    @property
    def window(self):
        return self.sensor_indices[0].shape[0]

    def flat_indices(self, cache):
        """Slot-major indices into the vectorized window (slot*N + sensor)."""
        idx = self.sensor_indices[cache]
        slots = np.arange(idx.shape[0])[:, None] * self.n_sensors
        return (idx + slots).reshape(-1)


def sample_schedule(layout, m, length, seed):
    """Independent per-instant draws of m sensors per cache, without
    replacement inside an instant. Returns per-cache (length, m) arrays."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    schedule = []
    for c, cov in enumerate(layout.coverage):
        if m > cov.size:
            raise ValueError(
                f"cache {c} covers {cov.size} sensors, cannot draw {m} per instant"
            )
        rng = substream(seed, "sampling", c)
        rows = np.empty((length, m), dtype=int)
        for t in range(length):
            rows[t] = rng.choice(cov, size=m, replace=False)
        schedule.append(rows)
    return schedule


def measurements_from_schedule(layout, data, schedule):
    """Assemble a MeasurementSet for one window from per-cache (W, M) draws."""
    w = data.window
    indices = []
    values = []
    for c in range(layout.n_caches):
        idx = np.asarray(schedule[c], dtype=int)
        if idx.shape[0] != w:
            raise ValueError("schedule window length mismatch")
        indices.append(idx)
        values.append(
            np.concatenate([data.values[idx[t], t] for t in range(w)])
            if idx.size
            else np.zeros(0)
        )
    return MeasurementSet(
        sensor_indices=tuple(indices),
        values=tuple(values),
        n_sensors=data.n_sensors,
    )


def sample_measurements(layout, data, m, seed):
    """Draw m sensors per cache per window slot and read their values."""
    schedule = sample_schedule(layout, m, data.window, seed)
    return measurements_from_schedule(layout, data, schedule)


@dataclass(frozen=True)
class AnchorPlan:
    """Per-pair anchor sensor sets, symmetric by construction."""

    strategy: str
    anchor_sets: dict = field(repr=False)  # (c, c') with c < c' -> sensor array

    def pair(self, c, cp):
        key = (c, cp) if c < cp else (cp, c)
        return self.anchor_sets[key]

    @property
    def q(self):
        sizes = {arr.size for arr in self.anchor_sets.values()}
        return sizes.pop() if len(sizes) == 1 else None


def select_anchors(layout, strategy, q, seed):
    """Choose anchor sensors for every neighbor pair.

    global: one field-wide draw shared by all pairs. pairwise-global: an
    independent field-wide draw per pair. pairwise-union: per pair, drawn
    from the union of the two coverages.
    """
    if strategy not in ANCHOR_STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}, expected {ANCHOR_STRATEGIES}")
    if q < 0:
        raise ValueError("q must be nonnegative")
    all_sensors = np.arange(layout.n_sensors)
    anchor_sets = {}
    if strategy == "global":
        if q > layout.n_sensors:
            raise ValueError(f"q={q} exceeds the field size {layout.n_sensors}")
        shared = substream(seed, "anchors").choice(all_sensors, size=q, replace=False)
        for key in layout.pairs():
            anchor_sets[key] = shared
    else:
        for c, cp in layout.pairs():
            pool = (
                all_sensors
                if strategy == "pairwise-global"
                else np.union1d(layout.coverage[c], layout.coverage[cp])
            )
            if q > pool.size:
                raise ValueError(
                    f"q={q} exceeds the candidate pool ({pool.size}) for pair ({c},{cp})"
                )
            rng = substream(seed, "anchors", c, cp)
            anchor_sets[(c, cp)] = rng.choice(pool, size=q, replace=False)
    return AnchorPlan(strategy=strategy, anchor_sets=anchor_sets)


def anchor_flat_indices(anchors, n_sensors, window):
    """Flat window indices of an anchor set repeated across all W slots."""
    anchors = np.asarray(anchors, dtype=int)
    slots = np.arange(window)[:, None] * n_sensors
    return (anchors[None, :] + slots).reshape(-1)


def selection_matrix(flat_indices, dimension):
    """Materialized 0/1 row-selection operator (small cases and tests only)."""
    flat_indices = np.asarray(flat_indices, dtype=int)
    out = np.zeros((flat_indices.size, dimension))
    out[np.arange(flat_indices.size), flat_indices] = 1.0
    return out
