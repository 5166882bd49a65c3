"""Synthetic sensor-field model.

A square region of side 100*sqrt(N) is divided into N blocks of side 100, one
sensor dropped uniformly inside each block (sensor n lives in block
(n // sqrt(N), n % sqrt(N)), row-major). Field values are superpositions of
Gaussian bumps around point sources whose amplitudes follow a smoothed
Gauss-Markov process plus a Markov jump chain.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct, idct

from .rng import substream

BLOCK_SIDE = 100.0


@dataclass(frozen=True)
class SensorField:
    """Sensor coordinates over the block grid."""

    positions: np.ndarray  # (N, 2) x/y coordinates
    grid_side: int

    @property
    def n_sensors(self):
        return self.positions.shape[0]

    @property
    def region_side(self):
        return self.grid_side * BLOCK_SIDE

    def block_of(self, sensor):
        """Row-major block coordinate (row, col) of a sensor index."""
        return divmod(int(sensor), self.grid_side)


@dataclass(frozen=True)
class SourceModel:
    """Point sources and the parameters of their amplitude processes."""

    positions: np.ndarray  # (S, 2)
    means: np.ndarray  # (S,) long-run mean of each smooth component
    alphas: np.ndarray  # (S,) Gauss-Markov memory coefficients
    state_values: np.ndarray  # (S, n_states) jump-chain state sets
    p_self: float
    lowpass_fraction: float
    correlation_length: float

    @property
    def n_sources(self):
        return self.positions.shape[0]

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class SourceTrajectories:
    """Per-source amplitude series split into its two components."""

    smooth: np.ndarray  # (S, T)
    jump: np.ndarray  # (S, T)

    @property
    def beta(self):
        return self.smooth + self.jump


@dataclass(frozen=True)
class DataMatrix:
    """N x W window; column j holds the snapshot at the j-th instant."""

    values: np.ndarray

    @property
    def n_sensors(self):
        return self.values.shape[0]

    @property
    def window(self):
        return self.values.shape[1]

    def vec(self):
        """Column-major flattening: time block j occupies entries j*N..j*N+N-1."""
        return self.values.reshape(-1, order="F")


def generate_deployment(n_sensors, seed):
    """Drop one sensor uniformly inside each block of the grid."""
    side = int(round(np.sqrt(n_sensors)))
    if n_sensors < 1 or side * side != n_sensors:
        raise ValueError(f"n_sensors must be a perfect square, got {n_sensors}")
    rng = substream(seed, "deployment")
    offsets = rng.uniform(0.0, BLOCK_SIDE, size=(n_sensors, 2))
    rows, cols = np.divmod(np.arange(n_sensors), side)
    corners = np.column_stack([cols * BLOCK_SIDE, rows * BLOCK_SIDE])
    return SensorField(positions=corners + offsets, grid_side=side)


def make_sources(
    region_side,
    n_sources,
    seed,
    *,
    alpha=0.9,
    n_states=10,
    p_self=0.8,
    lowpass_fraction=0.25,
    correlation_length=800.0,
):
    """Draw source locations uniformly over the region plus process parameters.

    Per-source means are standard normal; jump-state sets hold n_states
    standard-normal values each.
    """
    if n_sources < 1:
        raise ValueError("need at least one source")
    rng = substream(seed, "sources")
    positions = rng.uniform(0.0, region_side, size=(n_sources, 2))
    means = rng.standard_normal(n_sources)
    states = rng.standard_normal((n_sources, n_states))
    return SourceModel(
        positions=positions,
        means=means,
        alphas=np.full(n_sources, float(alpha)),
        state_values=states,
        p_self=float(p_self),
        lowpass_fraction=float(lowpass_fraction),
        correlation_length=float(correlation_length),
    )


def gauss_markov_sequence(alpha, mean, length, seed):
    """First-order Gauss-Markov series started at its mean.

    lam[t] = alpha*(lam[t-1] - mean) + sqrt(1-alpha^2)*w[t] + mean with
    w ~ N(0,1), lam[0] = mean.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if length < 1:
        raise ValueError("length must be positive")
    rng = substream(seed, "gauss-markov")
    noise = rng.standard_normal(length - 1) * np.sqrt(1.0 - alpha * alpha)
    out = np.empty(length)
    out[0] = mean
    for t in range(1, length):
        out[t] = alpha * (out[t - 1] - mean) + noise[t - 1] + mean
    return out


def lowpass_smooth(series, fraction):
    """Keep the ceil(fraction*T) lowest cosine-transform bins, zero the rest."""
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        raise ValueError("series is empty")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    coef = dct(series, norm="ortho")
    keep = int(np.ceil(fraction * series.size))
    coef[keep:] = 0.0
    return idct(coef, norm="ortho")


def markov_state_sequence(values, p_self, length, seed):
    """Jump chain over a finite value set.

    Initial state uniform; stays with probability p_self, otherwise moves to
    one of the remaining states chosen evenly (mass (1-p_self)/(len-1) each).
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("state set is empty")
    if not 0.0 <= p_self <= 1.0:
        raise ValueError(f"p_self must lie in [0, 1], got {p_self}")
    if length < 1:
        raise ValueError("length must be positive")
    rng = substream(seed, "markov")
    n = values.size
    idx = np.zeros(length, dtype=int)
    idx[0] = rng.integers(n)
    if n == 1:
        return values[idx]
    stay = rng.random(length - 1) < p_self
    hops = rng.integers(0, n - 1, size=length - 1)
    for t in range(1, length):
        if stay[t - 1]:
            idx[t] = idx[t - 1]
        else:
            hop = hops[t - 1]
            idx[t] = hop + 1 if hop >= idx[t - 1] else hop
    return values[idx]


def source_trajectories(sources, length, seed):
    """Amplitude series for every source: smoothed Gauss-Markov plus jumps."""
    smooth = np.empty((sources.n_sources, length))
    jump = np.empty((sources.n_sources, length))
    for s in range(sources.n_sources):
        lam = gauss_markov_sequence(
            sources.alphas[s], sources.means[s], length, substream(seed, "innovation", s)
        )
        smooth[s] = lowpass_smooth(lam, sources.lowpass_fraction)
        jump[s] = markov_state_sequence(
            sources.state_values[s], sources.p_self, length, substream(seed, "chain", s)
        )
    return SourceTrajectories(smooth=smooth, jump=jump)


def _kernel_weights(field, sources):
    diff = field.positions[:, None, :] - sources.positions[None, :, :]
    dist_sq = np.sum(diff * diff, axis=2)
    return np.exp(-dist_sq / sources.correlation_length**2)


def observe(field, sources, source_values):
    """One field snapshot: x_n = sum_s exp(-(d_ns/eta)^2) * beta_s."""
    source_values = np.asarray(source_values, dtype=float)
    if source_values.shape != (sources.n_sources,):
        raise ValueError("need one value per source")
    return _kernel_weights(field, sources) @ source_values


def field_series(field, sources, beta):
    """Snapshots for a whole (S, T) amplitude array, as an (N, T) array."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape[0] != sources.n_sources:
        raise ValueError("need one amplitude row per source")
    return _kernel_weights(field, sources) @ beta


def build_data_matrix(snapshots):
    """Stack W snapshots (each shape (N,)) as the columns of a DataMatrix."""
    snapshots = [np.asarray(s, dtype=float) for s in snapshots]
    if not snapshots:
        raise ValueError("window is empty")
    n = snapshots[0].shape
    if any(s.shape != n for s in snapshots):
        raise ValueError("snapshots differ in length")
    return DataMatrix(values=np.column_stack(snapshots))
