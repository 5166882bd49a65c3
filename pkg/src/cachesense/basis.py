"""Joint spatio-temporal sparsifying dictionary.

The dictionary is the Kronecker product of a temporal cosine basis (W x W)
and a spatial 2-D cosine basis over the block grid (N x N). Both factors are
orthonormal synthesis matrices: their columns are cosine atoms, so analysis
is plain transposition. Products against the full NW x NW Kronecker matrix
are evaluated through the two small factors; the big matrix is never formed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

RIP_ENUMERATION_CAP = 20


@dataclass(frozen=True)
class SparsifyingBasis:
    spatial: np.ndarray  # (N, N) synthesis matrix
    temporal: np.ndarray  # (W, W) synthesis matrix

    @property
    def n_sensors(self):
        return self.spatial.shape[0]

    @property
    def window(self):
        return self.temporal.shape[0]

    @property
    def dimension(self):
        return self.n_sensors * self.window


def _dct_analysis(n):
    # orthonormal DCT-II; row k holds the k-th cosine mode
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    mat = np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    mat[0] *= np.sqrt(1.0 / n)
    mat[1:] *= np.sqrt(2.0 / n)
    return mat


def build_bases(n_sensors, window):
    """Spatial 2-D cosine basis over the sqrt(N) grid plus temporal basis."""
    side = int(round(np.sqrt(n_sensors)))
    if n_sensors < 1 or side * side != n_sensors:
        raise ValueError(f"n_sensors must be a perfect square, got {n_sensors}")
    if window < 1:
        raise ValueError("window must be positive")
    d_space = _dct_analysis(side).T
    d_time = _dct_analysis(window).T
    return SparsifyingBasis(spatial=np.kron(d_space, d_space), temporal=d_time)


def synthesize(basis, z):
    """Map coefficients to field values: x = (temporal kron spatial) z.

    Computed as vec(spatial @ Z @ temporal.T) on the unvectorized N x W
    coefficient matrix Z.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (basis.dimension,):
        raise ValueError(f"expected length {basis.dimension}, got {z.shape}")
    zmat = z.reshape((basis.n_sensors, basis.window), order="F")
    x = basis.spatial @ zmat @ basis.temporal.T
    return x.reshape(-1, order="F")


def analyze(basis, x):
    """Adjoint of synthesize; exact inverse since both factors are orthonormal."""
    x = np.asarray(x, dtype=float)
    if x.shape != (basis.dimension,):
        raise ValueError(f"expected length {basis.dimension}, got {x.shape}")
    xmat = x.reshape((basis.n_sensors, basis.window), order="F")
    z = basis.spatial.T @ xmat @ basis.temporal
    return z.reshape(-1, order="F")


def kron_rows(basis, flat_indices):
    """Selected rows of the Kronecker dictionary.

    Flat index t*N + n addresses sensor n at window slot t; the row is
    temporal[t, :] kron spatial[n, :]. Returns (len(flat_indices), N*W).
    """
    flat_indices = np.asarray(flat_indices, dtype=int)
    n = basis.n_sensors
    if flat_indices.size == 0:
        return np.zeros((0, basis.dimension))
    if flat_indices.min() < 0 or flat_indices.max() >= basis.dimension:
        raise ValueError("flat index out of range")
    slots, sensors = np.divmod(flat_indices, n)
    rows = basis.temporal[slots][:, :, None] * basis.spatial[sensors][:, None, :]
    return rows.reshape(flat_indices.size, basis.dimension)


def rip_constant(matrix, order):
    """Worst-case isometry defect over all column supports of a given size.

    Exhaustive enumeration; intended as a certification probe for small
    dictionaries, hence the hard cap on the column count.
    """
    matrix = np.asarray(matrix, dtype=float)
    m, d = matrix.shape
    if d > RIP_ENUMERATION_CAP:
        raise ValueError(
            f"enumeration supports at most {RIP_ENUMERATION_CAP} columns, got {d}"
        )
    if not 1 <= order <= d:
        raise ValueError(f"order must lie in [1, {d}], got {order}")
    worst = 0.0
    for support in itertools.combinations(range(d), order):
        sv = np.linalg.svd(matrix[:, support], compute_uv=False)
        smax = sv[0]
        smin = sv[-1] if sv.size == order else 0.0
        worst = max(worst, smax * smax - 1.0, 1.0 - smin * smin)
    return worst
