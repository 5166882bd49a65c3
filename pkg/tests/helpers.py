"""Shared hand-built oracles for the test suite."""

import numpy as np


def dct_matrix(n):
    """Orthonormal DCT-II analysis matrix, written out entry by entry."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    mat = np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    mat[0] *= np.sqrt(1.0 / n)
    mat[1:] *= np.sqrt(2.0 / n)
    return mat


def materialized_dictionary(basis):
    """The full NW x NW synthesis matrix the package avoids building."""
    return np.kron(basis.temporal, basis.spatial)
