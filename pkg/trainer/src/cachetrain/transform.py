"""Sparsifying dictionary rebuilt from a dataset manifest.

Dataset archives describe their transform in the manifest's "transform"
block. Only the "dct2-kron" family is understood here: an orthonormal
DCT-II analysis matrix C with entry[k, i] = c_k * cos(pi * (2i+1) * k / (2n)),
a spatial synthesis factor kron(C_side.T, C_side.T) over a square sensor
grid, a temporal factor C_window.T, and slot-major vectorization
(flat index = slot * n_sensors + sensor).
"""

import math

import numpy as np

SUPPORTED_FAMILY = "dct2-kron"


def dct_matrix(n):
    """Orthonormal DCT-II analysis matrix (n, n)."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    mat = np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    scale = np.full(n, math.sqrt(2.0 / n))
    scale[0] = math.sqrt(1.0 / n)
    return scale[:, None] * mat


def synthesis_factors(n_sensors, window):
    """(spatial, temporal) synthesis factors for the vectorized window.

    spatial is (n_sensors, n_sensors) over the flattened square grid,
    temporal is (window, window); the full dictionary is their Kronecker
    product with the temporal factor on the left.
    """
    side = math.isqrt(n_sensors)
    if side * side != n_sensors:
        raise ValueError("sensor count must be a perfect square")
    c_side = dct_matrix(side)
    spatial = np.kron(c_side.T, c_side.T)
    temporal = dct_matrix(window).T
    return spatial, temporal


def factors_from_manifest(manifest):
    """Synthesis factors for a dataset, guarded by the manifest family tag."""
    family = manifest.get("transform", {}).get("family")
    if family != SUPPORTED_FAMILY:
        raise ValueError(f"unsupported transform family {family!r}")
    return synthesis_factors(manifest["n_sensors"], manifest["window"])


def full_dictionary(spatial, temporal):
    """The dense (NW, NW) synthesis operator kron(temporal, spatial)."""
    return np.kron(temporal, spatial)


def dictionary_rows(spatial, temporal, flat_indices):
    """Rows of the synthesis operator at slot-major flat indices.

    Row for flat index f = slot * N + sensor is the outer product
    temporal[slot, :] (x) spatial[sensor, :], so sampled-entry operators
    never materialize the full Kronecker product.
    """
    flat_indices = np.asarray(flat_indices, dtype=int)
    n = spatial.shape[0]
    slots, sensors = np.divmod(flat_indices, n)
    return np.einsum("rw,rn->rwn", temporal[slots], spatial[sensors]).reshape(
        flat_indices.size, -1
    )


def synthesize(spatial, temporal, coefficients):
    """Field window from a flat coefficient vector (slot-major on both sides)."""
    n, w = spatial.shape[0], temporal.shape[0]
    zv = np.asarray(coefficients, dtype=float).reshape(w, n)
    return (temporal @ zv @ spatial.T).reshape(-1)
