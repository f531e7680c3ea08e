"""Synthetic data sets used by the tests, demos and acceptance suite.

``storm_fixture`` mimics a multiband satellite sequence: four correlated
bands on a (lon, lat, time) lattice, observed only inside a polygon that
drifts over time, with band scales differing by orders of magnitude.
"""

from __future__ import annotations

import numpy as np

from .condsim import unconditional_sim
from .dft import FrequencyGrid
from .lattice import GridSpec, MultiField
from .models import CrossSpectrum, quasi_matern_shape, sin2_sum

# irregular storm outline in unit-square coordinates
STORM_POLYGON = np.array([
    [0.10, 0.30], [0.25, 0.08], [0.55, 0.05], [0.80, 0.18], [0.93, 0.45],
    [0.85, 0.78], [0.60, 0.93], [0.35, 0.88], [0.15, 0.70], [0.22, 0.50],
])


def points_in_polygon(x: np.ndarray, y: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd ray casting test, vectorised over points."""
    inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    xj, yj = poly[-1]
    for xi, yi in poly:
        crosses = (yi > y) != (yj > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = (xj - xi) * (y - yi) / (yj - yi) + xi
        inside ^= crosses & (x < xint)
        xj, yj = xi, yi
    return inside


def polygon_mask(sizes, poly: np.ndarray = STORM_POLYGON, drift=(0.01, 0.005)) -> np.ndarray:
    """Cells of a (n1, n2[, n3...]) lattice inside ``poly``; the polygon moves by ``drift`` per step of dim 3."""
    n1, n2 = sizes[:2]
    x = (np.arange(n1) + 0.5) / n1
    y = (np.arange(n2) + 0.5) / n2
    X, Y = np.meshgrid(x, y, indexing="ij")
    if len(sizes) == 2:
        return points_in_polygon(X, Y, poly)
    steps = int(np.prod(sizes[2:]))
    frames = [points_in_polygon(X, Y, poly + np.asarray(drift) * t) for t in range(steps)]
    return np.stack(frames, axis=-1).reshape(sizes)


def factor_spectrum(sizes, loadings, factor_shapes, noise_shapes) -> CrossSpectrum:
    """``sum_j A_j A_j^T g_j(w) + diag(h_k(w))`` with quasi-Matern ``g`` and ``h``.

    ``factor_shapes`` / ``noise_shapes`` are ``(sigma2, alpha, nu)`` triples.
    """
    fg = FrequencyGrid(tuple(sizes))
    s2 = sin2_sum(fg)
    A = np.asarray(loadings, dtype=float)
    A = A / np.linalg.norm(A, axis=1, keepdims=True)
    p = A.shape[1]
    mats = np.zeros(tuple(sizes) + (p, p), dtype=complex)
    for a, (s, al, nu) in zip(A, factor_shapes):
        mats += (s * quasi_matern_shape(s2, al, nu, fg.d))[..., None, None] * np.outer(a, a)
    for k, (s, al, nu) in enumerate(noise_shapes):
        mats[..., k, k] += s * quasi_matern_shape(s2, al, nu, fg.d)
    return CrossSpectrum(mats)


STORM_LOADINGS = [[0.5, 0.63, 0.59, 0.05], [0.0, 0.1, 0.0, 1.0]]
STORM_SCALES = np.array([41.15, 0.70, 0.01, 0.20])
STORM_MEANS = np.array([250.0, 8.0, 0.3, 2.0])


def storm_fixture(seed: int = 2024, sizes=(24, 24, 12)) -> MultiField:
    """Four-band 3-D field with polygon missingness.

    Drawn from a two-factor spectrum on a lattice twice as large in every
    dimension and cropped, so the observed field is not periodic.
    """
    sizes = tuple(int(s) for s in sizes)
    big = tuple(2 * s for s in sizes)
    f = factor_spectrum(big, STORM_LOADINGS,
                        factor_shapes=[(1.0, 0.15, 1.0), (1.0, 0.3, 0.8)],
                        noise_shapes=[(0.4, 0.5, 0.5)] * 4)
    rng = np.random.default_rng(seed)
    z = unconditional_sim(f, rng)
    z = z[(slice(None),) + tuple(slice(0, s) for s in sizes)]
    sd = np.sqrt(np.diag(f.lag0_cov()).real)
    values = STORM_MEANS.reshape(-1, *(1,) * len(sizes)) + \
        (STORM_SCALES / sd).reshape(-1, *(1,) * len(sizes)) * z
    cells = polygon_mask(sizes)
    mask = np.broadcast_to(cells, values.shape).copy()
    return MultiField(GridSpec(sizes, sizes, 1.0), np.where(mask, values, 0.0), mask)
