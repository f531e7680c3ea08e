"""Gridded multivariate fields with per-cell missingness.

A field lives on a rectangular integer lattice.  Values and masks are
stored as numpy arrays of shape ``(p, b_1, ..., b_d)``.  Whenever a field
is flattened to a vector (for example the observed vector ``U``), the
order is component-major and then lattice order with dimension 1 varying
fastest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Observation lattice sizes ``a`` and embedding lattice sizes ``b``."""

    obs_sizes: tuple[int, ...]
    emb_sizes: tuple[int, ...]
    expansion: float = 1.0

    def __post_init__(self):
        a = tuple(int(v) for v in self.obs_sizes)
        b = tuple(int(v) for v in self.emb_sizes)
        if len(a) != len(b) or len(a) == 0:
            raise ValueError("obs_sizes and emb_sizes must have the same nonzero length")
        if any(v < 1 for v in a):
            raise ValueError(f"lattice sizes must be positive, got {a}")
        if any(bj < aj for aj, bj in zip(a, b)):
            raise ValueError(f"embedding sizes {b} smaller than observation sizes {a}")
        object.__setattr__(self, "obs_sizes", a)
        object.__setattr__(self, "emb_sizes", b)

    @classmethod
    def from_expansion(cls, obs_sizes, tau: float = 1.0) -> "GridSpec":
        if tau < 1:
            raise ValueError(f"expansion factor must be >= 1, got {tau}")
        # round before ceil so 1.25 * 16 does not become 20.000000000000004
        b = tuple(int(math.ceil(round(tau * a, 9))) for a in obs_sizes)
        return cls(tuple(obs_sizes), b, float(tau))

    @property
    def dims(self) -> int:
        return len(self.obs_sizes)

    @property
    def m(self) -> int:
        return int(np.prod(self.emb_sizes))

    @property
    def n_obs_cells(self) -> int:
        return int(np.prod(self.obs_sizes))

    def obs_region(self) -> tuple[slice, ...]:
        """Index slices selecting the observation lattice inside the embedding."""
        return tuple(slice(0, a) for a in self.obs_sizes)


def _flatten(arr: np.ndarray) -> np.ndarray:
    # (p, b1, ..., bd) -> (p, m) with dimension 1 fastest
    p = arr.shape[0]
    return np.stack([a.ravel(order="F") for a in arr]) if p else arr.reshape(0, -1)


def _unflatten(flat: np.ndarray, sizes) -> np.ndarray:
    return np.stack([row.reshape(sizes, order="F") for row in flat])


@dataclass(frozen=True)
class MultiField:
    """A ``p``-component real field on the embedding lattice of ``grid``.

    ``values`` and ``mask`` have shape ``(p, *grid.emb_sizes)``; ``mask`` is
    True where a value was observed.  Missing cells hold a defined value
    (zero or an imputation) so transforms are always well posed.
    """

    grid: GridSpec
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        mask = np.array(self.mask, dtype=bool)
        shape = (values.shape[0],) + self.grid.emb_sizes
        if values.shape != shape or mask.shape != shape:
            raise ValueError(f"values/mask must have shape {shape}, got {values.shape}, {mask.shape}")
        outside = np.ones(self.grid.emb_sizes, dtype=bool)
        outside[self.grid.obs_region()] = False
        if mask[:, outside].any():
            raise ValueError("cells outside the observation lattice cannot be observed")
        values.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_observations(cls, values, mask=None) -> "MultiField":
        """Wrap an array of shape ``(p, a_1, ..., a_d)`` with no embedding."""
        values = np.asarray(values, dtype=float)
        if mask is None:
            mask = np.isfinite(values)
        mask = np.asarray(mask, dtype=bool)
        grid = GridSpec(values.shape[1:], values.shape[1:], 1.0)
        return cls(grid, np.where(mask, values, 0.0), mask)

    @property
    def p(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return int(self.mask.sum())

    def with_values(self, values) -> "MultiField":
        return MultiField(self.grid, values, self.mask)

    def zero_filled(self) -> "MultiField":
        return self.with_values(np.where(self.mask, self.values, 0.0))


@dataclass(frozen=True)
class ComponentMeans:
    mu_hat: np.ndarray
    var_hat: np.ndarray = field(default=None)


def embed(field: MultiField, tau: float) -> MultiField:
    """Place a field defined on its observation lattice into the ``tau``-expanded lattice.

    Added cells are missing with value 0.
    """
    if tau < 1:
        raise ValueError(f"expansion factor must be >= 1, got {tau}")
    a = field.grid.obs_sizes
    if field.grid.emb_sizes != a:
        field = restrict(field)
    grid = GridSpec.from_expansion(a, tau)
    values = np.zeros((field.p,) + grid.emb_sizes)
    mask = np.zeros_like(values, dtype=bool)
    region = (slice(None),) + grid.obs_region()
    values[region] = field.values
    mask[region] = field.mask
    values[~mask] = 0.0
    return MultiField(grid, values, mask)


def restrict(field: MultiField) -> MultiField:
    """Inverse of :func:`embed`: crop to the observation lattice."""
    region = (slice(None),) + field.grid.obs_region()
    a = field.grid.obs_sizes
    return MultiField(GridSpec(a, a, 1.0), field.values[region], field.mask[region])


def center(field: MultiField) -> tuple[MultiField, ComponentMeans]:
    """Subtract each component's mean over its observed cells.

    Returns the centered field and the sample means with empirical lag-0
    variances.  Missing cells are left at their previous value.
    """
    counts = field.mask.reshape(field.p, -1).sum(axis=1)
    if np.any(counts == 0):
        raise ValueError(f"components {np.flatnonzero(counts == 0).tolist()} have no observations")
    flat_v = field.values.reshape(field.p, -1)
    flat_m = field.mask.reshape(field.p, -1)
    mu = np.where(flat_m, flat_v, 0.0).sum(axis=1) / counts
    resid = np.where(flat_m, flat_v - mu[:, None], 0.0)
    var = (resid**2).sum(axis=1) / counts
    shift = mu.reshape((field.p,) + (1,) * field.grid.dims)
    values = np.where(field.mask, field.values - shift, field.values)
    return field.with_values(values), ComponentMeans(mu, var)


def split(field: MultiField) -> tuple[np.ndarray, np.ndarray]:
    """Observed vector ``U`` and flat indices of the missing cells.

    Both follow the canonical order; flat indices address the ``(p, m)``
    flattened layout, i.e. ``component * m + lattice_index``.
    """
    vals = _flatten(field.values).ravel()
    obs = _flatten(field.mask).ravel()
    return vals[obs], np.flatnonzero(~obs)


def merge(field: MultiField, u: np.ndarray, v: np.ndarray | None = None) -> MultiField:
    """Inverse of :func:`split`: write ``u`` to observed cells and ``v`` to missing ones."""
    obs = _flatten(field.mask).ravel()
    flat = _flatten(field.values).ravel().copy()
    flat[obs] = u
    if v is not None:
        flat[~obs] = v
    values = _unflatten(flat.reshape(field.p, -1), field.grid.emb_sizes)
    return field.with_values(values)


def observed_index(mask: np.ndarray) -> np.ndarray:
    """Flat canonical indices of observed cells."""
    return np.flatnonzero(_flatten(mask).ravel())


def scatter(vec: np.ndarray, index: np.ndarray, p: int, sizes) -> np.ndarray:
    """Place ``vec`` at flat canonical ``index`` of a zero ``(p, *sizes)`` array."""
    flat = np.zeros(p * int(np.prod(sizes)), dtype=vec.dtype)
    flat[index] = vec
    return _unflatten(flat.reshape(p, -1), tuple(sizes))


def gather(arr: np.ndarray, index: np.ndarray) -> np.ndarray:
    return _flatten(arr).ravel()[index]


def cell_coordinates(sizes) -> np.ndarray:
    """Integer coordinates (0-based) of every lattice cell in canonical order, shape (m, d)."""
    grids = np.meshgrid(*[np.arange(s) for s in sizes], indexing="ij")
    return np.stack([g.ravel(order="F") for g in grids], axis=1)
