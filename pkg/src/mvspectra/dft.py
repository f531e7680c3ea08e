"""Unitary multidimensional DFTs, Fourier frequency grids and torus smoothing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import GridSpec, MultiField


def _spatial_axes(arr: np.ndarray, d: int) -> tuple[int, ...]:
    return tuple(range(arr.ndim - d, arr.ndim))


@dataclass(frozen=True)
class FrequencyGrid:
    """Fourier frequencies ``k_j / b_j`` on the embedding lattice, cyclic units in [0, 1)."""

    sizes: tuple[int, ...]

    @classmethod
    def of(cls, grid: GridSpec) -> "FrequencyGrid":
        return cls(grid.emb_sizes)

    @property
    def m(self) -> int:
        return int(np.prod(self.sizes))

    @property
    def d(self) -> int:
        return len(self.sizes)

    def axes(self) -> list[np.ndarray]:
        return [np.arange(b) / b for b in self.sizes]

    def mesh(self) -> np.ndarray:
        """Array of shape ``(d, b_1, ..., b_d)`` holding each frequency coordinate."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"))

    def wrapped(self) -> np.ndarray:
        """Like :meth:`mesh` but with coordinates mapped to [-1/2, 1/2)."""
        w = self.mesh()
        return np.where(w >= 0.5, w - 1.0, w)

    def reflect_index(self) -> tuple[np.ndarray, ...]:
        """Index arrays mapping each frequency to ``-omega mod 1``."""
        return tuple(np.meshgrid(*[(-np.arange(b)) % b for b in self.sizes], indexing="ij"))

    def self_conjugate(self) -> np.ndarray:
        """Boolean array, True where ``omega == -omega mod 1``."""
        masks = [(np.arange(b) * 2) % b == 0 for b in self.sizes]
        return np.logical_and.reduce(np.meshgrid(*masks, indexing="ij"))


def dft_forward(x: np.ndarray, d: int | None = None) -> np.ndarray:
    """Unitary DFT over the trailing ``d`` axes, sign ``exp(-2 pi i omega.x)``.

    Accepts a :class:`MultiField` or a raw array.  Leading axes (component,
    matrix entries) are transformed independently.
    """
    if isinstance(x, MultiField):
        d = x.grid.dims
        x = x.values
    x = np.asarray(x)
    if d is None:
        d = x.ndim - 1
    return np.fft.fftn(x, axes=_spatial_axes(x, d), norm="ortho")


def dft_inverse(y: np.ndarray, d: int | None = None, real: bool = False) -> np.ndarray:
    """Inverse of :func:`dft_forward`.  ``real=True`` drops the imaginary part."""
    y = np.asarray(y)
    if d is None:
        d = y.ndim - 1
    out = np.fft.ifftn(y, axes=_spatial_axes(y, d), norm="ortho")
    return out.real if real else out


@dataclass(frozen=True)
class KernelSpec:
    """Smoothing weights over the frequency torus.

    ``weights`` has the lattice shape, is nonnegative and sums to one; the
    entry at index ``k`` is the weight given to frequency offset ``k / b``.
    """

    bandwidth: float
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0):
            raise ValueError("kernel weights must be nonnegative")
        total = w.sum()
        if total <= 0:
            raise ValueError("kernel weights are all zero")
        w = w / total
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def support(self) -> int:
        return int(np.count_nonzero(self.weights))


def gaussian_kernel(sizes, bandwidth: float, truncate: float = 4.0) -> KernelSpec:
    """Gaussian kernel on the torus with wrapped distance, sd ``bandwidth`` (cyclic units).

    Weights beyond ``truncate * bandwidth`` are set to zero before
    renormalisation.
    """
    if not 0 < bandwidth <= 0.5:
        raise ValueError(f"bandwidth must lie in (0, 0.5], got {bandwidth}")
    delta = np.abs(FrequencyGrid(tuple(sizes)).wrapped())
    dist2 = (delta**2).sum(axis=0)
    w = np.exp(-dist2 / (2 * bandwidth**2))
    w[dist2 > (truncate * bandwidth) ** 2] = 0.0
    return KernelSpec(bandwidth, w)


def torus_smooth(values: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    """Circular convolution ``sum_nu x(nu) alpha(omega - nu)`` over the trailing lattice axes."""
    w = kernel.weights
    d = w.ndim
    axes = _spatial_axes(values, d)
    w_hat = np.fft.fftn(w)
    out = np.fft.ifftn(np.fft.fftn(values, axes=axes) * w_hat, axes=axes)
    if np.isrealobj(values):
        return out.real
    return out
