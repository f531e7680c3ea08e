"""Semiparametric cross-spectral density estimate from a complete field.

Three steps: unitary DFT of each component, a marginal quasi-Matern Whittle
fit per component, then kernel smoothing of the cross-periodogram after
dividing out the fitted densities, which are multiplied back afterwards.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .dft import FrequencyGrid, KernelSpec, dft_forward, torus_smooth
from .lattice import MultiField
from .models import CrossSpectrum, QuasiMaternParams, quasi_matern_density, quasi_matern_shape, sin2_sum
from .optimize import SimplexOptimizerConfig
from .whittle import WhittleProblem, fit_whittle


@dataclass(frozen=True)
class CSDEstimate:
    spectrum: CrossSpectrum
    marginals: tuple  # one QuasiMaternParams per component, or None when parametric=False
    converged: bool = True


def cross_periodogram(transforms: np.ndarray) -> CrossSpectrum:
    """Rank-one matrices ``Y(w) Y(w)^H`` from DFTs of shape ``(p, *sizes)``."""
    Y = np.moveaxis(np.asarray(transforms), 0, -1)
    return CrossSpectrum(Y[..., :, None] * np.conj(Y[..., None, :]))


def check_kernel(kernel: KernelSpec, p: int, sizes) -> None:
    if kernel.weights.shape != tuple(sizes):
        raise ValueError(f"kernel shape {kernel.weights.shape} does not match lattice {tuple(sizes)}")
    if kernel.support < p:
        raise ValueError(f"kernel support {kernel.support} is smaller than p={p}; estimate may be singular")


def smooth_normalized(Y: np.ndarray, densities: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    """Smoothed normalised cross-periodogram rescaled by the parametric densities.

    ``Y`` has shape ``(p, *sizes)``; ``densities`` are the ``p`` positive
    normalising densities.  Returns matrices of shape ``(*sizes, p, p)``.
    """
    p = Y.shape[0]
    root = np.sqrt(densities)
    Z = Y / root
    out = np.empty(Y.shape[1:] + (p, p), dtype=complex)
    for j in range(p):
        for k in range(j, p):
            s = torus_smooth(Z[j] * np.conj(Z[k]), kernel)
            if j == k:
                s = s.real.astype(complex)
            out[..., j, k] = s * root[j] * root[k]
            if j != k:
                out[..., k, j] = np.conj(out[..., j, k])
    return out


def estimate_csd(field: MultiField, kernel: KernelSpec, cfg: SimplexOptimizerConfig | None = None,
                 parametric: bool = True) -> CSDEstimate:
    """Estimate the cross-spectrum of a field treated as complete on its embedding lattice.

    With ``parametric=False`` the normalising densities are constant and the
    routine reduces to a plain smoothed cross-periodogram.
    """
    sizes = field.grid.emb_sizes
    check_kernel(kernel, field.p, sizes)
    fgrid = FrequencyGrid(sizes)
    Y = dft_forward(field.values, field.grid.dims)
    pgram = np.abs(Y) ** 2
    if not parametric:
        return CSDEstimate(CrossSpectrum(smooth_normalized(Y, np.ones_like(pgram), kernel)), (None,) * field.p)

    s2 = sin2_sum(fgrid)
    fits, dens, converged = [], [], True
    for j in range(field.p):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = fit_whittle(WhittleProblem(pgram[j], fgrid), cfg)
        converged &= fit.converged
        fits.append(fit.params)
        dens.append(fit.params.sigma2 * quasi_matern_shape(s2, fit.params.alpha, fit.params.nu, fgrid.d))
    mats = smooth_normalized(Y, np.array(dens), kernel)
    return CSDEstimate(CrossSpectrum(mats), tuple(fits), converged)


def initial_estimate(field: MultiField, kernel: KernelSpec, cfg: SimplexOptimizerConfig | None = None,
                     parametric: bool = True) -> CSDEstimate:
    """Estimate from the field with every missing cell set to zero.

    Raises ``ValueError`` when no cell is observed.
    """
    if field.n == 0:
        raise ValueError("field has no observations; initial estimate is degenerate")
    return estimate_csd(field.zero_filled(), kernel, cfg, parametric)


def parametric_spectrum(params: list[QuasiMaternParams], sizes) -> CrossSpectrum:
    """Diagonal cross-spectrum made of the fitted marginal densities."""
    w = np.moveaxis(FrequencyGrid(tuple(sizes)).mesh(), 0, -1)
    p = len(params)
    mats = np.zeros(tuple(sizes) + (p, p), dtype=complex)
    for j, th in enumerate(params):
        mats[..., j, j] = quasi_matern_density(th, w)
    return CrossSpectrum(mats)
