"""Parametric spectra and covariances.

Conventions: a cross-spectrum ``f`` is stored per Fourier frequency as a
``p x p`` Hermitian matrix equal to ``E[Y(w) Y(w)^H]`` for the unitary DFT
``Y(w)``.  The periodic covariance it induces is

    R(h) = (1/m) sum_w f(w) exp(2 pi i w.h) = Cov(Y(x + h), Y(x)).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .dft import FrequencyGrid

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Matern family
# ---------------------------------------------------------------------------

def matern_fn(r, nu: float):
    """Matern correlation ``r^nu K_nu(r) / (2^(nu-1) Gamma(nu))``, equal to 1 at ``r = 0``."""
    if nu <= 0:
        raise ValueError(f"smoothness must be positive, got {nu}")
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("distance must be nonnegative")
    out = np.ones_like(r)
    pos = r > 0
    rp = r[pos]
    # log-space evaluation avoids overflow of r^nu and underflow of K_nu
    with np.errstate(over="ignore", under="ignore"):
        logk = np.log(special.kve(nu, rp)) - rp
        out[pos] = np.exp(nu * np.log(rp) + logk - (nu - 1) * math.log(2) - special.gammaln(nu))
    out[pos & ~np.isfinite(out)] = 0.0
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class MultiMaternSpec:
    """Multivariate Matern parameters: ``K_jk(h) = sigma_jk M(|h| alpha_jk; nu_jk)``."""

    sigma: np.ndarray
    alpha: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        for name in ("sigma", "alpha", "nu"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
                raise ValueError(f"{name} must be a square matrix")
            if not np.allclose(arr, arr.T):
                raise ValueError(f"{name} must be symmetric")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if np.any(np.diag(self.sigma) <= 0) or np.any(self.alpha <= 0) or np.any(self.nu <= 0):
            raise ValueError("marginal variances, inverse ranges and smoothness must be positive")

    @property
    def p(self) -> int:
        return self.sigma.shape[0]


def parsimonious_params(p: int) -> MultiMaternSpec:
    """Parsimonious multivariate Matern used in the simulation study.

    ``alpha_jk = 0.25``, ``nu_jk = 0.5 + 0.5 (j + k - 2) / (2p - 2)`` and
    ``beta_jk = 0.8^|j-k|`` (1-based j, k).
    """
    if p < 2:
        raise ValueError(f"p must be >= 2, got {p}")
    j = np.arange(1, p + 1)
    jj, kk = np.meshgrid(j, j, indexing="ij")
    nu = 0.5 + 0.5 * (jj + kk - 2) / (2 * p - 2)
    alpha = np.full((p, p), 0.25)
    beta = 0.8 ** np.abs(jj - kk)
    gl = special.gammaln
    nud = np.diag(nu)
    log_ratio = gl(nu) - gl(nu + 1) + 0.5 * (
        gl(nud[:, None] + 1) + gl(nud[None, :] + 1) - gl(nud[:, None]) - gl(nud[None, :])
    )
    sigma = jj * kk * np.exp(log_ratio) * beta
    return MultiMaternSpec(sigma, alpha, nu)


def multimatern_cov(spec: MultiMaternSpec, h) -> np.ndarray:
    """``p x p`` covariance matrix at lag vector ``h`` (unit grid spacing)."""
    r = float(np.linalg.norm(np.asarray(h, dtype=float)))
    out = np.empty((spec.p, spec.p))
    for j in range(spec.p):
        for k in range(j, spec.p):
            out[j, k] = out[k, j] = spec.sigma[j, k] * matern_fn(r * spec.alpha[j, k], spec.nu[j, k])
    return out


def multimatern_cov_table(spec: MultiMaternSpec, dist: np.ndarray) -> np.ndarray:
    """Covariances for an array of distances, shape ``dist.shape + (p, p)``."""
    dist = np.asarray(dist, dtype=float)
    out = np.empty(dist.shape + (spec.p, spec.p))
    for j in range(spec.p):
        for k in range(j, spec.p):
            vals = spec.sigma[j, k] * matern_fn(dist * spec.alpha[j, k], spec.nu[j, k])
            out[..., j, k] = out[..., k, j] = vals
    return out


# ---------------------------------------------------------------------------
# Quasi-Matern lattice spectral density
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuasiMaternParams:
    sigma2: float
    alpha: float
    nu: float

    def __post_init__(self):
        if not (self.sigma2 > 0 and self.alpha > 0 and self.nu > 0):
            raise ValueError(f"quasi-Matern parameters must be positive: {self}")


def sin2_sum(fgrid: FrequencyGrid) -> np.ndarray:
    """``sum_j sin^2(pi omega_j)`` on the frequency lattice."""
    return (np.sin(np.pi * fgrid.mesh()) ** 2).sum(axis=0)


def quasi_matern_shape(s2: np.ndarray, alpha: float, nu: float, d: int) -> np.ndarray:
    """Unit-variance quasi-Matern density given precomputed :func:`sin2_sum` values."""
    return (1.0 + s2 / alpha**2) ** (-nu - d / 2)


def quasi_matern_density(params: QuasiMaternParams, omega) -> np.ndarray:
    """``sigma2 (1 + alpha^-2 sum_j sin^2(pi omega_j))^(-nu - d/2)``.

    ``omega`` is in cyclic units with the coordinate index on the last axis,
    so the angular form ``sin^2(theta_j / 2)`` uses ``theta_j = 2 pi omega_j``.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    d = omega.shape[-1]
    s2 = (np.sin(np.pi * omega) ** 2).sum(axis=-1)
    return params.sigma2 * quasi_matern_shape(s2, params.alpha, params.nu, d)


# ---------------------------------------------------------------------------
# Cross-spectra on the frequency lattice
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CrossSpectrum:
    """Hermitian ``p x p`` matrices at every Fourier frequency.

    ``mats`` has shape ``(b_1, ..., b_d, p, p)``.
    """

    mats: np.ndarray

    def __post_init__(self):
        mats = np.asarray(self.mats)
        if mats.ndim < 3 or mats.shape[-1] != mats.shape[-2]:
            raise ValueError("mats must have shape (*sizes, p, p)")
        object.__setattr__(self, "mats", mats)

    @property
    def p(self) -> int:
        return self.mats.shape[-1]

    @property
    def sizes(self) -> tuple[int, ...]:
        return self.mats.shape[:-2]

    @property
    def d(self) -> int:
        return len(self.sizes)

    @property
    def m(self) -> int:
        return int(np.prod(self.sizes))

    @property
    def fgrid(self) -> FrequencyGrid:
        return FrequencyGrid(self.sizes)

    def diag(self) -> np.ndarray:
        """Real diagonals, shape ``(p, *sizes)``."""
        return np.moveaxis(np.diagonal(self.mats, axis1=-2, axis2=-1).real, -1, 0)

    def entry(self, j: int, k: int) -> np.ndarray:
        return self.mats[..., j, k]

    def trace(self) -> np.ndarray:
        return np.trace(self.mats, axis1=-2, axis2=-1).real

    def lag0_cov(self) -> np.ndarray:
        """Covariance matrix at lag zero, ``(1/m) sum_w f(w)`` (real part)."""
        return self.mats.reshape(-1, self.p, self.p).mean(axis=0).real

    def hermitian_error(self) -> float:
        return float(np.max(np.abs(self.mats - np.conj(np.swapaxes(self.mats, -1, -2)))))

    def reflection_error(self) -> float:
        """Max deviation from ``f(-w) = conj(f(w))``, the real-field symmetry."""
        refl = self.mats[self.fgrid.reflect_index()]
        return float(np.max(np.abs(refl - np.conj(self.mats))))

    def min_eigenvalue(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.mats)[..., 0]

    def scaled(self, c) -> "CrossSpectrum":
        return CrossSpectrum(self.mats * c)

    def __add__(self, other: "CrossSpectrum") -> "CrossSpectrum":
        return CrossSpectrum(self.mats + other.mats)

    def __sub__(self, other: "CrossSpectrum") -> "CrossSpectrum":
        return CrossSpectrum(self.mats - other.mats)


def white_noise_spectrum(sizes, p: int, scale: float = 1.0) -> CrossSpectrum:
    mats = np.broadcast_to(scale * np.eye(p, dtype=complex), tuple(sizes) + (p, p)).copy()
    return CrossSpectrum(mats)


def independent_spectrum(densities) -> CrossSpectrum:
    """Diagonal cross-spectrum from ``p`` real density arrays of lattice shape."""
    densities = np.asarray(densities, dtype=float)
    p = densities.shape[0]
    mats = np.zeros(densities.shape[1:] + (p, p), dtype=complex)
    for j in range(p):
        mats[..., j, j] = densities[j]
    return CrossSpectrum(mats)


def periodic_cov_table(f: CrossSpectrum, check: bool = True) -> np.ndarray:
    """``R(h)`` for every lag on the embedding lattice, shape ``(*sizes, p, p)``, real."""
    axes = tuple(range(f.d))
    R = np.fft.ifftn(f.mats, axes=axes)
    if check:
        scale = max(float(np.max(np.abs(R.real))), 1e-300)
        resid = float(np.max(np.abs(R.imag)))
        if resid > 1e-8 * max(scale, 1.0):
            raise ValueError(f"imaginary residue {resid:.3g} in periodic covariance; spectrum violates symmetry")
    return R.real


def periodic_cov(f: CrossSpectrum, h) -> np.ndarray:
    """Periodic covariance ``R(h) = (1/m) sum_w f(w) exp(2 pi i w.h)``."""
    h = np.asarray(h, dtype=int)
    w = f.fgrid.mesh().reshape(f.d, -1)
    phase = np.exp(2j * np.pi * (h @ w))
    R = np.einsum("n,nij->ij", phase, f.mats.reshape(-1, f.p, f.p)) / f.m
    if np.max(np.abs(R.imag)) > 1e-8 * max(1.0, np.max(np.abs(R.real))):
        raise ValueError("imaginary residue in periodic covariance; spectrum violates symmetry")
    return R.real


def csd_from_cov(spec: MultiMaternSpec, sizes, pad: int = 8, check: bool = True) -> CrossSpectrum:
    """Lattice spectrum of a multivariate Matern sampled on the Fourier frequencies of ``sizes``.

    The covariance is tabulated on a lattice ``pad`` times larger in every
    dimension with lags wrapped to the centred range and transformed; every
    ``pad``-th frequency is kept.  ``check=False`` skips the definiteness
    test, for scoring fitted parameter sets that need not be valid.
    """
    sizes = tuple(int(s) for s in sizes)
    big = tuple(pad * s for s in sizes)
    lags = np.meshgrid(*[np.where(np.arange(L) < (L + 1) // 2, np.arange(L), np.arange(L) - L) for L in big],
                       indexing="ij")
    dist = np.sqrt(sum(g.astype(float) ** 2 for g in lags))
    K = multimatern_cov_table(spec, dist)
    axes = tuple(range(len(big)))
    F = np.fft.ifftn(K, axes=axes) * np.prod(big)
    F = F[tuple(slice(None, None, pad) for _ in sizes)]
    F = 0.5 * (F + np.conj(np.swapaxes(F, -1, -2)))
    out = CrossSpectrum(F)
    if not check:
        return out
    lam = out.min_eigenvalue()
    if lam.min() < -1e-8:
        raise ValueError(f"folded spectrum indefinite (min eigenvalue {lam.min():.3g}); increase pad")
    return out
