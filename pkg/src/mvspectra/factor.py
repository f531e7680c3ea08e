"""Decomposition of a cross-spectrum into a linear model of coregionalization plus residual.

For unit loadings ``A_j`` the factor spectra ``g_j(w)`` that leave the least
residual variance have closed forms (one and two factors), so only the
loadings are optimised numerically, over products of unit spheres.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .condsim import PCGConfig, conditional_mean
from .dft import dft_forward, dft_inverse
from .lattice import ComponentMeans, MultiField
from .models import CrossSpectrum
from .optimize import SimplexOptimizerConfig, nelder_mead

log = logging.getLogger(__name__)

FACTOR_OPTIMIZER = SimplexOptimizerConfig(max_iters=2000, initial_scale=0.3, ftol=1e-12, xtol=1e-7)


class SingularSpectrumWarning(RuntimeWarning):
    pass


def normalize_csd(f_hat: CrossSpectrum, var_hat) -> CrossSpectrum:
    """Divide entry ``(j, k)`` by ``sqrt(C_jj(0) C_kk(0))``.

    ``var_hat`` is a vector of lag-0 variances or a :class:`ComponentMeans`.
    """
    var = np.asarray(var_hat.var_hat if isinstance(var_hat, ComponentMeans) else var_hat, dtype=float)
    if np.any(var <= 0):
        raise ValueError("lag-0 variances must be positive")
    s = 1.0 / np.sqrt(var)
    return CrossSpectrum(f_hat.mats * s[:, None] * s[None, :])


# ---------------------------------------------------------------------------
# Profiled factor spectra
# ---------------------------------------------------------------------------

def _quad(finv: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a^T finv b`` for real vectors and stacked Hermitian ``finv``."""
    return np.einsum("k,...kl,l->...", a, finv, b)


def profile_g1(A1, f) -> np.ndarray:
    """Largest ``g`` with ``f - g A1 A1^T`` nonnegative definite: ``1 / (A1^T f^-1 A1)``.

    ``f`` may be one matrix or a stack of shape ``(..., p, p)``.
    """
    A1 = np.asarray(A1, dtype=float)
    f = np.asarray(f)
    try:
        finv = np.linalg.inv(f)
    except np.linalg.LinAlgError as exc:
        raise ValueError("spectrum matrix is singular") from exc
    return _g1_from_inverse(A1, finv)


def _g1_from_inverse(A1, finv):
    return 1.0 / _quad(finv, A1, A1).real


def _g2_from_inverse(A1, A2, finv):
    B11 = _quad(finv, A1, A1).real
    B22 = _quad(finv, A2, A2).real
    B12 = np.abs(_quad(finv, A1, A2))
    det = B11 * B22 - B12**2
    # boundary candidates: a single factor carries all the power
    c1 = (1.0 / B11, np.zeros_like(B11))
    c2 = (np.zeros_like(B22), 1.0 / B22)
    g1, g2 = np.where(1.0 / B11 >= 1.0 / B22, c1[0], c2[0]), np.where(1.0 / B11 >= 1.0 / B22, c1[1], c2[1])
    interior_ok = (det > 1e-14 * B11 * B22) & (B11 > B12) & (B22 > B12)
    with np.errstate(divide="ignore", invalid="ignore"):
        i1 = (B22 - B12) / det
        i2 = (B11 - B12) / det
    better = interior_ok & (i1 + i2 > g1 + g2)
    return np.where(better, i1, g1), np.where(better, i2, g2)


def profile_g2(A1, A2, f) -> tuple[np.ndarray, np.ndarray]:
    """Optimal ``(g1, g2)`` for two fixed unit loadings.

    With ``B = [A1 A2]^T f^-1 [A1 A2]`` the candidates are the interior
    stationary point ``((B22 - |B12|), (B11 - |B12|)) / det B`` and the two
    single-factor boundary points; the feasible one with the largest
    ``g1 + g2`` is returned.
    """
    finv = np.linalg.inv(np.asarray(f))
    return _g2_from_inverse(np.asarray(A1, float), np.asarray(A2, float), finv)


def sum_of_variance(f: CrossSpectrum, A, g) -> float:
    """Total residual variance ``(1/m) sum_w Tr(f(w) - sum_j A_j A_j^T g_j(w))``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    g = np.asarray(g, dtype=float).reshape((A.shape[0],) + tuple(f.sizes))
    h = f.mats - np.einsum("j...,jk,jl->...kl", g, A, A)
    return float(np.mean(np.trace(h, axis1=-2, axis2=-1).real))


# ---------------------------------------------------------------------------
# Optimisation over loadings
# ---------------------------------------------------------------------------

def angles_to_unit(phi) -> np.ndarray:
    """Hyperspherical angles (length ``p - 1``) to a unit vector in R^p."""
    phi = np.asarray(phi, dtype=float)
    p = phi.size + 1
    x = np.ones(p)
    for i, a in enumerate(phi):
        x[i] *= np.cos(a)
        x[i + 1:] *= np.sin(a)
    return x


def unit_to_angles(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    x = x / np.linalg.norm(x)
    p = x.size
    phi = np.empty(p - 1)
    for i in range(p - 2):
        phi[i] = np.arctan2(np.linalg.norm(x[i + 1:]), x[i])
    phi[-1] = np.arctan2(x[-1], x[-2])
    return phi


def sign_convention(A: np.ndarray) -> np.ndarray:
    """Flip each loading so its first nonzero entry is positive."""
    A = np.array(A, dtype=float)
    for row in A:
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if nz.size and row[nz[0]] < 0:
            row *= -1
    return A


@dataclass
class FactorModel:
    loadings: np.ndarray        # (J, p), unit rows
    g: np.ndarray               # (J, *sizes)
    residual: CrossSpectrum
    explained_fraction: float
    criterion: float
    total_variance: float
    converged: bool = True

    @property
    def J(self) -> int:
        return self.loadings.shape[0]


def _profile(A: np.ndarray, finv: np.ndarray) -> np.ndarray:
    if A.shape[0] == 1:
        return _g1_from_inverse(A[0], finv)[None]
    return np.stack(_g2_from_inverse(A[0], A[1], finv))


def factor_model(f: CrossSpectrum, A, converged: bool = True) -> FactorModel:
    """Profile the factor spectra for fixed loadings and assemble the model."""
    A = sign_convention(np.atleast_2d(A))
    A = A / np.linalg.norm(A, axis=1, keepdims=True)
    finv = np.linalg.inv(f.mats)
    g = np.maximum(_profile(A, finv), 0.0)
    h = CrossSpectrum(f.mats - np.einsum("j...,jk,jl->...kl", g, A, A))
    total = float(np.mean(f.trace()))
    crit = float(np.mean(h.trace()))
    return FactorModel(A, g, h, 1.0 - crit / total, crit, total, converged)


def fit_factors(f: CrossSpectrum, J: int, cfg: SimplexOptimizerConfig | None = None, seed: int = 0,
                n_random: int = 8) -> FactorModel:
    """Loadings minimising residual variance, by multi-start Nelder-Mead over sphere angles.

    Starts: the top ``J`` eigenvectors of the frequency-averaged spectrum
    and ``n_random`` random unit vectors per factor.
    """
    if J not in (1, 2):
        raise ValueError(f"only J = 1 or 2 factors are supported, got {J}")
    p = f.p
    if p < J + 0 or p < 2:
        raise ValueError("need at least two components")
    cfg = cfg or FACTOR_OPTIMIZER
    if np.any(f.min_eigenvalue() <= 0):
        raise ValueError("spectrum must be positive definite at every frequency")
    finv = np.linalg.inv(f.mats)

    def loadings(z):
        return np.stack([angles_to_unit(z[i * (p - 1):(i + 1) * (p - 1)]) for i in range(J)])

    def objective(z):
        # maximising total factor power == minimising residual variance
        return -float(np.mean(_profile(loadings(z), finv).sum(axis=0)))

    avg = f.lag0_cov()
    _, vec = np.linalg.eigh(avg)
    starts = [np.concatenate([unit_to_angles(vec[:, -1 - i]) for i in range(J)])]
    rng = np.random.default_rng(seed)
    for _ in range(n_random):
        starts.append(np.concatenate([unit_to_angles(rng.standard_normal(p)) for _ in range(J)]))

    best = None
    for z0 in starts:
        res = nelder_mead(objective, z0, cfg)
        if best is None or res.fun < best.fun:
            best = res
    return factor_model(f, loadings(best.x), best.converged)


# ---------------------------------------------------------------------------
# Conditional factor fields
# ---------------------------------------------------------------------------

def _safe_inverse(f: CrossSpectrum) -> np.ndarray:
    lam = f.min_eigenvalue()
    scale = f.trace() / f.p
    bad = lam <= 1e-12 * scale
    mats = f.mats
    if np.any(bad):
        warnings.warn(f"{int(bad.sum())} singular frequency matrices; using a ridged inverse",
                      SingularSpectrumWarning, stacklevel=3)
        mats = mats + (1e-8 * scale)[..., None, None] * np.eye(f.p) * bad[..., None, None]
    return np.linalg.inv(mats)


def conditional_factor_field(model: FactorModel, f: CrossSpectrum, field: MultiField, j: int,
                             cfg: PCGConfig | None = None) -> np.ndarray:
    """``E(W_j(x) | U)`` on the embedding lattice.

    ``field`` must be in the units of ``f`` (centred and, for a normalised
    spectrum, scaled to unit variance).  Missing cells are kriged first;
    the completed field is transformed, filtered by
    ``g_j(w) A_j^T f(w)^-1`` and transformed back.
    """
    if not 0 <= j < model.J:
        raise IndexError(f"factor index {j} out of range for J={model.J}")
    completed = conditional_mean(f, field, cfg)
    Y = dft_forward(completed.values, field.grid.dims)
    finv = _safe_inverse(f)
    coef = model.g[j][..., None] * np.einsum("k,...kl->...l", model.loadings[j], finv)
    W = dft_inverse(np.einsum("...l,l...->...", coef, Y), field.grid.dims)
    scale = max(float(np.max(np.abs(W.real))), 1.0)
    if np.max(np.abs(W.imag)) > 1e-8 * scale:
        log.warning("conditional factor field has imaginary residue %.3g", np.max(np.abs(W.imag)))
    return W.real


def reconstruct_band(model: FactorModel, means: ComponentMeans, factor_fields, k: int,
                     scale: str = "sd") -> np.ndarray:
    """``mu_k + s_k sum_j A_jk E(W_j | U)`` for component ``k``.

    ``scale="sd"`` uses ``s_k = sqrt(C_kk(0))``, which undoes the
    normalisation; ``scale="variance"`` uses ``s_k = C_kk(0)``.
    """
    if scale == "sd":
        s = np.sqrt(means.var_hat[k])
    elif scale == "variance":
        s = means.var_hat[k]
    else:
        raise ValueError(f"unknown scale {scale!r}")
    fields = np.asarray(factor_fields, dtype=float)
    combo = np.tensordot(model.loadings[: fields.shape[0], k], fields, axes=1)
    return means.mu_hat[k] + s * combo
