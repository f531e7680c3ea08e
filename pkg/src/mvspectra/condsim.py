"""Gaussian simulation and kriging under a covariance that is periodic on the lattice.

Covariance products are circulant, so ``Sigma x`` costs a few FFTs.  Solves
with the covariance of the observed cells use preconditioned conjugate
gradients with a Vecchia (sparse inverse Cholesky) preconditioner.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .lattice import MultiField, cell_coordinates, gather, observed_index, scatter
from .models import CrossSpectrum, periodic_cov_table

log = logging.getLogger(__name__)

RIDGE = 1e-8


class PCGConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class PCGConfig:
    rel_tolerance: float = 1e-6
    max_iters: int = 500
    neighbors: int = 10

    def __post_init__(self):
        if self.rel_tolerance <= 0:
            raise ValueError("rel_tolerance must be positive")


@dataclass
class PCGResult:
    x: np.ndarray
    converged: bool
    iterations: int
    residuals: list = field(default_factory=list)


def ridged(spectrum: CrossSpectrum, delta: float = RIDGE) -> CrossSpectrum:
    """Add ``delta`` times the average diagonal to every frequency matrix."""
    level = delta * float(np.mean(spectrum.trace())) / spectrum.p
    if level <= 0:
        return spectrum
    return CrossSpectrum(spectrum.mats + level * np.eye(spectrum.p))


def _apply_spectrum(mats: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``F^H f F x`` for a field ``x`` of shape ``(p, *sizes)``."""
    d = x.ndim - 1
    axes = tuple(range(1, d + 1))
    X = np.fft.fftn(x, axes=axes, norm="ortho")
    Y = np.einsum("...jk,k...->j...", mats, X)
    return np.fft.ifftn(Y, axes=axes, norm="ortho").real


class CirculantOperator:
    """Covariance of the observed cells under the periodic model of ``spectrum``."""

    def __init__(self, spectrum: CrossSpectrum, mask: np.ndarray):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (spectrum.p,) + tuple(spectrum.sizes):
            raise ValueError("mask shape does not match spectrum")
        self.spectrum = spectrum
        self.mask = mask
        self.obs = observed_index(mask)
        self.missing = np.flatnonzero(~np.stack([a.ravel(order="F") for a in mask]).ravel())

    @property
    def n(self) -> int:
        return self.obs.size

    @property
    def p(self) -> int:
        return self.spectrum.p

    @property
    def sizes(self):
        return self.spectrum.sizes

    def full_matvec(self, x: np.ndarray) -> np.ndarray:
        return _apply_spectrum(self.spectrum.mats, x)

    def scatter(self, u: np.ndarray) -> np.ndarray:
        return scatter(u, self.obs, self.p, self.sizes)

    def __matmul__(self, u):
        return circulant_matvec(self, u)


def circulant_matvec(op: CirculantOperator, u: np.ndarray) -> np.ndarray:
    """``Sigma_UU u`` via scatter, FFT, per-frequency multiply, inverse FFT and gather."""
    return gather(op.full_matvec(op.scatter(u)), op.obs)


# ---------------------------------------------------------------------------
# Vecchia preconditioner
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NeighborSets:
    """Conditioning sets for the observed cells in canonical order (-1 pads)."""

    index: np.ndarray
    comp: np.ndarray
    coords: np.ndarray
    sizes: tuple


def vecchia_neighbors(mask: np.ndarray, q: int) -> NeighborSets:
    """Choose up to ``q`` previously ordered observed cells for each observed cell.

    Priority: the same site in earlier components, then nearest earlier
    cells of the same component (torus distance), then nearest cells of
    earlier components.
    """
    if q < 1:
        raise ValueError("neighbor count must be >= 1")
    mask = np.asarray(mask, dtype=bool)
    p, sizes = mask.shape[0], tuple(mask.shape[1:])
    flat_mask = np.stack([a.ravel(order="F") for a in mask])
    coords_all = cell_coordinates(sizes)
    box = np.array(sizes, dtype=float)

    sites = [np.flatnonzero(flat_mask[k]) for k in range(p)]
    offsets = np.cumsum([0] + [s.size for s in sites])
    n = int(offsets[-1])
    trees = [cKDTree(coords_all[s].astype(float), boxsize=box) if s.size else None for s in sites]

    nbr = -np.ones((n, q), dtype=np.int64)
    exhaustive = q >= n - 1
    for k in range(p):
        nk = sites[k].size
        if nk == 0:
            continue
        pts = coords_all[sites[k]].astype(float)
        cand_d, cand_i = [], []
        # same component: only earlier cells qualify
        if nk > 1:
            kq = nk if exhaustive else min(nk, 4 * q + 8)
            dd, ii = trees[k].query(pts, k=kq)
            dd, ii = np.atleast_2d(dd.reshape(nk, -1)), np.atleast_2d(ii.reshape(nk, -1))
            local = np.arange(nk)[:, None]
            ok = ii < local
            gi = np.where(ok, offsets[k] + ii, -1)
            # rank 1 after same-site cross-component cells (rank 0)
            cand_d.append(np.where(ok, dd, np.inf))
            cand_i.append(gi)
            cand_r = [np.where(ok, 1, 3)]
        else:
            cand_r = []
        for k2 in range(k):
            n2 = sites[k2].size
            if n2 == 0:
                continue
            kq = n2 if exhaustive else min(n2, q)
            dd, ii = trees[k2].query(pts, k=kq)
            dd, ii = dd.reshape(nk, -1), ii.reshape(nk, -1)
            cand_d.append(dd)
            cand_i.append(offsets[k2] + ii)
            cand_r.append(np.where(dd == 0, 0, 2))
        if not cand_i:
            continue
        D = np.concatenate(cand_d, axis=1)
        I = np.concatenate(cand_i, axis=1)
        Rk = np.concatenate(cand_r, axis=1)
        order = _rank_order(Rk, D)
        I = np.take_along_axis(I, order, axis=1)
        Rk = np.take_along_axis(Rk, order, axis=1)
        I = np.where(Rk == 3, -1, I)
        take = min(q, I.shape[1])
        nbr[offsets[k]:offsets[k + 1], :take] = I[:, :take]
    comp = np.repeat(np.arange(p), np.diff(offsets))
    coords = np.concatenate([coords_all[s] for s in sites]) if n else np.zeros((0, len(sizes)), int)
    return NeighborSets(nbr, comp, coords, sizes)


def _rank_order(rank: np.ndarray, dist: np.ndarray) -> np.ndarray:
    key = rank.astype(float) * 1e12 + np.where(np.isfinite(dist), dist, 1e11)
    return np.argsort(key, axis=1, kind="stable")


@dataclass(frozen=True)
class VecchiaPreconditioner:
    """``M = L^T D^{-1} L`` approximating the inverse observed covariance."""

    L: sparse.csr_matrix
    dinv: np.ndarray
    neighbors: NeighborSets

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self.L.T @ (self.dinv * (self.L @ r))

    def dense(self) -> np.ndarray:
        Ld = self.L.toarray()
        return Ld.T @ (self.dinv[:, None] * Ld)


def _cov_lookup(Rflat: np.ndarray, sizes, comp, coords, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Covariance between observed cells ``a`` and ``b`` (arrays of equal shape)."""
    lag = (coords[a] - coords[b]) % np.array(sizes)
    strides = np.cumprod((1,) + tuple(sizes[:-1]))
    li = (lag * strides).sum(axis=-1)
    return Rflat[li, comp[a], comp[b]]


def build_vecchia_preconditioner(spectrum: CrossSpectrum, mask: np.ndarray, q: int = 10,
                                 neighbors: NeighborSets | None = None) -> VecchiaPreconditioner:
    """Vecchia factor for the observed-cell covariance of ``spectrum``.

    Pass precomputed ``neighbors`` to skip the search when only the
    spectrum has changed.
    """
    nb = neighbors if neighbors is not None else vecchia_neighbors(mask, q)
    sizes = tuple(spectrum.sizes)
    p = spectrum.p
    R = periodic_cov_table(spectrum)
    Rflat = np.stack([R[..., j, k].ravel(order="F") for j in range(p) for k in range(p)], axis=1)
    Rflat = Rflat.reshape(-1, p, p)
    idx = nb.index
    n, q = idx.shape
    valid = idx >= 0
    safe = np.where(valid, idx, 0)
    rows = np.arange(n)

    var = _cov_lookup(Rflat, sizes, nb.comp, nb.coords, rows, rows)
    S_cc = _cov_lookup(Rflat, sizes, nb.comp, nb.coords, safe[:, :, None], safe[:, None, :])
    pair = valid[:, :, None] & valid[:, None, :]
    S_cc = np.where(pair, S_cc, 0.0) + np.where(~valid, 1.0, 0.0)[:, :, None] * np.eye(q)
    S_ci = np.where(valid, _cov_lookup(Rflat, sizes, nb.comp, nb.coords, safe, np.repeat(rows[:, None], q, 1)), 0.0)
    try:
        coef = np.linalg.solve(S_cc, S_ci[..., None])[..., 0]
    except np.linalg.LinAlgError:
        jitter = 1e-8 * np.maximum(np.abs(var), 1e-300)
        log.info("singular local covariance in Vecchia factor; adding diagonal jitter")
        coef = np.linalg.solve(S_cc + jitter[:, None, None] * np.eye(q), S_ci[..., None])[..., 0]
    coef = np.where(valid, coef, 0.0)
    cond_var = var - np.einsum("ij,ij->i", S_ci, coef)
    floor = 1e-8 * np.abs(var)
    if np.any(cond_var <= floor):
        log.info("clamping %d nonpositive Vecchia conditional variances", int(np.sum(cond_var <= floor)))
        cond_var = np.maximum(cond_var, np.maximum(floor, 1e-300))

    r = np.concatenate([rows, np.repeat(rows, q)[valid.ravel()]])
    c = np.concatenate([rows, idx.ravel()[valid.ravel()]])
    v = np.concatenate([np.ones(n), -coef.ravel()[valid.ravel()]])
    L = sparse.csr_matrix((v, (r, c)), shape=(n, n))
    return VecchiaPreconditioner(L, 1.0 / cond_var, nb)


# ---------------------------------------------------------------------------
# Conjugate gradients
# ---------------------------------------------------------------------------

def pcg_solve(op, precond, rhs: np.ndarray, cfg: PCGConfig | None = None, x0=None) -> PCGResult:
    """Solve ``Sigma_UU x = rhs`` by preconditioned conjugate gradients.

    ``op`` is a :class:`CirculantOperator` or any callable/matrix supporting
    ``@``; ``precond`` is a callable approximating the inverse or None.
    Stops when ``|rhs - Sigma x| / |rhs| <= rel_tolerance``; otherwise the
    last iterate is returned with ``converged=False``.
    """
    cfg = cfg or PCGConfig()
    apply = op if callable(op) and not isinstance(op, CirculantOperator) else (lambda v: op @ v)
    M = precond if precond is not None else (lambda v: v)
    b = np.asarray(rhs, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return PCGResult(np.zeros_like(b), True, 0, [0.0])
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - apply(x) if x0 is not None else b.copy()
    z = M(r)
    d = z.copy()
    rz = r @ z
    residuals = [np.linalg.norm(r) / bnorm]
    for it in range(1, cfg.max_iters + 1):
        Ad = apply(d)
        step = rz / (d @ Ad)
        x += step * d
        r -= step * Ad
        residuals.append(np.linalg.norm(r) / bnorm)
        if residuals[-1] <= cfg.rel_tolerance:
            return PCGResult(x, True, it, residuals)
        z = M(r)
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    warnings.warn(f"PCG did not reach tolerance {cfg.rel_tolerance} in {cfg.max_iters} iterations "
                  f"(residual {residuals[-1]:.3g})", PCGConvergenceWarning, stacklevel=2)
    return PCGResult(x, False, cfg.max_iters, residuals)


# ---------------------------------------------------------------------------
# Simulation and kriging
# ---------------------------------------------------------------------------

def spectrum_sqrt(spectrum: CrossSpectrum, floor: float = 1e-12) -> np.ndarray:
    """Hermitian square roots of every frequency matrix, eigenvalues clamped below ``floor * trace``."""
    lam, vec = np.linalg.eigh(spectrum.mats)
    scale = np.abs(lam).sum(axis=-1, keepdims=True)
    if np.any(lam < -1e-8 * np.maximum(scale, 1.0)):
        raise ValueError(f"spectrum is indefinite (min eigenvalue {lam.min():.3g})")
    lam = np.maximum(lam, floor * scale)
    S = (vec * np.sqrt(lam)[..., None, :]) @ np.conj(np.swapaxes(vec, -1, -2))
    # enforce S(-w) = conj(S(w)) exactly so the synthesised field is real
    refl = S[spectrum.fgrid.reflect_index()]
    return 0.5 * (S + np.conj(refl))


def unconditional_sim(spectrum: CrossSpectrum, rng, sqrt_mats: np.ndarray | None = None) -> np.ndarray:
    """One draw of the mean-zero periodic Gaussian field with cross-spectrum ``spectrum``.

    White noise is transformed with the unitary DFT (giving Hermitian-paired
    complex normals), coloured by ``f(w)^(1/2)`` and transformed back.
    Returns an array of shape ``(p, *sizes)``.
    """
    rng = np.random.default_rng(rng)
    S = spectrum_sqrt(spectrum) if sqrt_mats is None else sqrt_mats
    z = rng.standard_normal((spectrum.p,) + tuple(spectrum.sizes))
    return _apply_spectrum(S, z)


def _kriging_correction(op: CirculantOperator, resid_obs: np.ndarray, precond, cfg) -> tuple[np.ndarray, PCGResult]:
    res = pcg_solve(op, precond, resid_obs, cfg)
    return op.full_matvec(op.scatter(res.x)), res


def _prepare(spectrum: CrossSpectrum, field: MultiField, cfg: PCGConfig, precond, neighbors):
    spec = ridged(spectrum)
    op = CirculantOperator(spec, field.mask)
    if precond is None and op.n > 0:
        precond = build_vecchia_preconditioner(spec, field.mask, cfg.neighbors, neighbors)
    return spec, op, precond


def conditional_sim(spectrum: CrossSpectrum, field: MultiField, cfg: PCGConfig | None = None, rng=None,
                    precond=None, neighbors: NeighborSets | None = None) -> MultiField:
    """Draw the missing cells given the observed ones (conditioning by kriging).

    An unconditional draw ``Y*`` is corrected by ``Sigma_.U Sigma_UU^{-1} (U - U*)``.
    Observed cells of the result equal the input exactly.
    """
    cfg = cfg or PCGConfig()
    rng = np.random.default_rng(rng)
    if field.mask.all():
        return field
    spec, op, precond = _prepare(spectrum, field, cfg, precond, neighbors)
    ystar = unconditional_sim(spec, rng)
    if op.n:
        u = gather(field.values, op.obs)
        corr, _ = _kriging_correction(op, u - gather(ystar, op.obs), precond, cfg)
        ystar = ystar + corr
    return field.with_values(np.where(field.mask, field.values, ystar))


def conditional_mean(spectrum: CrossSpectrum, field: MultiField, cfg: PCGConfig | None = None,
                     precond=None, neighbors: NeighborSets | None = None) -> MultiField:
    """Kriging predictor ``E(V | U)`` written into the missing cells."""
    cfg = cfg or PCGConfig()
    if field.mask.all():
        return field
    spec, op, precond = _prepare(spectrum, field, cfg, precond, neighbors)
    if op.n == 0:
        return field.with_values(np.zeros_like(field.values))
    corr, _ = _kriging_correction(op, gather(field.values, op.obs), precond, cfg)
    return field.with_values(np.where(field.mask, field.values, corr))


def dense_covariance(spectrum: CrossSpectrum) -> np.ndarray:
    """Full ``pm x pm`` periodic covariance in canonical order (for small problems)."""
    sizes = tuple(spectrum.sizes)
    p, m = spectrum.p, spectrum.m
    R = periodic_cov_table(spectrum)
    coords = cell_coordinates(sizes)
    lag = (coords[:, None, :] - coords[None, :, :]) % np.array(sizes)
    strides = np.cumprod((1,) + sizes[:-1])
    li = (lag * strides).sum(-1)
    Rflat = np.stack([R[..., j, k].ravel(order="F") for j in range(p) for k in range(p)], 1).reshape(-1, p, p)
    blocks = Rflat[li]  # (m, m, p, p)
    return blocks.transpose(2, 0, 3, 1).reshape(p * m, p * m)
