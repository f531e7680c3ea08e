"""Iterative periodic-imputation estimator of a multivariate cross-spectrum."""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .condsim import PCGConfig, PCGConvergenceWarning, build_vecchia_preconditioner, conditional_sim, ridged, \
    vecchia_neighbors
from .csd import estimate_csd, initial_estimate
from .dft import gaussian_kernel
from .lattice import ComponentMeans, MultiField, center, embed
from .models import CrossSpectrum
from .optimize import SimplexOptimizerConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimatorConfig:
    tau: float = 1.25
    bandwidth: float = 0.30
    burn_in: int = 50
    epsilon: float = 0.01
    max_avg_iters: int = 200
    pcg: PCGConfig = field(default_factory=PCGConfig)
    optimizer: SimplexOptimizerConfig | None = None
    seed: int = 0
    parametric: bool = True

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if self.max_avg_iters < 1:
            raise ValueError("max_avg_iters must be >= 1")


@dataclass
class EstimatorResult:
    f_hat: CrossSpectrum
    marginals: tuple
    iterations: int
    trace: list
    converged: bool
    field: MultiField
    means: ComponentMeans
    timing: dict = field(default_factory=dict)
    pcg_failures: int = 0

    @property
    def lag0_variances(self) -> np.ndarray:
        return np.diag(self.f_hat.lag0_cov())


def convergence_stat(prev: CrossSpectrum, new: CrossSpectrum) -> float:
    """``max_{j,w} |new_jj(w) - prev_jj(w)| / prev_jj(w)``; frequencies with zero ``prev_jj`` are skipped."""
    if prev.mats.shape != new.mats.shape:
        raise ValueError("spectra must share grid and dimension")
    a, b = prev.diag(), new.diag()
    ok = a != 0
    if not ok.all():
        log.warning("convergence_stat: %d zero diagonal entries excluded", int((~ok).sum()))
    if not ok.any():
        return float("nan")
    return float(np.max(np.abs(b[ok] - a[ok]) / np.abs(a[ok])))


def running_average(prev: CrossSpectrum, new: CrossSpectrum, k: int) -> CrossSpectrum:
    """Average after ``k`` post-burn-in estimates: ``(k-1)/k prev + new/k``."""
    return CrossSpectrum(((k - 1) / k) * prev.mats + (1.0 / k) * new.mats)


def iteration_rng(seed: int, ell: int) -> np.random.Generator:
    """Independent stream for outer iteration ``ell`` (unaffected by burn-in length)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(ell,)))


def run_estimator(field_obs: MultiField, cfg: EstimatorConfig | None = None) -> EstimatorResult:
    """Estimate the cross-spectrum of an incomplete field on its observation lattice.

    The field is embedded in the ``tau``-expanded lattice and centred.  After
    an initial zero-filled estimate, the missing cells are repeatedly
    redrawn given the observations under the current periodic model and the
    spectrum re-estimated; after ``burn_in`` iterations the estimates are
    averaged until the largest relative change of a diagonal entry falls
    below ``epsilon``.
    """
    cfg = cfg or EstimatorConfig()
    t0 = time.perf_counter()
    embedded, means = center(embed(field_obs, cfg.tau))
    kernel = gaussian_kernel(embedded.grid.emb_sizes, cfg.bandwidth)
    timing = {"simulate": 0.0, "estimate": 0.0}

    ts = time.perf_counter()
    est = initial_estimate(embedded, kernel, cfg.optimizer, cfg.parametric)
    timing["estimate"] += time.perf_counter() - ts
    f_cur, marginals = est.spectrum, est.marginals

    if embedded.mask.all():
        # nothing to impute: every iteration reproduces the initial estimate
        log.info("complete data; returning the direct estimate")
        timing["total"] = time.perf_counter() - t0
        return EstimatorResult(f_cur, marginals, 1, [0.0], True, embedded, _with_var(means, f_cur), timing)

    neighbors = vecchia_neighbors(embedded.mask, cfg.pcg.neighbors)
    trace: list[float] = []
    pcg_failures = 0
    converged = False
    ell = 0
    current = embedded
    while True:
        ell += 1
        k = ell - cfg.burn_in
        if k > cfg.max_avg_iters:
            log.warning("stopping after %d averaging iterations without convergence", cfg.max_avg_iters)
            break
        ts = time.perf_counter()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", PCGConvergenceWarning)
            spec = ridged(f_cur)
            pre = build_vecchia_preconditioner(spec, embedded.mask, cfg.pcg.neighbors, neighbors)
            current = conditional_sim(f_cur, embedded, cfg.pcg, iteration_rng(cfg.seed, ell), precond=pre)
        pcg_failures += sum(issubclass(w.category, PCGConvergenceWarning) for w in caught)
        timing["simulate"] += time.perf_counter() - ts

        ts = time.perf_counter()
        est = estimate_csd(current, kernel, cfg.optimizer, cfg.parametric)
        timing["estimate"] += time.perf_counter() - ts
        marginals = est.marginals

        if k <= 0:
            f_cur = est.spectrum
            log.info("iter %d burn-in elapsed %.2fs", ell, time.perf_counter() - t0)
            continue
        f_new = running_average(f_cur, est.spectrum, k)
        if k >= 2:
            stat = convergence_stat(f_cur, f_new)
            trace.append(stat)
            log.info("iter %d averaging stat %.4g elapsed %.2fs", ell, stat, time.perf_counter() - t0)
            f_cur = f_new
            if stat < cfg.epsilon:
                converged = True
                break
        else:
            f_cur = f_new
            log.info("iter %d averaging elapsed %.2fs", ell, time.perf_counter() - t0)

    timing["total"] = time.perf_counter() - t0
    return EstimatorResult(f_cur, marginals, ell, trace, converged, current, _with_var(means, f_cur), timing,
                           pcg_failures)


def _with_var(means: ComponentMeans, f: CrossSpectrum) -> ComponentMeans:
    # lag-0 variances from the estimated spectrum replace the empirical ones
    return ComponentMeans(means.mu_hat, np.diag(f.lag0_cov()).copy())
