"""Marginal Whittle fits of the quasi-Matern density with the variance profiled out."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .dft import FrequencyGrid
from .models import QuasiMaternParams, quasi_matern_shape, sin2_sum
from .optimize import SimplexOptimizerConfig, nelder_mead

log = logging.getLogger(__name__)

# Nelder-Mead starts in (log alpha, log nu); the second is a restart.
STARTS = ((np.log(0.2), np.log(0.5)), (np.log(1.0), np.log(1.5)))
# Box on the log parameters; outside it the objective is +inf.
LOG_BOUNDS = ((np.log(1e-4), np.log(1e3)), (np.log(1e-3), np.log(50.0)))

WHITTLE_OPTIMIZER = SimplexOptimizerConfig(max_iters=400, initial_scale=0.5, ftol=1e-10, xtol=1e-5)


@dataclass(frozen=True)
class WhittleProblem:
    """Periodogram ``|Y_j(w)|^2`` of one component on the frequency lattice."""

    periodogram: np.ndarray
    fgrid: FrequencyGrid

    def __post_init__(self):
        pg = np.asarray(self.periodogram, dtype=float)
        if pg.shape != self.fgrid.sizes:
            raise ValueError(f"periodogram shape {pg.shape} does not match grid {self.fgrid.sizes}")
        if np.any(pg < 0):
            raise ValueError("periodogram must be nonnegative")
        object.__setattr__(self, "periodogram", pg)

    @property
    def m(self) -> int:
        return self.fgrid.m


class WhittleFitWarning(RuntimeWarning):
    pass


def whittle_objective(theta: QuasiMaternParams, prob: WhittleProblem, s2=None) -> float:
    """Whittle log-likelihood ``sum_w [-log f(w) - I(w) / f(w)]`` (to be maximised)."""
    if s2 is None:
        s2 = sin2_sum(prob.fgrid)
    f = theta.sigma2 * quasi_matern_shape(s2, theta.alpha, theta.nu, prob.fgrid.d)
    return float(np.sum(-np.log(f) - prob.periodogram / f))


def profile_sigma2(alpha: float, nu: float, prob: WhittleProblem, s2=None) -> tuple[float, float]:
    """Maximising variance for fixed shape and the objective there.

    With ``s(w)`` the unit-variance density, ``sigma2 = mean(I / s)`` and the
    objective equals ``-m log sigma2 - sum log s - m``.  An all-zero
    periodogram gives ``(0.0, -inf)``.
    """
    if alpha <= 0 or nu <= 0:
        raise ValueError("alpha and nu must be positive")
    if s2 is None:
        s2 = sin2_sum(prob.fgrid)
    log_shape = (-nu - prob.fgrid.d / 2) * np.log1p(s2 / alpha**2)
    sigma2 = float(np.mean(prob.periodogram * np.exp(-log_shape)))
    if sigma2 <= 0:
        return 0.0, -np.inf
    m = prob.m
    return sigma2, float(-m * np.log(sigma2) - log_shape.sum() - m)


@dataclass(frozen=True)
class WhittleFit:
    params: QuasiMaternParams
    loglik: float
    converged: bool


def fit_whittle(prob: WhittleProblem, cfg: SimplexOptimizerConfig | None = None) -> WhittleFit:
    """Fit ``(alpha, nu)`` by Nelder-Mead in log-parameters, profiling ``sigma2``.

    Runs from two fixed starts and keeps the better optimum.
    """
    cfg = cfg or WHITTLE_OPTIMIZER
    s2 = sin2_sum(prob.fgrid)
    if not np.any(prob.periodogram > 0):
        raise ValueError("all-zero periodogram; the Whittle fit is degenerate")

    def negloglik(z):
        if not all(lo <= v <= hi for v, (lo, hi) in zip(z, LOG_BOUNDS)):
            return np.inf
        return -profile_sigma2(np.exp(z[0]), np.exp(z[1]), prob, s2)[1]

    best = None
    for start in STARTS:
        res = nelder_mead(negloglik, start, cfg)
        if best is None or res.fun < best.fun:
            best = res
    alpha, nu = np.exp(best.x)
    sigma2, ll = profile_sigma2(alpha, nu, prob, s2)
    if not best.converged:
        warnings.warn(f"Whittle fit did not converge in {cfg.max_iters} iterations", WhittleFitWarning, stacklevel=2)
    return WhittleFit(QuasiMaternParams(sigma2, float(alpha), float(nu)), ll, best.converged)
