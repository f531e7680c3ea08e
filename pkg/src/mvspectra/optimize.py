"""Deterministic Nelder-Mead simplex minimiser."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimplexOptimizerConfig:
    max_iters: int = 500
    initial_scale: float = 0.5
    ftol: float = 1e-10
    xtol: float = 1e-8
    max_evals: int | None = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class SimplexResult:
    x: np.ndarray
    fun: float
    iterations: int
    converged: bool
    n_evals: int = 0
    history: list = field(default_factory=list)


class ObjectiveNaNError(FloatingPointError):
    """Raised when the objective returns NaN at a simplex vertex."""


def nelder_mead(objective, start, cfg: SimplexOptimizerConfig | None = None, callback=None) -> SimplexResult:
    """Minimise ``objective`` with the reflect/expand/contract/shrink simplex.

    Coefficients are 1 (reflection), 2 (expansion), 0.5 (contraction) and
    0.5 (shrink).  The initial simplex places one vertex at ``start`` and
    the others at ``start + initial_scale * e_i``.  Infinite objective
    values are allowed (treated as worse than any finite value); NaN raises
    :class:`ObjectiveNaNError`.

    ``callback(iteration, x_best, f_best)`` is called after every iteration.
    ``cfg.max_evals`` optionally caps objective evaluations as well.
    """
    cfg = cfg or SimplexOptimizerConfig()
    x0 = np.atleast_1d(np.asarray(start, dtype=float))
    q = x0.size
    n_evals = 0

    def f(x):
        nonlocal n_evals
        n_evals += 1
        val = float(objective(x))
        if np.isnan(val):
            raise ObjectiveNaNError(f"objective returned NaN at {x}")
        return val

    simplex = np.vstack([x0] + [x0 + cfg.initial_scale * e for e in np.eye(q)])
    fvals = np.array([f(v) for v in simplex])
    converged = False
    done = 0
    for it in range(1, cfg.max_iters + 1):
        if cfg.max_evals is not None and n_evals >= cfg.max_evals:
            break
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        f_spread = fvals[-1] - fvals[0]
        if f_spread == 0 and np.isfinite(fvals[0]):
            converged = True
            break
        x_spread = np.max(np.abs(simplex[1:] - simplex[0]))
        if f_spread <= cfg.ftol * max(1.0, abs(fvals[0])) and x_spread <= cfg.xtol:
            converged = True
            break

        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + (centroid - worst)
        fr = f(xr)
        if fr < fvals[0]:
            xe = centroid + 2.0 * (centroid - worst)
            fe = f(xe)
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
        elif fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
        else:
            if fr < fvals[-1]:
                xc = centroid + 0.5 * (xr - centroid)
                fc = f(xc)
                accept = fc <= fr
            else:
                xc = centroid + 0.5 * (worst - centroid)
                fc = f(xc)
                accept = fc < fvals[-1]
            if accept:
                simplex[-1], fvals[-1] = xc, fc
            else:
                best = simplex[0]
                simplex[1:] = best + 0.5 * (simplex[1:] - best)
                fvals[1:] = [f(v) for v in simplex[1:]]
        done = it
        if callback is not None:
            i = int(np.argmin(fvals))
            callback(it, simplex[i].copy(), fvals[i])

    i = int(np.argmin(fvals))
    if not converged:
        log.debug("nelder_mead hit max_iters=%d (f=%g)", cfg.max_iters, fvals[i])
    return SimplexResult(simplex[i].copy(), float(fvals[i]), done, converged, n_evals)
