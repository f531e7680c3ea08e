"""
Estimating a cross-spectrum from incomplete data
================================================

The periodogram of a finite lattice is biased by edge effects.  Embedding
the data in a larger lattice (tau > 1) and imputing the padding under a
periodic model removes most of that bias.  We score both settings against
the true spectrum of a bivariate Matern field.
"""

import numpy as np

from mvspectra import EstimatorConfig, MultiField, run_estimator
from mvspectra.evaluation import simulate_multimatern, spectral_norm_metric
from mvspectra.models import csd_from_cov, parsimonious_params

truth = parsimonious_params(2)
field = simulate_multimatern(truth, (16, 16), seed=3)

for tau in (1.0, 1.25):
    res = run_estimator(field, EstimatorConfig(tau=tau, bandwidth=0.30, burn_in=50, epsilon=0.01, seed=3))
    f_true = csd_from_cov(truth, res.f_hat.sizes)
    print(f"tau={tau:.2f}: lattice {res.f_hat.sizes}, {res.iterations} iterations, "
          f"spectral norm error {spectral_norm_metric(f_true, res.f_hat):.3f}")

# the same machinery handles missing cells inside the observation window
rng = np.random.default_rng(4)
holes = field.values.copy()
holes[:, 4:9, 6:12] = np.nan
res = run_estimator(MultiField.from_observations(holes), EstimatorConfig(seed=4))
print(f"with a 5x6 hole: converged={res.converged} after {res.iterations} iterations, "
      f"error {spectral_norm_metric(csd_from_cov(truth, res.f_hat.sizes), res.f_hat):.3f}")
print("estimated lag-0 covariance:\n", np.round(res.f_hat.lag0_cov().real, 3))
print("true lag-0 covariance:\n", np.round(truth.sigma, 3))
