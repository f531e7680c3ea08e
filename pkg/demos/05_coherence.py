"""
Coherence at low, middle and high frequencies
=============================================

Coherence f_jk / sqrt(f_jj f_kk) is a frequency-resolved correlation.  For
the parsimonious Matern model the cross-correlation decays with component
distance, and coherence is largest at low frequencies.
"""

import numpy as np

from mvspectra import EstimatorConfig, run_estimator
from mvspectra.cli import slice_indices
from mvspectra.evaluation import coherence_matrix, simulate_multimatern
from mvspectra.models import csd_from_cov, parsimonious_params

truth = parsimonious_params(3)
field = simulate_multimatern(truth, (16, 16), seed=5)
res = run_estimator(field, EstimatorConfig(seed=5))

est = coherence_matrix(res.f_hat)
ref = coherence_matrix(csd_from_cov(truth, res.f_hat.sizes))
np.set_printoptions(precision=3, suppress=True)
for level in ("low", "mid", "high"):
    idx = slice_indices([level, level], res.f_hat.sizes)
    print(f"{level:>4} {idx}: estimated real part\n{est[idx].real}\n      true\n{ref[idx].real}")
print("max imaginary part of the estimate:", np.abs(est.imag).max().round(3))
