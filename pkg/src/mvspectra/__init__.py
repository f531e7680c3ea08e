"""Cross-spectral estimation for incomplete multivariate gridded fields.

The estimator embeds the observation lattice in a larger periodic lattice,
repeatedly imputes the missing and padded cells by conditional simulation,
and smooths the resulting cross-periodograms.  The estimate can then be
decomposed into a few common factors plus a residual.
"""

__version__ = "0.1.0"

from .lattice import ComponentMeans, GridSpec, MultiField, center, embed, restrict  # noqa: E402
from .dft import FrequencyGrid, KernelSpec, dft_forward, dft_inverse, gaussian_kernel  # noqa: E402
from .models import (CrossSpectrum, MultiMaternSpec, QuasiMaternParams, csd_from_cov,  # noqa: E402
                     parsimonious_params, quasi_matern_density)
from .csd import estimate_csd  # noqa: E402
from .condsim import PCGConfig, conditional_mean, conditional_sim, unconditional_sim  # noqa: E402
from .estimator import EstimatorConfig, EstimatorResult, run_estimator  # noqa: E402
from .factor import FactorModel, conditional_factor_field, fit_factors, normalize_csd, reconstruct_band  # noqa: E402
from .evaluation import (StudyConfig, coherence, coherence_matrix, run_study,  # noqa: E402
                         simulate_multimatern, spectral_norm_metric)

__all__ = [
    "ComponentMeans", "GridSpec", "MultiField", "center", "embed", "restrict",
    "FrequencyGrid", "KernelSpec", "dft_forward", "dft_inverse", "gaussian_kernel",
    "CrossSpectrum", "MultiMaternSpec", "QuasiMaternParams", "csd_from_cov", "parsimonious_params",
    "quasi_matern_density", "estimate_csd", "PCGConfig", "conditional_mean", "conditional_sim",
    "unconditional_sim", "EstimatorConfig", "EstimatorResult", "run_estimator", "FactorModel",
    "conditional_factor_field", "fit_factors", "normalize_csd", "reconstruct_band", "StudyConfig",
    "coherence", "coherence_matrix", "run_study", "simulate_multimatern", "spectral_norm_metric",
]
