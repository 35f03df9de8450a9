"""Predictive resampling with mean/variance-driven and copula-based predictives."""

__version__ = "0.1.0"

from .copula import (  # noqa: E402
    CopulaFamily,
    CopulaPredictiveState,
    GriddedDensity,
    TVVerdict,
    WeightSchedule,
    check_tv_conditions,
    copula_update,
    d_n_statistic,
    gaussian_copula_density,
    sample_inverse,
    select_rho,
    weight,
)
from .kernels import (  # noqa: E402
    GaussianKernel,
    KernelSpec,
    MixtureKernel,
    StudentTKernel,
    sample_standard,
    standard_cdf_1d,
    standard_density,
    validate_kernel,
)
from .meanvar import (  # noqa: E402
    LocationScaleDistribution,
    MeanVarFamily,
    SufficientStats,
    det_step_factor,
    init_stats,
    posterior_mean_moments,
    posterior_variance_moments,
    predictive_at,
    sample_next,
    update_stats,
)
from .resampler import PosteriorSample, ResamplingPlan, evaluate_estimand, kde, run_pr, summarize  # noqa: E402
from .streams import rng_substream  # noqa: E402
