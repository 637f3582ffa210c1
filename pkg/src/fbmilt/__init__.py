"""Derivative of (self-)intersection local time of fractional Brownian motion.

Numerical library and CLI: exact fBm samplers, discretized mollified
functionals, closed-form and quadrature evaluation of their second-moment
structure and limiting CLT constants, and reproducible statistical harnesses.
"""

__version__ = "0.1.0"

from .errors import (
    DegenerateConditioningError,
    EmbeddingFailureError,
    FbmiltError,
    NotPositiveDefiniteError,
    OutOfRegimeError,
    ParameterError,
)
from .fbm import (
    FbmPath,
    RngStream,
    TimeGrid,
    sample_cholesky,
    sample_circulant,
    sample_independent_pair,
)
from .functionals import (
    Ensemble,
    FunctionalSample,
    MollifierSpec,
    dilt_estimate,
    dslt_estimate,
    run_ensemble,
)
from .gaussian_core import (
    ModelConfig,
    MultiIndex,
    SpdMatrix,
    beta_integral_identity,
    conditional_variance,
    det_as_conditional_product,
    fbm_cov,
    gamma_lemma_check,
    hermite,
    mollifier_deriv,
    simplex_integral,
)
from .moments import (
    ChaosCoefficient,
    chaos_kernel_coefficient,
    dilt_second_moment,
    first_chaos_norm,
    gaussian_moment,
    limiting_integral,
    region_params,
    sigma_constant,
    v_integral,
)
from .quadrature import QuadratureResult
