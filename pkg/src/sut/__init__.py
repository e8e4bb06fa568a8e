"""Multivariate unified skew-t (SUT) distribution: densities, sampling, moments, closure algebra."""

from .density import cdf, logpdf, pdf, pdf_with_error
from .errors import InputError, NumericError, SutError
from .moments import (
    mardia,
    mean_var,
    moments_34,
    moments_via_mixture,
    truncated_t_moments,
)
from .numerics import CdfResult, QmcConfig, mvt_cdf
from .params import (
    HPsiParams,
    SutParams,
    from_hpsi,
    identifiable_family,
    permute_latent,
    to_hpsi,
    validate,
)
from .sampling import sample, sample_convolution, sample_selection, sample_sun_mixture

__all__ = [
    "CdfResult", "HPsiParams", "InputError", "NumericError", "QmcConfig", "SutError", "SutParams",
    "cdf", "from_hpsi", "identifiable_family", "logpdf", "mardia", "mean_var", "moments_34",
    "moments_via_mixture", "mvt_cdf", "pdf", "pdf_with_error", "permute_latent", "sample",
    "sample_convolution", "sample_selection", "sample_sun_mixture", "to_hpsi", "truncated_t_moments",
    "validate",
]
