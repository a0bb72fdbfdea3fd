"""Exact finite-width Bayesian deep linear networks.

The prior over outputs of a deep linear network is a Gaussian mixture over
Wishart-distributed mixing matrices. This package samples that mixture,
computes posterior predictives and evidences through it, and studies its
large-width concentration.
"""

__version__ = "0.1.0"

from .conv import ConvNetworkSpec, backward_tmap, kernel_conv, translation_average  # noqa: E402
from .errors import (  # noqa: E402
    ConfigError,
    DataError,
    DegenerateWeights,
    DiagnosticFailure,
    DlnkError,
    DofTooSmall,
    NumericError,
    ParseError,
    RankDeficientDesign,
)
from .evidence import evidence_finite_beta, evidence_zero_temperature, omega  # noqa: E402
from .fc import FcNetworkSpec, kernel_fc, sample_mixing, sample_prior_mixture, sample_prior_weightspace  # noqa: E402
from .ldp import minimize_rate, rate_lazy, rate_meanfield, saddle_scalar_solve  # noqa: E402
from .posterior import (  # noqa: E402
    meanfield_mixing,
    posterior_mixing_is,
    posterior_mixing_mh,
    predictive_mixture,
)
from .rng import RngStream, set_threads  # noqa: E402

__all__ = [
    "ConfigError", "ConvNetworkSpec", "DataError", "DegenerateWeights", "DiagnosticFailure", "DlnkError",
    "DofTooSmall", "FcNetworkSpec", "NumericError", "ParseError", "RankDeficientDesign", "RngStream",
    "backward_tmap", "evidence_finite_beta", "evidence_zero_temperature", "kernel_conv", "kernel_fc",
    "meanfield_mixing", "minimize_rate", "omega", "posterior_mixing_is", "posterior_mixing_mh",
    "predictive_mixture", "rate_lazy", "rate_meanfield", "saddle_scalar_solve", "sample_mixing",
    "sample_prior_mixture", "sample_prior_weightspace", "set_threads", "translation_average",
]
