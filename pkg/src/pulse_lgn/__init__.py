"""Structure-preserving identification of relaxation time constants.

A diagonal dissipative generator ``A = -diag(softplus(theta))`` is fitted to
post-pulse voltage relaxation; downstream helpers turn the fitted modes into
impedance reconstructions, aging trackers, QC statistics and Arrhenius fits.
"""

__version__ = "0.1.0"

from .errors import DegenerateBasisError, DomainError, IngestError, PulseLgnError, ValidationError
from .lgn import (
    FitOptions,
    GeneratorParams,
    LgnFit,
    RelaxationTrace,
    TraceMeta,
    fit,
    fit_amplitudes,
    loss,
    loss_gradient,
    predict,
    propagate_state,
    softplus,
    softplus_inv,
)

__all__ = [
    "DegenerateBasisError",
    "DomainError",
    "FitOptions",
    "GeneratorParams",
    "IngestError",
    "LgnFit",
    "PulseLgnError",
    "RelaxationTrace",
    "TraceMeta",
    "ValidationError",
    "fit",
    "fit_amplitudes",
    "loss",
    "loss_gradient",
    "predict",
    "propagate_state",
    "softplus",
    "softplus_inv",
]
