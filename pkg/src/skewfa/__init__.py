"""Mixtures of skew factor analyzers (SE, SF, SFE) with CFUSN / CFUST components."""

from .aecm import FitConfig, FitResult, e_step_cycle1, e_step_cycle2, fit, init_params
from .model import (
    ComponentParams,
    Dataset,
    Family,
    Formulation,
    MixtureParams,
    ModelSpec,
    loglik,
    marginal_law,
    model_moments,
    normalize_factors,
    param_count,
)
from .simulate import marginal_check, simulate
from .skewdist import (
    CfusnParams,
    CfustParams,
    DegenerateTruncationError,
    TruncTSpec,
    cfusn_density,
    cfust_density,
    mvt_cdf,
    sample_cfusn,
    sample_cfust,
    trunc_t_moments,
)

__version__ = "0.1.0"
