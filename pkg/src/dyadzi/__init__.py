"""Zero-inflated bivariate latent-variable models for dyadic binary data.

Two continuous traits measured by two blocks of binary items, each block
carrying an all-zero inflation class. Estimation is two-step: quadrature
maximum likelihood for the measurement models, then a data-augmentation
Gibbs sampler for the structural model.
"""

from .ars import ArsError, Envelope, LogConcaveTarget, ars_sample, bracket_mode
from .diagnostics import PiTable, SummaryTable, pi_table, rhat_ess, summarize
from .engine import (
    ChainConfig,
    PosteriorDraws,
    SamplerError,
    draw_beta,
    draw_gamma,
    draw_sigma,
    gibbs_sweep,
    impute_eta,
    impute_xi,
    run_chain,
)
from .fit_measurement import FirstStepNuisance, FitError, FitReport, fit_block
from .model import (
    block_loglik,
    block_loglik_class1,
    conditional_normal,
    eta_logpdf,
    full_loglik_oracle,
    item_prob,
    xi_probs,
)
from .params import (
    DataError,
    Dataset,
    ItemMeasurement,
    LatentState,
    MeasurementParams,
    ModelError,
    PriorSpec,
    StructuralParams,
)
from .rng import SweepKey, substream
from .simulate import CovariateSpec, MissingRule, SimSpec, simulate

__version__ = "0.1.0"

__all__ = [
    "ArsError",
    "ChainConfig",
    "CovariateSpec",
    "DataError",
    "Dataset",
    "Envelope",
    "FirstStepNuisance",
    "FitError",
    "FitReport",
    "ItemMeasurement",
    "LatentState",
    "LogConcaveTarget",
    "MeasurementParams",
    "MissingRule",
    "ModelError",
    "PiTable",
    "PosteriorDraws",
    "PriorSpec",
    "SamplerError",
    "SimSpec",
    "StructuralParams",
    "SummaryTable",
    "SweepKey",
    "ars_sample",
    "block_loglik",
    "block_loglik_class1",
    "bracket_mode",
    "conditional_normal",
    "draw_beta",
    "draw_gamma",
    "draw_sigma",
    "eta_logpdf",
    "fit_block",
    "full_loglik_oracle",
    "gibbs_sweep",
    "impute_eta",
    "impute_xi",
    "item_prob",
    "pi_table",
    "rhat_ess",
    "run_chain",
    "simulate",
    "substream",
    "summarize",
    "xi_probs",
]
