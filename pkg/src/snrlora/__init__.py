"""Adaptive low-rank adaptation with Bayesian (posterior-based) importance scores."""

from .adapter import AdapterGradients, AdapterLayer, backward, forward, orthogonality_penalty, set_mask
from .budget import AllocationDecision, BudgetSchedule, allocate, budget_at, rank_distribution
from .importance import (
    SCORER_NAMES,
    ImportanceState,
    TripletScore,
    aggregate_triplet,
    inv_sigma,
    magnitude,
    sensitivity,
    snr_abs,
    snr_mean,
    update_sensitivity_ema,
)
from .ivon import (
    IVON,
    Adam,
    GaussianState,
    PriorSpec,
    adam_step,
    elbo_estimate,
    ivon_step,
    posterior_sigma,
    sample_parameters,
)
from .numerics import Rng, finite_diff_grad, matmul, normal_cdf, sample_gaussian

__version__ = "0.1.0"
