"""Robust DPD and pseudo-posterior inference for interval-monitored
nondestructive one-shot device data with two competing risks."""

from .bayes import PriorSpec, PseudoPosterior, dirichlet_hyperparams
from .data import (FIXTURES, PRESETS, DataError, FailureCounts, contaminate, empirical_probs, load_fixture,
                   simulate_counts, smoothed_probs)
from .divergence import bw_objective, kl_divergence, log_likelihood, wdpd
from .estimators import (FitResult, fit, fit_mle, fit_wmdpde, sandwich_covariance, select_tuning, wald_ci)
from .hmc import HmcConfig, PosteriorChains, hpd_interval, posterior_mean, sample
from .influence import ContaminationPoint, if_bayes_factor, if_wmdpde, if_wrbe
from .model import GroupDesign, ModelDomainError, ModelParams, TestPlan, cell_probabilities, plan_cells
from .testing import HypothesisSpec, bayes_factor, bootstrap_bias_rmse, gof_bootstrap, interpret_bf

__version__ = "0.1.0"
