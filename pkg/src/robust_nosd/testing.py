"""Bayes-factor tests on an epsilon-ball null, bootstrap goodness of fit,
and bootstrap bias / RMSE of point estimators."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bayes import PriorSpec, PseudoPosterior
from .data import DataError, FailureCounts, simulate_counts, smoothed_probs
from .estimators import FitResult, fit, fit_mle
from .hmc import HmcConfig, PosteriorChains, sample
from .model import ModelDomainError, ModelParams, TestPlan, as_param_array, plan_cells

log = logging.getLogger(__name__)

# refits that raise one of these are dropped from a bootstrap and counted
REFIT_ERRORS = (DataError, ModelDomainError, np.linalg.LinAlgError, FloatingPointError)


class EmptyRegionError(ValueError):
    """No draws fell inside (or outside) the null ball."""


@dataclass(frozen=True)
class HypothesisSpec:
    """Point null widened to a Euclidean ball ``|Lambda - lambda0| <= radius``.

    ``rho0`` is either a prior probability of the null in (0, 1) or
    ``"empirical"``, meaning it is estimated from prior-only draws.
    """

    lambda0: ModelParams
    radius: float = 0.001
    rho0: float | str = "empirical"

    def __post_init__(self):
        object.__setattr__(self, "lambda0", ModelParams.from_array(as_param_array(self.lambda0)))
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if isinstance(self.rho0, str):
            if self.rho0 != "empirical":
                raise ValueError("rho0 must be a probability or 'empirical'")
        elif not 0 < self.rho0 < 1:
            raise ValueError("rho0 must lie in (0, 1)")

    def inside(self, draws) -> np.ndarray:
        d = np.asarray(draws, dtype=float).reshape(-1, 4) - self.lambda0.as_array()
        return np.sqrt(np.sum(d * d, axis=1)) <= self.radius


@dataclass
class BayesFactorResult:
    prior_odds: float
    posterior_odds: float
    bf01: float
    category: str
    prior_inside: float = np.nan
    posterior_inside: float = np.nan
    prior_chains: PosteriorChains | None = field(default=None, repr=False)
    posterior_chains: PosteriorChains | None = field(default=None, repr=False)


BF_BANDS = (
    (1.0, "Negative"),
    (3.0, "Not worth more than a bare mention"),
    (20.0, "Positive"),
    (150.0, "Strong"),
    (np.inf, "Very Strong"),
)


def interpret_bf(bf01: float) -> str:
    """Evidence label for H0; bands are closed on the left."""
    if not bf01 > 0:
        raise ValueError("Bayes factor must be positive")
    for upper, label in BF_BANDS:
        if bf01 < upper:
            return label
    return BF_BANDS[-1][1]


def _odds(inside: np.ndarray, what: str) -> tuple[float, float]:
    n_in = int(inside.sum())
    n_out = inside.size - n_in
    if n_in == 0 or n_out == 0:
        where = "inside" if n_in == 0 else "outside"
        raise EmptyRegionError(
            f"no {what} draws {where} the null ball ({inside.size} draws); use a larger radius or more draws"
        )
    return n_in / n_out, n_in / inside.size


def bayes_factor_from_draws(prior_draws, posterior_draws, hyp: HypothesisSpec) -> BayesFactorResult:
    """BF01 from prior and posterior samples (prior draws unused if rho0 is given)."""
    if isinstance(hyp.rho0, str):
        prior_odds, f0 = _odds(hyp.inside(prior_draws), "prior")
    else:
        prior_odds, f0 = hyp.rho0 / (1.0 - hyp.rho0), hyp.rho0
    post_odds, f1 = _odds(hyp.inside(posterior_draws), "posterior")
    bf = post_odds / prior_odds
    return BayesFactorResult(prior_odds, post_odds, bf, interpret_bf(bf), f0, f1)


def bayes_factor(plan: TestPlan, counts: FailureCounts, gamma: float, prior: PriorSpec,
                 hyp: HypothesisSpec, mc_config: HmcConfig = HmcConfig(), init=None) -> BayesFactorResult:
    """Empirical Bayes factor for H0: Lambda in the ball around ``hyp.lambda0``.

    Prior odds come from HMC on the log prior alone, posterior odds from HMC
    on the pseudo-posterior, both with ``mc_config``.  Chains start at
    ``init``, by default the null value itself.
    """
    x0 = hyp.lambda0.as_array() if init is None else as_param_array(init)
    prior_chains = None
    if isinstance(hyp.rho0, str):
        prior_only = PseudoPosterior(plan, counts, gamma, prior, include_data=False)
        prior_chains = sample(prior_only.logp, prior_only.grad, mc_config, x0)
    post = PseudoPosterior(plan, counts, gamma, prior)
    post_chains = sample(post.logp, post.grad, mc_config, x0)
    res = bayes_factor_from_draws(None if prior_chains is None else prior_chains.flat, post_chains.flat, hyp)
    res.prior_chains = prior_chains
    res.posterior_chains = post_chains
    return res


# ----------------------------------------------------------------------
# bootstrap
# ----------------------------------------------------------------------

def gof_statistic(params, plan: TestPlan, counts: FailureCounts) -> float:
    """Largest absolute gap between smoothed frequencies and fitted cells."""
    return float(np.max(np.abs(smoothed_probs(counts, plan) - plan_cells(params, plan))))


@dataclass
class GofResult:
    statistic: float
    p_value: float
    n_boot: int
    n_failed: int
    mle: ModelParams
    boot: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))


def _streams(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def gof_bootstrap(plan: TestPlan, counts: FailureCounts, n_boot: int = 500, seed=0, init=None,
                  mle: FitResult | None = None) -> GofResult:
    """Parametric bootstrap p-value for the distance statistic at the MLE.

    Each replicate is simulated at the MLE and refitted from it.  Replicates
    whose refit fails are dropped and counted.
    """
    if n_boot < 100:
        raise ValueError("n_boot must be at least 100")
    if mle is None:
        mle = fit_mle(plan, counts, init=init)
    t_obs = gof_statistic(mle.params, plan, counts)
    boot, failed = [], 0
    for rng in _streams(seed, n_boot):
        sim = simulate_counts(mle.params, plan, rng)
        try:
            refit = fit_mle(plan, sim, init=mle.params)
        except REFIT_ERRORS as exc:
            failed += 1
            log.debug("bootstrap refit dropped: %s", exc)
            continue
        boot.append(gof_statistic(refit.params, plan, sim))
    if failed:
        log.warning("goodness-of-fit bootstrap: %d of %d refits failed and were dropped", failed, n_boot)
    if not boot:
        raise RuntimeError("every bootstrap refit failed")
    boot = np.array(boot)
    return GofResult(t_obs, float(np.mean(boot >= t_obs)), n_boot, failed, mle.params, boot)


@dataclass
class BootstrapSummary:
    estimate: np.ndarray
    bias: np.ndarray
    rmse: np.ndarray
    n_boot: int
    n_failed: int
    replicates: np.ndarray = field(repr=False, default_factory=lambda: np.zeros((0, 4)))


Estimator = Callable[[TestPlan, FailureCounts, np.ndarray], object]


def _as_estimator(spec) -> Estimator:
    """A gamma (0 for the MLE) or a callable ``(plan, counts, init) -> params``."""
    if callable(spec):
        return spec
    gamma = float(spec)

    def est(plan, counts, init):
        return fit(plan, counts, gamma, init=init).params

    return est


def bootstrap_bias_rmse(plan: TestPlan, counts: FailureCounts, estimator_spec, n_boot: int = 500, seed=0,
                        estimate=None) -> BootstrapSummary:
    """Parametric-bootstrap bias and RMSE of an estimator at its own estimate.

    Replicates are simulated at ``estimate`` (computed from the data when
    omitted) and re-estimated with it as the warm start.
    bias = mean(replicates) - estimate, rmse = sqrt(mean((replicate - estimate)^2)).
    """
    if n_boot < 100:
        raise ValueError("n_boot must be at least 100")
    est = _as_estimator(estimator_spec)
    if estimate is None:
        estimate = est(plan, counts, None)
    x0 = as_param_array(estimate)
    reps, failed = [], 0
    for rng in _streams(seed, n_boot):
        sim = simulate_counts(x0, plan, rng)
        try:
            reps.append(as_param_array(est(plan, sim, ModelParams.from_array(x0))))
        except REFIT_ERRORS as exc:
            failed += 1
            log.debug("bootstrap replicate dropped: %s", exc)
    if failed:
        log.warning("bootstrap: %d of %d replicates failed and were dropped", failed, n_boot)
    if not reps:
        raise RuntimeError("every bootstrap replicate failed")
    reps = np.array(reps)
    dev = reps - x0
    return BootstrapSummary(x0, dev.mean(axis=0), np.sqrt(np.mean(dev * dev, axis=0)), n_boot, failed, reps)
