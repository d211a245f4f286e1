"""Data-driven priors and the DPD pseudo-posterior.

The pseudo-posterior is ``exp(scale * B(params)) * prior(params)`` where
``B`` is the DPD maximiser objective.  With ``gamma == 0`` the conventional
likelihood term ``sum_i w_i sum_h qhat log p`` is used instead, so
``scale = G`` gives the ordinary log-likelihood.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import FailureCounts, empirical_probs, smoothed_probs
from .divergence import powp
from .model import EPS_P, TestPlan, plan_cells

log = logging.getLogger(__name__)

HYPER_FLOOR = 1e-4


class HyperparameterError(ValueError):
    pass


@dataclass(frozen=True)
class PriorSpec:
    kind: str = "normal"  # "normal" | "dirichlet" | "flat"
    sigma2_p: float = 0.06
    posterior_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("normal", "dirichlet", "flat"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if not self.sigma2_p > 0:
            raise ValueError("sigma2_p must be positive")
        if self.posterior_scale < 0:
            raise ValueError("posterior_scale must be nonnegative")


@dataclass(frozen=True)
class DirichletHyper:
    beta0: np.ndarray  # (I,)
    beta: np.ndarray  # (I, L, 2)

    def as_cells(self) -> np.ndarray:
        I = self.beta0.shape[0]
        return np.concatenate([self.beta.reshape(I, -1), self.beta0[:, None]], axis=1)


def dirichlet_hyperparams(qtilde, sigma2_p: float, clamp: bool = True) -> DirichletHyper:
    """Moment-matched Dirichlet parameters from smoothed frequencies.

    ``qtilde`` is (I, 2L + 1) in package cell order.  The prior mean equals
    ``qtilde`` and the survival-cell variance equals ``sigma2_p``.  Entries
    that come out nonpositive are floored at 1e-4 with a warning, or raise
    when ``clamp`` is false.
    """
    qtilde = np.asarray(qtilde, dtype=float)
    if not sigma2_p > 0:
        raise HyperparameterError("sigma2_p must be positive")
    q0 = qtilde[:, -1]
    total = q0 * (1.0 - q0) / sigma2_p - 1.0
    beta_cells = qtilde * total[:, None]
    beta_cells[:, -1] = total - beta_cells[:, :-1].sum(axis=1)
    bad = beta_cells <= 0
    if np.any(bad):
        groups = sorted(set(np.nonzero(bad)[0] + 1))
        msg = f"sigma2_p={sigma2_p} gives nonpositive Dirichlet parameters in groups {groups}"
        if not clamp:
            raise HyperparameterError(msg)
        log.warning("%s; flooring at %g", msg, HYPER_FLOOR)
        beta_cells = np.where(bad, HYPER_FLOOR, beta_cells)
    I = qtilde.shape[0]
    return DirichletHyper(beta_cells[:, -1].copy(), beta_cells[:, :-1].reshape(I, -1, 2))


def _normal_prior(cells, jac, qtilde, I, L, grad):
    resid = cells[:, :-1] - qtilde[:, :-1]
    ss = float(np.sum(resid**2))
    if ss == 0.0:
        return -np.inf, (np.full(4, np.nan) if grad else None)
    val = -I * L * np.log(ss)
    if not grad:
        return val, None
    g = -I * L * 2.0 / ss * np.einsum("ih,ijh->j", resid, jac[:, :, :-1])
    return val, g


def _dirichlet_prior(cells, jac, beta_cells, grad):
    expo = beta_cells - 1.0
    zero = cells <= 0
    if np.any(zero & (expo > 0)):
        return -np.inf, (np.full(4, np.nan) if grad else None)
    if np.any(zero & (expo < 0)):
        return np.inf, (np.full(4, np.nan) if grad else None)
    val = float(np.sum(expo * np.log(np.maximum(cells, EPS_P))))
    if not grad:
        return val, None
    g = np.einsum("ih,ijh->j", expo / np.maximum(cells, EPS_P), jac)
    return val, g


def log_normal_prior(params, plan: TestPlan, counts: FailureCounts) -> float:
    """Normal-error prior on the failure cells, sigma^2 integrated out."""
    qt = smoothed_probs(counts, plan)
    return _normal_prior(plan_cells(params, plan), None, qt, plan.I, plan.L, False)[0]


def log_normal_prior_grad(params, plan: TestPlan, counts: FailureCounts) -> np.ndarray:
    qt = smoothed_probs(counts, plan)
    cells, jac = plan_cells(params, plan, grad=True)
    return _normal_prior(cells, jac, qt, plan.I, plan.L, True)[1]


def log_dirichlet_prior(params, plan: TestPlan, hyper: DirichletHyper) -> float:
    return _dirichlet_prior(plan_cells(params, plan), None, hyper.as_cells(), False)[0]


def log_dirichlet_prior_grad(params, plan: TestPlan, hyper: DirichletHyper) -> np.ndarray:
    cells, jac = plan_cells(params, plan, grad=True)
    return _dirichlet_prior(cells, jac, hyper.as_cells(), True)[1]


class PseudoPosterior:
    """Unnormalised log pseudo-posterior for one data set.

    Frequencies and prior hyperparameters are computed once; ``logp`` and
    ``grad`` are pure functions of the parameter vector.
    """

    def __init__(self, plan: TestPlan, counts: FailureCounts, gamma: float, prior: PriorSpec = PriorSpec(),
                 include_data: bool = True):
        if gamma < 0:
            raise ValueError("gamma must be nonnegative")
        counts.check(plan)
        self.plan = plan
        self.gamma = float(gamma)
        self.prior = prior
        self.scale = prior.posterior_scale if include_data else 0.0
        self.qhat = empirical_probs(counts, plan)
        self.qtilde = smoothed_probs(counts, plan)
        self.w = plan.weights
        self.hyper = dirichlet_hyperparams(self.qtilde, prior.sigma2_p) if prior.kind == "dirichlet" else None

    def data_term(self, cells, jac=None):
        """(value, gradient) of the DPD (or likelihood when gamma=0) term."""
        g, q, w = self.gamma, self.qhat, self.w
        if g == 0.0:
            lp = np.log(np.maximum(cells, EPS_P))
            val = float(w @ (q * lp).sum(axis=1))
            grad = None if jac is None else np.einsum("i,ih,ijh->j", w, q / np.maximum(cells, EPS_P), jac)
            return val, grad
        val = float(w @ ((q * powp(cells, g)).sum(axis=1) / g - powp(cells, g + 1.0).sum(axis=1) / (g + 1.0)))
        grad = None
        if jac is not None:
            coef = q * powp(cells, g - 1.0) - powp(cells, g)
            grad = np.einsum("i,ih,ijh->j", w, coef, jac)
        return val, grad

    def prior_term(self, cells, jac=None):
        grad = jac is not None
        if self.prior.kind == "normal":
            return _normal_prior(cells, jac, self.qtilde, self.plan.I, self.plan.L, grad)
        if self.prior.kind == "dirichlet":
            return _dirichlet_prior(cells, jac, self.hyper.as_cells(), grad)
        return 0.0, (np.zeros(4) if grad else None)

    def logp(self, x) -> float:
        cells = _kernels.cells(np.asarray(x, dtype=float), self.plan.s, self.plan.tau)
        if not np.all(np.isfinite(cells)):
            return -np.inf
        v = self.prior_term(cells)[0]
        if self.scale:
            v += self.scale * self.data_term(cells)[0]
        return float(v) if np.isfinite(v) else -np.inf

    def logp_and_grad(self, x):
        cells, jac, ok = _kernels.cells_jac(np.asarray(x, dtype=float), self.plan.s, self.plan.tau)
        if not ok:
            return -np.inf, np.full(4, np.nan)
        v, g = self.prior_term(cells, jac)
        if self.scale:
            dv, dg = self.data_term(cells, jac)
            v, g = v + self.scale * dv, g + self.scale * dg
        if not np.isfinite(v):
            return -np.inf, np.full(4, np.nan)
        return float(v), g

    def grad(self, x) -> np.ndarray:
        return self.logp_and_grad(x)[1]


def log_pseudo_posterior(params, plan: TestPlan, counts: FailureCounts, gamma: float,
                         prior: PriorSpec = PriorSpec()) -> float:
    return PseudoPosterior(plan, counts, gamma, prior).logp(params)


def log_pseudo_posterior_grad(params, plan: TestPlan, counts: FailureCounts, gamma: float,
                              prior: PriorSpec = PriorSpec()) -> np.ndarray:
    return PseudoPosterior(plan, counts, gamma, prior).grad(params)
