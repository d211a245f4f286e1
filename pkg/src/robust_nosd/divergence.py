"""Log-likelihood, weighted density power divergence and its maximiser form.

All public functions take ``(params, plan, counts, ...)``.  The underscored
variants work on a precomputed frequency array ``qhat`` (I, 2L + 1) and are
what the optimisers call in their inner loops.
"""

from __future__ import annotations

import numpy as np

from .data import FailureCounts, empirical_probs
from .model import EPS_P, TestPlan, plan_cells


def _check_gamma(gamma):
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0 (use kl_divergence / log_likelihood for the limit), got {gamma}")


def powp(p, e):
    """``p**e`` computed as exp(e * log p) on the clamped probabilities."""
    return np.exp(e * np.log(np.maximum(p, EPS_P)))


def _loglik_cells(cells, counts_cells):
    pos = counts_cells > 0
    if np.any(cells[pos] <= 0):
        return -np.inf
    return float(np.sum(counts_cells[pos] * np.log(cells[pos])))


def log_likelihood(params, plan: TestPlan, counts: FailureCounts) -> float:
    """Multinomial log-likelihood with the combinatorial constant dropped."""
    counts.check(plan)
    return _loglik_cells(plan_cells(params, plan), counts.cells)


def log_likelihood_grad(params, plan: TestPlan, counts: FailureCounts) -> np.ndarray:
    cells, jac = plan_cells(params, plan, grad=True)
    return np.einsum("ih,ijh->j", counts.cells / np.maximum(cells, EPS_P), jac)


def _wdpd(cells, qhat, w, gamma):
    inner = (
        powp(cells, gamma + 1.0).sum(axis=1)
        - (gamma + 1.0) / gamma * (qhat * powp(cells, gamma)).sum(axis=1)
        + (qhat ** (gamma + 1.0)).sum(axis=1) / gamma
    )
    return float(w @ inner)


def wdpd(params, plan: TestPlan, counts: FailureCounts, gamma: float) -> float:
    """Weighted DPD between observed frequencies and model cells."""
    _check_gamma(gamma)
    qhat = empirical_probs(counts, plan)
    return _wdpd(plan_cells(params, plan), qhat, plan.weights, gamma)


def _kl(cells, qhat, w):
    pos = qhat > 0
    if np.any(cells[pos] <= 0):
        return np.inf
    terms = np.zeros_like(qhat)
    terms[pos] = qhat[pos] * np.log(qhat[pos] / cells[pos])
    return float(w @ terms.sum(axis=1))


def kl_divergence(params, plan: TestPlan, counts: FailureCounts) -> float:
    qhat = empirical_probs(counts, plan)
    return _kl(plan_cells(params, plan), qhat, plan.weights)


def _bw(cells, qhat, w, gamma):
    inner = (qhat * powp(cells, gamma)).sum(axis=1) / gamma - powp(cells, gamma + 1.0).sum(axis=1) / (gamma + 1.0)
    return float(w @ inner)


def _bw_grad(cells, jac, qhat, w, gamma):
    coef = qhat * powp(cells, gamma - 1.0) - powp(cells, gamma)
    return np.einsum("i,ih,ijh->j", w, coef, jac)


def bw_objective(params, plan: TestPlan, counts: FailureCounts, gamma: float) -> float:
    """The DPD maximiser objective; its argmax is the WMDPDE."""
    _check_gamma(gamma)
    qhat = empirical_probs(counts, plan)
    return _bw(plan_cells(params, plan), qhat, plan.weights, gamma)


def bw_gradient(params, plan: TestPlan, counts: FailureCounts, gamma: float) -> np.ndarray:
    _check_gamma(gamma)
    qhat = empirical_probs(counts, plan)
    cells, jac = plan_cells(params, plan, grad=True)
    return _bw_grad(cells, jac, qhat, plan.weights, gamma)


def data_constant(plan: TestPlan, counts: FailureCounts, gamma: float) -> float:
    """Parameter-free term equal to wdpd + (gamma + 1) * bw_objective."""
    _check_gamma(gamma)
    qhat = empirical_probs(counts, plan)
    return float(plan.weights @ (qhat ** (gamma + 1.0)).sum(axis=1) / gamma)


def estimating_equations(params, plan: TestPlan, counts: FailureCounts, gamma: float) -> np.ndarray:
    """Left side of the WMDPDE estimating equations, scaled by 1/G.

    Equal to ``-bw_gradient``; zero at an interior WMDPDE.
    """
    qhat = empirical_probs(counts, plan)
    cells, jac = plan_cells(params, plan, grad=True)
    coef = powp(cells, gamma - 1.0) * (cells - qhat)
    return np.einsum("i,ih,ijh->j", plan.weights, coef, jac)
