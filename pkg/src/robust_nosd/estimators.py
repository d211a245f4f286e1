"""MLE and WMDPDE by cyclic coordinate descent, sandwich covariance,
Wald intervals and tuning-parameter selection."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .data import DataError, FailureCounts, empirical_probs
from .divergence import _loglik_cells, _wdpd, powp
from . import _kernels
from .model import ModelDomainError, ModelParams, TestPlan, as_param_array, plan_cells

log = logging.getLogger(__name__)

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
BOX = 20.0
TAIL = 10.0
N_RESTARTS = 16


def _near_box(x, tail=TAIL):
    # past |x| = 10 a link is exp(+-10 s): alpha or theta is numerically 0 or
    # inf for any stress used here, and the objective is flat
    return bool(np.any(np.abs(x) >= tail))


class SingularMatrixError(np.linalg.LinAlgError):
    pass


@dataclass
class FitResult:
    params: ModelParams
    objective: float
    iterations: int
    converged: bool
    gamma: float = 0.0
    history: list = field(default_factory=list, repr=False)

    @property
    def x(self) -> np.ndarray:
        return self.params.as_array()

    def at_bound(self, tail: float = TAIL) -> bool:
        """True when some coordinate has run out onto a flat link tail."""
        return _near_box(self.x, tail)


@dataclass
class SandwichCovariance:
    Q: np.ndarray
    R: np.ndarray
    cov: np.ndarray
    G: float

    @property
    def asymptotic(self) -> np.ndarray:
        """Q^-1 R Q^-1, the covariance of sqrt(G) (estimate - truth)."""
        return self.cov * self.G


# ----------------------------------------------------------------------
# coordinate descent
# ----------------------------------------------------------------------

def _safe(f):
    def wrapped(x):
        try:
            v = f(x)
        except (ModelDomainError, FloatingPointError):
            return np.inf
        return v if np.isfinite(v) else np.inf

    return wrapped


def golden_section(phi, lo, hi, tol=1e-10):
    """Minimise a unimodal scalar function on [lo, hi]."""
    c = hi - INV_PHI * (hi - lo)
    d = lo + INV_PHI * (hi - lo)
    fc, fd = phi(c), phi(d)
    while hi - lo > tol:
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - INV_PHI * (hi - lo)
            fc = phi(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + INV_PHI * (hi - lo)
            fd = phi(d)
    return (c, fc) if fc <= fd else (d, fd)


def bracket_minimum(phi, x0, f0, half_width=0.5, max_half_width=8.0, lo=-np.inf, hi=np.inf):
    """Grow a bracket around ``x0`` until its middle point is lowest.

    The half-width starts at ``half_width`` and doubles up to
    ``max_half_width``; the bracket is clipped to ``[lo, hi]``.  Returns
    ``(left, right, x_best, f_best)``.  A side only counts as lower when it
    beats ``f0`` by more than rounding noise, so flat tails do not pull the
    iterate away.
    """
    h = half_width
    while True:
        left, right = max(x0 - h, lo), min(x0 + h, hi)
        fl, fr = phi(left), phi(right)
        noise = 1e-12 * max(1.0, abs(f0))
        if fl >= f0 - noise and fr >= f0 - noise:
            return left, right, x0, f0
        if fl < fr:
            x0, f0 = left, fl
        else:
            x0, f0 = right, fr
        if h >= max_half_width:
            return max(x0 - h, lo), min(x0 + h, hi), x0, f0
        h *= 2.0


def _pattern_move(f, x, fx, x_prev, lo, hi, line_tol):
    """Line search along the net displacement of the last sweep.

    Cyclic descent crawls along narrow valleys; stepping along the sweep
    direction recovers most of the lost progress.  Never increases ``f``.
    """
    d = x - x_prev
    if not np.any(d):
        return x, fx
    # largest step keeping every coordinate inside the box
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = np.min(np.where(d > 0, (hi - x) / d, np.where(d < 0, (lo - x) / d, np.inf)))
    t_hi = min(t_hi, 64.0)
    if t_hi <= 0:
        return x, fx

    def phi(t):
        return f(x + t * d)

    left, right, tb, fb = bracket_minimum(phi, 0.0, fx, 1.0, 32.0, -1.0, t_hi)
    t, ft = golden_section(phi, left, right, tol=line_tol)
    if ft > fb:
        t, ft = tb, fb
    if ft < fx:
        return np.clip(x + t * d, lo, hi), ft
    return x, fx


def coordinate_descent(objective, x0, tol=1e-6, max_sweeps=500, half_width=0.5, max_half_width=8.0,
                       bounds=(-BOX, BOX), line_tol=1e-10, pattern=True):
    """Cyclic coordinate descent on ``objective`` (minimised).

    Each coordinate is solved by golden-section search on an adaptive
    bracket.  With ``pattern`` a line search along the sweep's net move
    follows every sweep.  Stops when the largest coordinate move in a
    sweep is below ``tol``.  Returns (x, f, sweeps, converged, history).
    """
    f = _safe(objective)
    x = np.array(x0, dtype=float)
    lo, hi = bounds
    if np.any(x < lo) or np.any(x > hi):
        raise ValueError(f"starting point {x} outside the parameter box {bounds}")
    fx = f(x)
    if not np.isfinite(fx):
        raise ModelDomainError("objective is not finite at the starting point")
    history = [fx]
    for sweep in range(1, max_sweeps + 1):
        max_move = 0.0
        x_prev = x.copy()
        for j in range(x.size):
            xj = x[j]

            def phi(t, j=j):
                x[j] = t
                return f(x)

            left, right, xb, fb = bracket_minimum(phi, xj, fx, half_width, max_half_width, lo, hi)
            t, ft = golden_section(phi, left, right, tol=line_tol)
            if ft > fb:
                t, ft = xb, fb
            if ft >= fx:
                t, ft = xj, fx
            x[j] = t
            fx = ft
            max_move = max(max_move, abs(t - xj))
        if pattern and max_move >= tol:
            x, fx = _pattern_move(f, x, fx, x_prev, lo, hi, line_tol)
        history.append(fx)
        if max_move < tol:
            return x, fx, sweep, True, history
    return x, fx, max_sweeps, False, history


# ----------------------------------------------------------------------
# estimators
# ----------------------------------------------------------------------

GRID_VALUES = (-1.0, -0.5, 0.0, 0.5, 1.0)


def _ranked_grid(objective, values=GRID_VALUES):
    pts = [np.array(x, dtype=float) for x in itertools.product(values, repeat=4)]
    vals = np.array([objective(x) for x in pts])
    order = [i for i in np.argsort(vals, kind="stable") if np.isfinite(vals[i])]
    return [pts[i] for i in order]


def grid_search_init(plan: TestPlan, counts: FailureCounts, values=GRID_VALUES) -> ModelParams:
    """Best log-likelihood over the product grid ``values``^4."""
    n = counts.cells.astype(float)
    ranked = _ranked_grid(lambda x: _kernels.neg_loglik(x, plan.s, plan.tau, n), values)
    if not ranked:
        raise ModelDomainError("no grid point gives a finite likelihood")
    return ModelParams.from_array(ranked[0])


def _descend(objective, init, tol, max_sweeps, restarts):
    """Coordinate descent from ``init``; if that ends on the box, retry.

    The link coefficients have flat tails (alpha or theta -> 0 or inf) that
    a long bracket can jump into and never leave.  Retries start from the
    best grid points with the bracket held at its initial width, so each
    coordinate only walks to its nearest local minimum, and the lowest
    objective wins.
    """
    x, fx, it, conv, hist = coordinate_descent(objective, init, tol=tol, max_sweeps=max_sweeps)
    if restarts <= 0 or not _near_box(x):
        return x, fx, it, conv, hist
    for start in _ranked_grid(_safe(objective))[:restarts]:
        cand = coordinate_descent(objective, start, tol=tol, max_sweeps=max_sweeps, max_half_width=0.5)
        if cand[1] < fx - 1e-9:
            x, fx, it, conv, hist = cand
    return x, fx, it, conv, hist


def _prepare(plan, counts):
    counts.check(plan)
    counts.require_failures()
    return empirical_probs(counts, plan)


def fit_mle(plan: TestPlan, counts: FailureCounts, init=None, tol=1e-6, max_sweeps=500,
            restarts=N_RESTARTS) -> FitResult:
    """Maximum likelihood by coordinate descent.

    ``restarts`` grid starts are tried when the first run ends on the
    parameter box; set it to 0 to keep the path from ``init`` only.
    """
    _prepare(plan, counts)
    if init is None:
        init = grid_search_init(plan, counts)
    n = counts.cells.astype(float)
    s, tau = plan.s, plan.tau

    def negll(x):
        return _kernels.neg_loglik(x, s, tau, n)

    x, fx, it, conv, hist = _descend(negll, as_param_array(init), tol, max_sweeps, restarts)
    if not conv:
        log.warning("MLE coordinate descent did not converge in %d sweeps", max_sweeps)
    return FitResult(ModelParams.from_array(x), -fx, it, conv, 0.0, [-h for h in hist])


def fit_wmdpde(plan: TestPlan, counts: FailureCounts, gamma: float, init=None, tol=1e-6,
               max_sweeps=500, restarts=N_RESTARTS) -> FitResult:
    """Weighted minimum DPD estimate; ``objective`` is the divergence at the fit."""
    if not gamma > 0:
        raise ValueError("gamma must be positive; use fit_mle for gamma = 0")
    qhat = _prepare(plan, counts)
    if init is None:
        init = grid_search_init(plan, counts)
    w = plan.weights
    s, tau = plan.s, plan.tau

    def neg_bw(x):
        return _kernels.neg_bw(x, s, tau, qhat, w, float(gamma))

    x, fx, it, conv, hist = _descend(neg_bw, as_param_array(init), tol, max_sweeps, restarts)
    if not conv:
        log.warning("WMDPDE (gamma=%g) coordinate descent did not converge in %d sweeps", gamma, max_sweeps)
    d = _wdpd(plan_cells(x, plan), qhat, w, gamma)
    const = float(w @ (qhat ** (gamma + 1.0)).sum(axis=1)) / gamma
    # divergence along the path, via D = const - (gamma + 1) B
    history = [const - (gamma + 1.0) * (-h) for h in hist]
    return FitResult(ModelParams.from_array(x), d, it, conv, gamma, history)


def fit(plan: TestPlan, counts: FailureCounts, gamma: float = 0.0, init=None, **kw) -> FitResult:
    if gamma == 0:
        return fit_mle(plan, counts, init, **kw)
    return fit_wmdpde(plan, counts, gamma, init, **kw)


# ----------------------------------------------------------------------
# asymptotics
# ----------------------------------------------------------------------

def sandwich_matrices(params, plan: TestPlan, gamma: float):
    """Return (Q, R) at ``params``; both are 4 x 4 and symmetric."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    cells, jac = plan_cells(params, plan, grad=True)
    w = plan.weights
    Q = np.einsum("i,ih,ijh,ikh->jk", w, powp(cells, gamma - 1.0), jac, jac)
    xi = np.einsum("ih,ijh->ij", powp(cells, gamma), jac)
    R = np.einsum("i,ih,ijh,ikh->jk", w, powp(cells, 2.0 * gamma - 1.0), jac, jac) - np.einsum(
        "i,ij,ik->jk", w, xi, xi
    )
    return (Q + Q.T) / 2.0, (R + R.T) / 2.0


def sandwich_covariance(params, plan: TestPlan, gamma: float, max_cond: float = 1e14) -> SandwichCovariance:
    Q, R = sandwich_matrices(params, plan, gamma)
    cond = np.linalg.cond(Q)
    if not np.isfinite(cond) or cond > max_cond:
        raise SingularMatrixError(f"Q is numerically singular (condition number {cond:.3e})")
    Qi = np.linalg.inv(Q)
    cov = Qi @ R @ Qi / plan.G
    return SandwichCovariance(Q, R, (cov + cov.T) / 2.0, plan.G)


def wald_ci(estimate, cov, level: float = 0.95) -> np.ndarray:
    """(4, 2) array of Wald intervals ``est -/+ z * se``."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if isinstance(estimate, FitResult):
        estimate = estimate.params
    if isinstance(cov, SandwichCovariance):
        cov = cov.cov
    x = as_param_array(estimate)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    z = norm.ppf((1.0 + level) / 2.0)
    return np.column_stack([x - z * se, x + z * se])


# ----------------------------------------------------------------------
# tuning parameter
# ----------------------------------------------------------------------

@dataclass
class TuningRow:
    gamma: float
    divergence: float
    trace: float
    phi: float
    params: ModelParams | None
    error: str | None = None


def select_tuning(plan: TestPlan, counts: FailureCounts, grid, C1: float = 0.5, C2: float = 0.5,
                  init=None):
    """Warwick-Jones selection: minimise C1 * D(fit) + C2 * tr(Q^-1 R Q^-1).

    Returns ``(best_gamma, rows)``; gammas whose fit or covariance fails are
    kept in ``rows`` with ``error`` set and excluded from the argmin.
    """
    if C1 < 0 or C2 < 0 or not math.isclose(C1 + C2, 1.0, abs_tol=1e-12):
        raise ValueError("C1 and C2 must be nonnegative and sum to 1")
    grid = [float(g) for g in grid]
    if not grid or any(not 0 < g <= 1 for g in grid):
        raise ValueError("tuning grid must be nonempty and inside (0, 1]")
    _prepare(plan, counts)
    if init is None:
        init = fit_mle(plan, counts).params
    rows = []
    for g in grid:
        try:
            res = fit_wmdpde(plan, counts, g, init=init)
            sw = sandwich_covariance(res.params, plan, g)
            tr = float(np.trace(sw.asymptotic))
            rows.append(TuningRow(g, res.objective, tr, C1 * res.objective + C2 * tr, res.params))
        except (ModelDomainError, np.linalg.LinAlgError, DataError) as exc:
            log.warning("tuning: gamma=%g skipped (%s)", g, exc)
            rows.append(TuningRow(g, np.nan, np.nan, np.nan, None, str(exc)))
    ok = [r for r in rows if r.error is None and np.isfinite(r.phi)]
    if not ok:
        raise RuntimeError("no tuning value produced a usable fit")
    best = min(ok, key=lambda r: r.phi)
    return best.gamma, rows
