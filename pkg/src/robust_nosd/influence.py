"""Influence functions of the WMDPDE, the WRBE and the Bayes factor under
point contamination at a failure time and cause."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .divergence import powp
from .estimators import SingularMatrixError, sandwich_matrices
from .hmc import PosteriorChains
from .model import PARAM_NAMES, TestPlan, as_param_array, plan_cells
from .testing import EmptyRegionError

CSV_COLUMNS = ("t", "gamma", "estimator", "component", "value")


@dataclass(frozen=True)
class ContaminationPoint:
    """A failure at time ``t`` from ``cause`` (1 or 2).

    With ``group=None`` the same point contaminates every group; otherwise
    only group ``group`` (0-based) is touched.
    """

    t: float
    cause: int = 1
    group: int | None = None

    def __post_init__(self):
        if not (np.isfinite(self.t) and self.t >= 0):
            raise ValueError("contamination time must be finite and nonnegative")
        if self.cause not in (1, 2):
            raise ValueError("cause must be 1 or 2")


def indicator_cell(point: ContaminationPoint, plan: TestPlan) -> np.ndarray:
    """Cell index hit in each group, or -1 for an uncontaminated group.

    Intervals are right-closed, (tau_{l-1}, tau_l]; a time beyond the last
    inspection lands in the survival cell.
    """
    L = plan.L
    out = np.full(plan.I, -1, dtype=np.int64)
    groups = range(plan.I) if point.group is None else [point.group]
    for i in groups:
        if not 0 <= i < plan.I:
            raise IndexError(f"group {i} outside plan with {plan.I} groups")
        l = int(np.searchsorted(plan.tau[i, 1:], point.t, side="left"))
        out[i] = 2 * L if l >= L else 2 * l + (point.cause - 1)
    return out


def _delta_minus_p(cells, hit):
    """delta - p, with delta = p (no contamination) where ``hit`` is -1."""
    d = -cells.copy()
    rows = np.nonzero(hit >= 0)[0]
    d[rows, hit[rows]] += 1.0
    d[hit < 0] = 0.0
    return d


def if_wmdpde_cells(params, plan: TestPlan, gamma: float, hit) -> np.ndarray:
    """WMDPDE influence for an explicit per-group cell assignment ``hit``."""
    cells, jac = plan_cells(params, plan, grad=True)
    Q, _ = sandwich_matrices(params, plan, gamma)
    d = _delta_minus_p(cells, np.asarray(hit))
    score = np.einsum("i,ih,ijh->j", plan.weights, d * powp(cells, gamma - 1.0), jac)
    try:
        return np.linalg.solve(Q, score)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"Q is singular: {exc}") from None


def if_wmdpde(point: ContaminationPoint, params, plan: TestPlan, gamma: float) -> np.ndarray:
    """Influence of a point mass on the WMDPDE functional (4-vector)."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    return if_wmdpde_cells(params, plan, gamma, indicator_cell(point, plan))


def _draw_cells(draws, plan):
    out = np.stack([_kernels.cells(np.ascontiguousarray(x), plan.s, plan.tau) for x in draws])
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("cell probabilities overflow at some posterior draw")
    return out


class _XGamma:
    """X_gamma(Lambda; t) over a fixed set of draws, reused across a t-grid."""

    def __init__(self, draws, plan: TestPlan, gamma: float):
        if not gamma > 0:
            raise ValueError("gamma must be positive")
        self.draws = np.asarray(draws, dtype=float).reshape(-1, 4)
        if self.draws.shape[0] == 0:
            raise ValueError("no draws")
        self.plan = plan
        self.gamma = gamma
        cells = _draw_cells(self.draws, plan)
        self.pg = powp(cells, gamma)  # (n, I, M)
        self.mean_term = np.sum(cells * self.pg, axis=2)  # sum_h p^(gamma+1), (n, I)

    def __call__(self, point: ContaminationPoint) -> np.ndarray:
        hit = indicator_cell(point, self.plan)
        rows = np.nonzero(hit >= 0)[0]
        per_group = self.pg[:, rows, hit[rows]] - self.mean_term[:, rows]
        return per_group @ self.plan.weights[rows] / self.gamma


def _cov_with(draws, x):
    xc = x - x.mean()
    dc = draws - draws.mean(axis=0)
    n = len(x)
    return dc.T @ xc / (n - 1) if n > 1 else np.zeros(draws.shape[1])


def _flat(chains):
    return chains.flat if isinstance(chains, PosteriorChains) else np.asarray(chains, dtype=float).reshape(-1, 4)


def if_wrbe(point: ContaminationPoint, chains, plan: TestPlan, gamma: float) -> np.ndarray:
    """Posterior covariance between Lambda and X_gamma(Lambda; t)."""
    draws = _flat(chains)
    return _cov_with(draws, _XGamma(draws, plan, gamma)(point))


def if_bayes_factor(point: ContaminationPoint, draws, plan: TestPlan, hyp, gamma: float, bf01: float) -> float:
    """BF01 times the gap in E[X_gamma] between the null ball and its complement.

    Expectations use the posterior ``draws`` split by the ball of ``hyp``.
    """
    draws = _flat(draws)
    inside = hyp.inside(draws)
    if inside.all() or not inside.any():
        raise EmptyRegionError("influence of the Bayes factor needs posterior draws on both sides of the ball")
    x = _XGamma(draws, plan, gamma)(point)
    return float(bf01 * (x[inside].mean() - x[~inside].mean()))


# ----------------------------------------------------------------------
# curves
# ----------------------------------------------------------------------

def default_grid(plan: TestPlan, n: int = 201) -> np.ndarray:
    return np.linspace(0.0, 1.5 * float(plan.tau[:, -1].max()), n)


@dataclass
class IfCurve:
    t: np.ndarray
    values: np.ndarray  # (n, 4), or (n,) for the Bayes factor
    gamma: float
    estimator: str
    cause: int = 1

    @property
    def components(self) -> tuple:
        return PARAM_NAMES if self.values.ndim == 2 else ("bf01",)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def rows(self):
        vals = self.values if self.values.ndim == 2 else self.values[:, None]
        for t, v in zip(self.t, vals):
            for name, x in zip(self.components, v):
                yield float(t), self.gamma, self.estimator, name, float(x)


def wmdpde_curve(params, plan: TestPlan, gamma: float, grid=None, cause: int = 1, group=None) -> IfCurve:
    grid = default_grid(plan) if grid is None else np.asarray(grid, dtype=float)
    x = as_param_array(params)
    # the matrix solve is shared; only delta changes along the grid
    cells, jac = plan_cells(x, plan, grad=True)
    Q, _ = sandwich_matrices(x, plan, gamma)
    if np.linalg.cond(Q) > 1e14:
        raise SingularMatrixError("Q is numerically singular")
    scaled = powp(cells, gamma - 1.0)
    vals = []
    for t in grid:
        d = _delta_minus_p(cells, indicator_cell(ContaminationPoint(t, cause, group), plan))
        vals.append(np.einsum("i,ih,ijh->j", plan.weights, d * scaled, jac))
    return IfCurve(grid, np.linalg.solve(Q, np.array(vals).T).T, gamma, "WMDPDE", cause)


def wrbe_curve(chains, plan: TestPlan, gamma: float, grid=None, cause: int = 1, group=None) -> IfCurve:
    grid = default_grid(plan) if grid is None else np.asarray(grid, dtype=float)
    draws = _flat(chains)
    X = _XGamma(draws, plan, gamma)
    vals = np.array([_cov_with(draws, X(ContaminationPoint(t, cause, group))) for t in grid])
    return IfCurve(grid, vals, gamma, "WRBE", cause)


def bayes_factor_curve(draws, plan: TestPlan, hyp, gamma: float, bf01: float, grid=None, cause: int = 1,
                       group=None) -> IfCurve:
    grid = default_grid(plan) if grid is None else np.asarray(grid, dtype=float)
    draws = _flat(draws)
    inside = hyp.inside(draws)
    if inside.all() or not inside.any():
        raise EmptyRegionError("influence of the Bayes factor needs posterior draws on both sides of the ball")
    X = _XGamma(draws, plan, gamma)
    vals = []
    for t in grid:
        x = X(ContaminationPoint(t, cause, group))
        vals.append(bf01 * (x[inside].mean() - x[~inside].mean()))
    return IfCurve(grid, np.array(vals), gamma, "BF01", cause)


def if_csv_text(curves) -> str:
    """Long-format CSV with columns t, gamma, estimator, component, value."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for c in curves:
        for t, g, est, comp, v in c.rows():
            w.writerow([repr(t), repr(g), est, comp, repr(v)])
    return buf.getvalue()


def write_if_csv(curves, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(if_csv_text(curves))
