"""Two-parameter Lindley lifetimes under two independent competing risks.

Cell layout used throughout the package: for a group with ``L`` inspection
times the probability vector has ``2L + 1`` entries ordered as

    (p_11, p_12, p_21, p_22, ..., p_L1, p_L2, p_0)

i.e. failure cells interval-major / cause-minor, survival cell last.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

# floor applied to probabilities before logs / negative powers only
EPS_P = 1e-300

PARAM_NAMES = ("a1", "b1", "a2", "b2")


class ModelDomainError(ValueError):
    """Raised when parameters induce an invalid Lindley law."""


@dataclass(frozen=True)
class ModelParams:
    """Log-linear link coefficients (a1, b1, a2, b2)."""

    a1: float
    b1: float
    a2: float
    b2: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ModelDomainError(f"non-finite parameters: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.a1, self.b1, self.a2, self.b2], dtype=float)

    @classmethod
    def from_array(cls, x: Iterable[float]) -> "ModelParams":
        a1, b1, a2, b2 = (float(v) for v in x)
        return cls(a1, b1, a2, b2)

    def __iter__(self):
        return iter(self.as_array())


def as_param_array(params) -> np.ndarray:
    """Accept ``ModelParams`` or any length-4 sequence; return a float array."""
    if isinstance(params, ModelParams):
        return params.as_array()
    x = np.asarray(params, dtype=float).reshape(-1)
    if x.shape != (4,):
        raise ValueError(f"expected 4 parameters, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class GroupDesign:
    """One test group: ``g`` devices at stress ``s`` inspected at ``tau``."""

    g: int
    s: float
    tau: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "tau", tuple(float(t) for t in self.tau))
        if int(self.g) != self.g or self.g < 1:
            raise ValueError(f"group size must be a positive integer, got {self.g}")
        object.__setattr__(self, "g", int(self.g))
        if not np.isfinite(self.s):
            raise ValueError("stress level must be finite")
        tau = np.asarray(self.tau)
        if tau.size == 0 or tau[0] <= 0 or np.any(np.diff(tau) <= 0):
            raise ValueError(f"inspection times must be positive and strictly increasing: {self.tau}")

    @property
    def L(self) -> int:
        return len(self.tau)


@dataclass(frozen=True)
class TestPlan:
    """Ordered collection of groups sharing a common number of inspections."""

    groups: tuple[GroupDesign, ...]

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        groups = tuple(self.groups)
        object.__setattr__(self, "groups", groups)
        if not groups:
            raise ValueError("a test plan needs at least one group")
        if len({grp.L for grp in groups}) != 1:
            raise ValueError("all groups must share the same number of inspection times")

    @classmethod
    def from_arrays(cls, g: Sequence[int], s: Sequence[float], tau) -> "TestPlan":
        return cls(tuple(GroupDesign(gi, si, ti) for gi, si, ti in zip(g, s, tau)))

    @property
    def I(self) -> int:  # noqa: E743
        return len(self.groups)

    @property
    def L(self) -> int:
        return self.groups[0].L

    @property
    def n_cells(self) -> int:
        return 2 * self.L + 1

    @cached_property
    def g(self) -> np.ndarray:
        return np.array([grp.g for grp in self.groups], dtype=float)

    @property
    def G(self) -> float:
        return float(self.g.sum())

    @cached_property
    def weights(self) -> np.ndarray:
        return self.g / self.g.sum()

    @cached_property
    def s(self) -> np.ndarray:
        return np.array([grp.s for grp in self.groups], dtype=float)

    @cached_property
    def tau(self) -> np.ndarray:
        """(I, L + 1) inspection grid with the implicit leading zero."""
        return np.array([(0.0,) + grp.tau for grp in self.groups], dtype=float)

    def with_sizes(self, g: Sequence[int]) -> "TestPlan":
        return TestPlan(tuple(GroupDesign(gi, grp.s, grp.tau) for gi, grp in zip(g, self.groups)))


@dataclass(frozen=True)
class CellProbabilities:
    p0: float
    p: np.ndarray  # (L, 2)

    def as_vector(self) -> np.ndarray:
        return np.append(self.p.reshape(-1), self.p0)


def _check_links(*vals):
    for v in vals:
        if not np.all(np.isfinite(v)):
            raise ModelDomainError("stress link overflowed; parameters outside the usable domain")


def stress_link(params, s):
    """Return ``(alpha1, theta1, alpha2, theta2)`` at stress level(s) ``s``."""
    a1, b1, a2, b2 = as_param_array(params)
    s = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(s)):
        raise ValueError("stress must be finite")
    with np.errstate(over="ignore"):
        out = (np.exp(a1 * s), np.exp(b1 * s), np.exp(a2 * s), np.exp(b2 * s))
    _check_links(*out)
    return out


def lindley_cdf(t, alpha, theta):
    """CDF of the two-parameter Lindley law, ``t >= 0``."""
    alpha = np.asarray(alpha, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0) or np.any(alpha + theta <= 0):
        raise ModelDomainError("Lindley law needs theta > 0 and alpha + theta > 0")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    at1 = alpha * theta + 1.0
    with np.errstate(invalid="ignore"):
        sf = (at1 + theta * t) / at1 * np.exp(-theta * t)
    sf = np.where(np.isinf(t), 0.0, sf)
    return 1.0 - sf


def lindley_sf(t, alpha, theta):
    return 1.0 - lindley_cdf(t, alpha, theta)


def lindley_pdf(t, alpha, theta):
    alpha = np.asarray(alpha, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0) or np.any(alpha + theta <= 0):
        raise ModelDomainError("Lindley law needs theta > 0 and alpha + theta > 0")
    t = np.asarray(t, dtype=float)
    return theta**2 / (alpha * theta + 1.0) * (alpha + t) * np.exp(-theta * t)


# ----------------------------------------------------------------------
# closed-form cell probabilities
# ----------------------------------------------------------------------

def _cause_cells(ac, tc, ao, to, tau, grad):
    """Interval probabilities P(t_{l-1} < T_c <= t_l, T_o > T_c).

    Arrays are (I,) for the link values and (I, L + 1) for ``tau``.  Returns
    (I, L) probabilities and, when requested, (4, I, L) partials with respect
    to (ac, tc, ao, to).
    """
    ac, tc, ao, to = (x[:, None] for x in (ac, tc, ao, to))
    th = tc + to
    dc = ac * tc + 1.0
    do = ao * to + 1.0
    k = tc**2 / (dc * do)
    # integrand: (ac + t)(1 + ao*to + to*t) e^{-th t} = (A t^2 + B t + C) e^{-th t}
    A = to
    B = 1.0 + to * (ac + ao)
    C = ac * (1.0 + ao * to)
    e = np.exp(-th * tau)
    poly = A * (th**2 * tau**2 + 2.0 * th * tau + 2.0) + B * th * (th * tau + 1.0) + C * th**2
    E = e * poly / th**3
    p = k * (E[:, :-1] - E[:, 1:])
    if not grad:
        return p, None

    dpoly_dth = A * (2.0 * th * tau**2 + 2.0 * tau) + B * (2.0 * th * tau + 1.0) + 2.0 * C * th
    # d/d(th) of E holding A, B, C fixed
    dE_dth = E * (-tau - 3.0 / th) + e * dpoly_dth / th**3
    base = e / th**3
    dE_dA = base * (th**2 * tau**2 + 2.0 * th * tau + 2.0)
    dE_dB = base * th * (th * tau + 1.0)
    dE_dC = base * th**2

    dE = np.empty((4,) + E.shape)
    dE[0] = dE_dB * to + dE_dC * (1.0 + ao * to)  # ac
    dE[1] = dE_dth  # tc
    dE[2] = dE_dB * to + dE_dC * ac * to  # ao
    dE[3] = dE_dth + dE_dA + dE_dB * (ac + ao) + dE_dC * ac * ao  # to

    dk = np.empty((4,) + k.shape)
    dk[0] = -k * tc / dc
    dk[1] = k * (2.0 / tc - ac / dc)
    dk[2] = -k * to / do
    dk[3] = -k * ao / do

    diff = E[:, :-1] - E[:, 1:]
    dp = dk * diff + k * (dE[:, :, :-1] - dE[:, :, 1:])
    return p, dp


def _survival(alpha, theta, t):
    d = alpha * theta + 1.0
    e = np.exp(-theta * t)
    sf = (1.0 + theta * t / d) * e
    dsf_da = -(theta**2) * t / d**2 * e
    dsf_dt = e * (t / d**2 - t * (1.0 + theta * t / d))
    return sf, dsf_da, dsf_dt


def plan_cells(params, plan: TestPlan, grad: bool = False):
    """Cell probabilities for every group of ``plan``.

    Returns an (I, 2L + 1) array, and with ``grad=True`` also the
    (I, 4, 2L + 1) Jacobian with respect to (a1, b1, a2, b2).
    """
    al1, th1, al2, th2 = stress_link(params, plan.s)
    if np.any(th1 <= 0) or np.any(th2 <= 0) or np.any(al1 + th1 <= 0) or np.any(al2 + th2 <= 0):
        raise ModelDomainError("induced Lindley parameters invalid")
    tau = plan.tau
    I, L = plan.I, plan.L
    p1, dp1 = _cause_cells(al1, th1, al2, th2, tau, grad)
    p2, dp2 = _cause_cells(al2, th2, al1, th1, tau, grad)
    tl = tau[:, -1]
    s1, ds1a, ds1t = _survival(al1, th1, tl)
    s2, ds2a, ds2t = _survival(al2, th2, tl)

    cells = np.empty((I, 2 * L + 1))
    cells[:, 0:2 * L:2] = p1
    cells[:, 1:2 * L:2] = p2
    cells[:, -1] = s1 * s2
    if not grad:
        return cells

    # natural-parameter partials, ordered (al1, th1, al2, th2), shape (I, 4, ncell)
    dnat = np.empty((I, 4, 2 * L + 1))
    dnat[:, :, 0:2 * L:2] = np.transpose(dp1, (1, 0, 2))
    # dp2 is w.r.t. (al2, th2, al1, th1)
    dnat[:, :, 1:2 * L:2] = np.transpose(dp2[[2, 3, 0, 1]], (1, 0, 2))
    dnat[:, 0, -1] = ds1a * s2
    dnat[:, 1, -1] = ds1t * s2
    dnat[:, 2, -1] = s1 * ds2a
    dnat[:, 3, -1] = s1 * ds2t
    # chain rule through the exponential links
    s = plan.s
    chain = np.stack([s * al1, s * th1, s * al2, s * th2], axis=1)
    jac = dnat * chain[:, :, None]
    return cells, jac


def cell_probabilities(params, design: GroupDesign) -> CellProbabilities:
    """Cell probabilities of a single group."""
    cells = plan_cells(params, TestPlan((design,)))[0]
    return CellProbabilities(p0=float(cells[-1]), p=cells[:-1].reshape(design.L, 2))


def cell_prob_gradient(params, design: GroupDesign) -> np.ndarray:
    """4 x (2L + 1) Jacobian of the cell vector (survival column last)."""
    _, jac = plan_cells(params, TestPlan((design,)), grad=True)
    return jac[0]


def clamp(p):
    return np.maximum(p, EPS_P)
