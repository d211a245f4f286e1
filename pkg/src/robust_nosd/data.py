"""Count data containers, empirical frequencies, simulation and presets."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .model import ModelParams, TestPlan, as_param_array, plan_cells

# bump if the sampling scheme in simulate_counts changes; seeds are only
# portable within one version
SIMULATION_VERSION = 1


class DataError(ValueError):
    """Counts inconsistent with the plan, or data that cannot be fitted."""


@dataclass(frozen=True)
class FailureCounts:
    """Per-group failure counts ``n`` (I, L, 2) and survivors ``k`` (I,)."""

    n: np.ndarray
    k: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.n)
        k = np.asarray(self.k)
        if n.ndim != 3 or n.shape[2] != 2:
            raise DataError(f"failure counts must have shape (I, L, 2), got {n.shape}")
        if k.shape != (n.shape[0],):
            raise DataError("one survivor count per group is required")
        if np.any(n < 0) or np.any(k < 0):
            raise DataError("counts must be nonnegative")
        if np.any(n != np.round(n)) or np.any(k != np.round(k)):
            raise DataError("counts must be integers")
        object.__setattr__(self, "n", n.astype(np.int64))
        object.__setattr__(self, "k", k.astype(np.int64))

    @classmethod
    def from_cells(cls, cells) -> "FailureCounts":
        """Build from an (I, 2L + 1) array in package cell order."""
        cells = np.asarray(cells)
        I, m = cells.shape
        return cls(cells[:, :-1].reshape(I, (m - 1) // 2, 2), cells[:, -1])

    @cached_property
    def cells(self) -> np.ndarray:
        I = self.n.shape[0]
        return np.concatenate([self.n.reshape(I, -1), self.k[:, None]], axis=1)

    @property
    def total_failures(self) -> int:
        return int(self.n.sum())

    def check(self, plan: TestPlan) -> None:
        if self.n.shape[:2] != (plan.I, plan.L):
            raise DataError(f"counts shape {self.n.shape} does not match plan ({plan.I}, {plan.L}, 2)")
        totals = self.cells.sum(axis=1)
        bad = np.nonzero(totals != plan.g)[0]
        if bad.size:
            i = int(bad[0])
            raise DataError(f"group {i + 1}: survivors + failures = {totals[i]} but g = {int(plan.g[i])}")

    def require_failures(self) -> None:
        if self.total_failures <= 0:
            raise DataError("no failures observed; the model parameters are not estimable")


@dataclass(frozen=True)
class EmpiricalProbs:
    qhat: np.ndarray | None = None
    qtilde: np.ndarray | None = None


def empirical_probs(counts: FailureCounts, plan: TestPlan) -> np.ndarray:
    """Raw frequencies n/g and k/g as an (I, 2L + 1) array."""
    counts.check(plan)
    return counts.cells / plan.g[:, None]


def smoothed_probs(counts: FailureCounts, plan: TestPlan) -> np.ndarray:
    """Add-one frequencies (count + 1) / (g + 2L + 1); never zero."""
    counts.check(plan)
    return (counts.cells + 1.0) / (plan.g[:, None] + 2 * plan.L + 1.0)


def multinomial_cells(rng: np.random.Generator, size: int, probs: np.ndarray) -> np.ndarray:
    """One multinomial draw by sequential binomial conditioning."""
    out = np.zeros(len(probs), dtype=np.int64)
    remaining = int(size)
    mass = 1.0
    for h, p in enumerate(probs[:-1]):
        if remaining == 0:
            break
        frac = min(max(p / mass, 0.0), 1.0) if mass > 0 else 0.0
        x = int(rng.binomial(remaining, frac))
        out[h] = x
        remaining -= x
        mass -= p
    out[-1] += remaining
    return out


def simulate_counts(params, plan: TestPlan, seed=None) -> FailureCounts:
    """Draw one data set from the model; deterministic for a given seed."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    probs = plan_cells(params, plan)
    cells = np.stack([multinomial_cells(rng, int(g), p) for g, p in zip(plan.g, probs)])
    return FailureCounts.from_cells(cells)


def contaminate(params, shifts) -> ModelParams:
    return ModelParams.from_array(as_param_array(params) + np.asarray(shifts, dtype=float))


# ----------------------------------------------------------------------
# presets
# ----------------------------------------------------------------------

LAMBDA1 = ModelParams(-0.20, -0.06, 0.30, -0.17)
LAMBDA2 = ModelParams(-0.11, 0.11, -0.68, 0.09)
SHIFT1 = (-0.01, -0.01, 0.02, 0.02)
SHIFT2 = (0.009, 0.02, -0.02, -0.009)

SIM1_PLAN = TestPlan.from_arrays(
    [20, 25, 30], [1.5, 3.5, 5.5], [(0.1, 0.7, 1.6), (0.3, 1.0, 2.7), (0.3, 1.0, 3.0)]
)
SIM2_PLAN = TestPlan.from_arrays(
    [20, 25, 30], [2.0, 4.0, 6.0], [(0.1, 0.5, 1.0), (0.2, 0.7, 2.0), (0.3, 0.6, 1.0)]
)

# pancreatic cancer patients diagnosed 2016, age 50-55; stress = tumour size code,
# inspections in months, deaths as (cancer, other)
SEER_PLAN = TestPlan.from_arrays([69, 90, 76], [1.0, 2.0, 3.0], [(2, 10, 30), (1, 10, 34), (1, 8, 20)])
SEER_COUNTS = FailureCounts(
    n=np.array(
        [
            [[7, 1], [26, 0], [28, 2]],
            [[14, 1], [33, 1], [31, 3]],
            [[21, 1], [23, 1], [22, 1]],
        ]
    ),
    k=np.array([5, 7, 7]),
)
SEER_INIT = ModelParams(-0.6, 0.34, 0.5, 0.1)

PRESETS = {
    "sim1": {"plan": SIM1_PLAN, "params": LAMBDA1, "shifts": SHIFT1},
    "sim2": {"plan": SIM2_PLAN, "params": LAMBDA2, "shifts": SHIFT2},
}

FIXTURES = {"seer-pancreatic-2016": (SEER_PLAN, SEER_COUNTS)}


def load_fixture(name: str) -> tuple[TestPlan, FailureCounts]:
    try:
        return FIXTURES[name]
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; available: {sorted(FIXTURES)}") from None
