import numpy as np
import pytest

from robust_nosd.data import SEER_COUNTS, SEER_PLAN, SIM1_PLAN, LAMBDA1
from robust_nosd.model import GroupDesign, TestPlan


def random_plan(rng, I=None, L=None):
    I = I or int(rng.integers(1, 5))
    L = L or int(rng.integers(1, 5))
    groups = []
    for _ in range(I):
        tau = np.cumsum(rng.uniform(0.05, 1.5, size=L))
        groups.append(GroupDesign(int(rng.integers(5, 80)), float(rng.uniform(0.0, 3.0)), tuple(tau)))
    return TestPlan(tuple(groups))


def random_params(rng, scale=0.6):
    return rng.uniform(-scale, scale, size=4)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def sim1():
    return SIM1_PLAN, LAMBDA1


@pytest.fixture
def seer():
    return SEER_PLAN, SEER_COUNTS


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = {}


def record_criterion(number, ok, detail):
    line = f"CRITERION {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
