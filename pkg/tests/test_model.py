import math

import numpy as np
import pytest
from scipy.integrate import quad

from robust_nosd.model import (
    GroupDesign,
    ModelDomainError,
    ModelParams,
    TestPlan,
    cell_prob_gradient,
    cell_probabilities,
    lindley_cdf,
    lindley_pdf,
    lindley_sf,
    plan_cells,
    stress_link,
)
from robust_nosd import _kernels

from conftest import random_params, random_plan

LAM1 = (-0.20, -0.06, 0.30, -0.17)
SIM1_G1 = GroupDesign(20, 1.5, (0.1, 0.7, 1.6))


def quad_cells(params, design):
    """Cell probabilities by direct numerical integration of f_c * S_o."""
    a1, t1, a2, t2 = stress_link(params, design.s)
    tau = (0.0,) + design.tau
    out = []
    for lo, hi in zip(tau[:-1], tau[1:]):
        for (ac, tc, ao, to) in ((a1, t1, a2, t2), (a2, t2, a1, t1)):
            val, _ = quad(lambda t: lindley_pdf(t, ac, tc) * lindley_sf(t, ao, to), lo, hi,
                          epsabs=1e-14, epsrel=1e-12)
            out.append(val)
    out.append(lindley_sf(tau[-1], a1, t1) * lindley_sf(tau[-1], a2, t2))
    return np.array(out)


def fd_jacobian(params, design, h=1e-6):
    x = np.asarray(params, float)
    rows = []
    for e in np.eye(4):
        hi = cell_probabilities(x + h * e, design).as_vector()
        lo = cell_probabilities(x - h * e, design).as_vector()
        rows.append((hi - lo) / (2 * h))
    return np.array(rows)


class TestStressLink:
    def test_zero_coefficients(self):
        assert stress_link((0, 0, 0, 0), 5.0) == (1.0, 1.0, 1.0, 1.0)

    def test_sim1_group1(self):
        a1, t1, a2, t2 = stress_link(LAM1, 1.5)
        assert a1 == pytest.approx(math.exp(-0.30), rel=1e-15)
        assert t1 == pytest.approx(math.exp(-0.09), rel=1e-15)
        assert a2 == pytest.approx(math.exp(0.45))
        assert t2 == pytest.approx(math.exp(-0.255))

    def test_zero_stress(self, rng):
        assert stress_link(random_params(rng, 5), 0.0) == (1.0, 1.0, 1.0, 1.0)

    def test_overflow_is_domain_error(self):
        with pytest.raises(ModelDomainError):
            stress_link((800.0, 0, 0, 0), 1.0)

    def test_nonfinite_params_rejected(self):
        with pytest.raises(ModelDomainError):
            ModelParams(np.nan, 0, 0, 0)


class TestLindley:
    def test_cdf_at_zero(self):
        assert lindley_cdf(0.0, 1.0, 1.0) == 0.0

    def test_cdf_limit(self):
        assert lindley_cdf(np.inf, 0.7, 2.0) == 1.0
        assert lindley_cdf(60.0, 0.7, 2.0) == pytest.approx(1.0, abs=1e-40)

    def test_cdf_matches_integrated_pdf(self):
        val, _ = quad(lambda t: lindley_pdf(t, 1.0, 1.0), 0.0, 1.0, epsabs=1e-14)
        assert lindley_cdf(1.0, 1.0, 1.0) == pytest.approx(val, abs=1e-13)

    def test_cdf_nondecreasing(self):
        t = np.linspace(0, 20, 500)
        assert np.all(np.diff(lindley_cdf(t, 0.3, 0.8)) >= 0)

    @pytest.mark.parametrize("alpha,theta", [(1.0, 0.0), (1.0, -1.0), (-2.0, 1.0)])
    def test_domain(self, alpha, theta):
        with pytest.raises(ModelDomainError):
            lindley_cdf(1.0, alpha, theta)


class TestCellProbabilities:
    def test_partition_of_unity(self, rng):
        for _ in range(1000):
            plan = random_plan(rng)
            cells = plan_cells(random_params(rng), plan)
            assert np.max(np.abs(1.0 - cells.sum(axis=1))) < 1e-10
            assert np.all(cells >= 0) and np.all(cells <= 1)

    def test_cause_symmetry(self, rng):
        a, b = rng.uniform(-0.5, 0.5, 2)
        cp = cell_probabilities((a, b, a, b), SIM1_G1)
        np.testing.assert_allclose(cp.p[:, 0], cp.p[:, 1], rtol=1e-13)

    def test_sim1_group1_against_quadrature(self):
        np.testing.assert_allclose(cell_probabilities(LAM1, SIM1_G1).as_vector(), quad_cells(LAM1, SIM1_G1),
                                   atol=1e-8, rtol=0)

    def test_random_against_quadrature(self, rng):
        for _ in range(50):
            plan = random_plan(rng, I=1)
            x = random_params(rng)
            np.testing.assert_allclose(cell_probabilities(x, plan.groups[0]).as_vector(),
                                       quad_cells(x, plan.groups[0]), atol=1e-8, rtol=0)

    def test_survival_decreases_with_last_inspection(self):
        p0 = [cell_probabilities(LAM1, GroupDesign(20, 1.5, (0.1, 0.7, t))).p0 for t in (1.0, 1.6, 2.5, 4.0)]
        assert np.all(np.diff(p0) < 0)

    def test_compiled_kernel_agrees(self, rng):
        for _ in range(100):
            plan = random_plan(rng)
            x = random_params(rng)
            np.testing.assert_allclose(_kernels.cells(x, plan.s, plan.tau), plan_cells(x, plan),
                                       rtol=1e-12, atol=1e-15)


class TestGradient:
    def test_columns_sum_to_zero(self, rng):
        for _ in range(50):
            plan = random_plan(rng, I=1)
            jac = cell_prob_gradient(random_params(rng), plan.groups[0])
            assert np.max(np.abs(jac.sum(axis=1))) < 1e-10

    def test_sim1_group1_finite_differences(self):
        jac = cell_prob_gradient(LAM1, SIM1_G1)
        fd = fd_jacobian(LAM1, SIM1_G1)
        rel = np.abs(jac - fd) / np.maximum(np.abs(jac), 1e-6)
        assert rel.max() < 1e-5

    def test_cause_symmetry(self):
        jac = cell_prob_gradient((0.2, -0.1, 0.2, -0.1), SIM1_G1)
        np.testing.assert_allclose(jac[0, 0:6:2], jac[2, 1:6:2], rtol=1e-12)

    def test_plan_jacobian_shape(self, sim1):
        plan, lam = sim1
        cells, jac = plan_cells(lam, plan, grad=True)
        assert cells.shape == (3, 7) and jac.shape == (3, 4, 7)


class TestDesign:
    def test_rejects_unsorted_times(self):
        with pytest.raises(ValueError):
            GroupDesign(10, 1.0, (0.5, 0.2))

    def test_rejects_zero_devices(self):
        with pytest.raises(ValueError):
            GroupDesign(0, 1.0, (0.5,))

    def test_plan_requires_common_L(self):
        with pytest.raises(ValueError):
            TestPlan((GroupDesign(5, 1.0, (1.0,)), GroupDesign(5, 1.0, (1.0, 2.0))))
