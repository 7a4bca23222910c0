import math

import numpy as np
import pytest

from bicens.errors import ContractViolationError, InvalidArgumentError, NonFiniteLikelihoodError
from bicens.sieve_model import (
    SHAPE_CHECKS,
    Dataset,
    Observation,
    QuadrantDesign,
    SieveSpec,
    ThetaVector,
    cdf_eval,
    cdf_grid,
    check_feasible,
    design_row,
    loglik,
    loglik_grad,
    loglik_hess,
    marginal_eval,
    shape_violations,
)
from bicens.spline_basis import KnotVector, ispline_eval

from conftest import random_interior_theta


def straight_line_loglik(spec, theta, data):
    """Four-quadrant log-likelihood summed one observation at a time."""
    total = 0.0
    for c1, c2, d1, d2 in zip(data.c1, data.c2, data.d1, data.d2):
        F, F1, F2 = cdf_eval(spec, theta, float(c1), float(c2))
        if d1 and d2:
            total += math.log(F)
        elif d1:
            total += math.log(F1 - F)
        elif d2:
            total += math.log(F2 - F)
        else:
            total += math.log(1.0 - F1 - F2 + F)
    return total


@pytest.fixture
def linear_spec():
    # Order 2 without interior knots: I_0 = 1 and I_1(s) = s / 5.
    return SieveSpec(KnotVector(2, [], 0.0, 5.0), KnotVector(2, [], 0.0, 5.0))


class TestThetaVector:
    def test_flat_layout(self):
        th = ThetaVector([[1, 2], [3, 4]], [5, 6], [7, 8])
        np.testing.assert_array_equal(th.flat(), [1, 2, 3, 4, 5, 6, 7, 8])
        back = ThetaVector.from_flat((2, 2), th.flat())
        np.testing.assert_array_equal(back.eta, th.eta)

    def test_uniform(self, small_spec):
        th = ThetaVector.uniform(small_spec)
        assert th.flat().size == small_spec.dim == 35
        assert th.flat().sum() == pytest.approx(0.9)


class TestCheckFeasible:
    def test_zero_is_feasible(self):
        assert check_feasible(np.zeros(8))

    def test_sum_one_boundary(self):
        assert check_feasible(np.full(8, 1 / 8))

    def test_negative_coordinate_reported(self):
        x = np.full(8, 0.1)
        x[3] = -1e-6
        rep = check_feasible(x)
        assert not rep and rep.violations == (3,)

    def test_sum_violation_reported_as_index_d(self):
        rep = check_feasible(np.full(4, 0.3))
        assert not rep and rep.violations == (4,)

    def test_within_tolerance(self):
        assert check_feasible(np.array([-5e-13, 0.5]))


class TestDesignRow:
    def test_upper_corner(self, small_spec):
        row = design_row(small_spec, Observation(5.0, 5.0, 1, 1))
        pq = small_spec.p * small_spec.q
        np.testing.assert_allclose(row.a_F[:pq], 1.0)
        np.testing.assert_allclose(row.a_F[pq:], 0.0)
        np.testing.assert_allclose(row.a_1[: pq + small_spec.p], 1.0)
        np.testing.assert_allclose(row.a_1[pq + small_spec.p:], 0.0)

    def test_lower_corner_keeps_constant_basis(self, small_spec):
        # Only I_0 survives at the left boundary, so only the (0, *) and (*, 0)
        # terms remain.
        row = design_row(small_spec, Observation(0.0, 0.0, 1, 1))
        p, q = small_spec.p, small_spec.q
        expected = np.zeros(small_spec.dim)
        expected[0] = 1.0
        np.testing.assert_array_equal(row.a_F, expected)
        # a_1 carries the whole eta row 0 plus omega_0.
        assert row.a_1.sum() == q + 1 and row.a_2.sum() == p + 1
        assert row.a_1[p * q] == 1.0 and row.a_2[p * q + p] == 1.0

    def test_products_of_basis_values(self):
        spec = SieveSpec(KnotVector(2, [2.0], 0.0, 5.0), KnotVector(2, [3.0], 0.0, 5.0))
        s, t = 1.0, 4.0
        row = design_row(spec, Observation(s, t, 0, 0))
        for i in range(spec.p):
            for j in range(spec.q):
                want = ispline_eval(spec.basis1, None, i, s) * ispline_eval(spec.basis2, None, j, t)
                assert row.a_F[i * spec.q + j] == pytest.approx(want, abs=1e-15)

    def test_out_of_domain(self, small_spec):
        with pytest.raises(InvalidArgumentError):
            design_row(small_spec, Observation(5.5, 1.0, 0, 0))


class TestCdfEval:
    def test_zero_theta(self, small_spec):
        assert cdf_eval(small_spec, np.zeros(small_spec.dim), 2.0, 3.0) == (0.0, 0.0, 0.0)

    def test_upper_corner(self, small_spec, rng):
        th = ThetaVector.from_flat(small_spec, random_interior_theta(rng, small_spec.dim))
        F, F1, F2 = cdf_eval(small_spec, th, 5.0, 5.0)
        assert F == pytest.approx(th.eta.sum(), abs=1e-14)
        assert F1 == pytest.approx(th.eta.sum() + th.omega.sum(), abs=1e-14)
        assert F2 == pytest.approx(th.eta.sum() + th.pi.sum(), abs=1e-14)

    def test_single_eta(self, small_spec):
        th = ThetaVector.from_flat(small_spec, np.zeros(small_spec.dim))
        th.eta[1, 1] = 0.5
        s, t = 1.3, 3.1
        F, _, _ = cdf_eval(small_spec, th, s, t)
        want = 0.5 * ispline_eval(small_spec.basis1, None, 1, s) * ispline_eval(small_spec.basis2, None, 1, t)
        assert F == pytest.approx(want, abs=1e-15)

    def test_infeasible_theta(self, small_spec):
        x = np.zeros(small_spec.dim)
        x[0] = -0.1
        with pytest.raises(ContractViolationError):
            cdf_eval(small_spec, x, 1.0, 1.0)

    def test_bounds(self, small_spec, rng):
        th = random_interior_theta(rng, small_spec.dim, total=1.0)
        s, t = rng.uniform(0, 5, 200), rng.uniform(0, 5, 200)
        F, F1, F2 = cdf_eval(small_spec, th, s, t)
        tol = 1e-14
        assert np.all(F >= -tol) and np.all(F <= F1 + tol) and np.all(F <= F2 + tol)
        assert np.all(F1 <= 1 + tol) and np.all(F2 <= 1 + tol)
        assert np.all(F1 + F2 - F <= 1 + tol)

    def test_marginals_match(self, small_spec, rng):
        th = random_interior_theta(rng, small_spec.dim)
        s = rng.uniform(0, 5, 10)
        _, F1, F2 = cdf_eval(small_spec, th, s, s)
        np.testing.assert_allclose(marginal_eval(small_spec, th, s=s), F1, atol=1e-15)
        np.testing.assert_allclose(marginal_eval(small_spec, th, t=s), F2, atol=1e-15)


class TestAffineConsistency:
    def test_quadrant_probabilities(self, small_spec, rng):
        th = random_interior_theta(rng, small_spec.dim)
        for _ in range(100):
            s, t = rng.uniform(0, 5, 2)
            F, F1, F2 = cdf_eval(small_spec, th, s, t)
            quad = {(1, 1): F, (1, 0): F1 - F, (0, 1): F2 - F, (0, 0): 1 - F1 - F2 + F}
            for (d1, d2), want in quad.items():
                g, c = design_row(small_spec, Observation(s, t, d1, d2)).realized()
                assert abs(g @ th + c - want) < 1e-13


class TestLoglik:
    def test_single_observation_half(self, linear_spec):
        # F(5, 5) = sum(eta) = 0.5.
        th = np.zeros(linear_spec.dim)
        th[0] = 0.5
        data = Dataset([5.0], [5.0], [1], [1])
        assert loglik(linear_spec, th, data) == pytest.approx(math.log(0.5), abs=1e-15)

    def test_additivity(self, small_spec, rng):
        th = random_interior_theta(rng, small_spec.dim)
        one = Dataset([1.2], [3.4], [1], [0])
        two = Dataset([1.2, 1.2], [3.4, 3.4], [1, 1], [0, 0])
        assert loglik(small_spec, th, two) == 2 * loglik(small_spec, th, one)

    def test_matches_straight_line_oracle(self, linear_spec, rng):
        data = Dataset(rng.uniform(0, 5, 5), rng.uniform(0, 5, 5), [1, 0, 1, 0, 1], [1, 1, 0, 0, 0])
        for _ in range(10):
            th = random_interior_theta(rng, linear_spec.dim)
            want = straight_line_loglik(linear_spec, th, data)
            assert loglik(linear_spec, th, data) == pytest.approx(want, rel=1e-13)

    def test_matches_oracle_cubic(self, small_spec, sim_data, rng):
        th = random_interior_theta(rng, small_spec.dim)
        want = straight_line_loglik(small_spec, th, sim_data)
        assert loglik(small_spec, th, sim_data) == pytest.approx(want, rel=1e-13)

    def test_zero_probability_reports_index(self, small_spec):
        data = Dataset([1.0, 2.0], [1.0, 2.0], [0, 1], [0, 1])
        with pytest.raises(NonFiniteLikelihoodError) as info:
            loglik(small_spec, np.zeros(small_spec.dim), data)
        assert info.value.index == 1


class TestGradient:
    def test_constant_probabilities_give_zero(self):
        design = QuadrantDesign(np.zeros((3, 4)), np.ones(3))
        np.testing.assert_array_equal(design.grad(np.full(4, 0.1)), np.zeros(4))

    def test_single_joint_observation(self, small_spec, rng):
        th = random_interior_theta(rng, small_spec.dim)
        obs = Observation(2.2, 1.7, 1, 1)
        row = design_row(small_spec, obs)
        F = row.a_F @ th
        g = loglik_grad(small_spec, th, Dataset.from_observations([obs]))
        np.testing.assert_allclose(g, row.a_F / F, rtol=1e-14)

    def test_central_differences(self, small_spec, sim_data, rng):
        design = QuadrantDesign.from_data(small_spec, sim_data)
        h = 1e-6
        for _ in range(5):
            th = random_interior_theta(rng, small_spec.dim)
            g = design.grad(th)
            fd = np.empty_like(g)
            for i in range(th.size):
                e = np.zeros_like(th)
                e[i] = h
                fd[i] = (design.loglik(th + e) - design.loglik(th - e)) / (2 * h)
            rel = np.abs(fd - g) / np.maximum(np.abs(g), 1.0)
            assert rel.max() < 1e-5


class TestHessian:
    def test_single_observation_rank_one(self, small_spec, rng):
        th = random_interior_theta(rng, small_spec.dim)
        obs = Observation(3.0, 0.4, 0, 1)
        g, c = design_row(small_spec, obs).realized()
        H = loglik_hess(small_spec, th, Dataset.from_observations([obs]))
        P = g @ th + c
        np.testing.assert_allclose(H, -np.outer(g, g) / P**2, rtol=1e-13, atol=1e-300)
        assert np.linalg.matrix_rank(H) == 1

    def test_symmetric_and_nsd(self, small_spec, sim_data, rng):
        th = random_interior_theta(rng, small_spec.dim)
        H = loglik_hess(small_spec, th, sim_data)
        assert np.max(np.abs(H - H.T)) == 0.0
        scale = np.max(np.abs(H))
        assert np.linalg.eigvalsh(H).max() <= 1e-8 * scale

    def test_matches_gradient_differences(self, small_spec, sim_data, rng):
        design = QuadrantDesign.from_data(small_spec, sim_data)
        th = random_interior_theta(rng, small_spec.dim)
        H = design.hess(th)
        h = 1e-6
        for i in range(0, th.size, 7):
            e = np.zeros_like(th)
            e[i] = h
            col = (design.grad(th + e) - design.grad(th - e)) / (2 * h)
            np.testing.assert_allclose(col, H[:, i], rtol=1e-4, atol=1e-4 * np.abs(H).max())


class TestConcavity:
    def test_midpoint_inequality(self, small_spec, sim_data, rng):
        design = QuadrantDesign.from_data(small_spec, sim_data)
        for _ in range(50):
            a = random_interior_theta(rng, small_spec.dim)
            b = random_interior_theta(rng, small_spec.dim)
            lam = rng.uniform()
            mix = design.loglik(lam * a + (1 - lam) * b)
            assert mix >= lam * design.loglik(a) + (1 - lam) * design.loglik(b) - 1e-9

    def test_gain_matches_difference(self, small_spec, sim_data, rng):
        design = QuadrantDesign.from_data(small_spec, sim_data)
        a = random_interior_theta(rng, small_spec.dim)
        d = random_interior_theta(rng, small_spec.dim) - a
        inc = design.gain(a, d)
        for t in (0.0, 0.25, 1.0):
            assert inc(t) == pytest.approx(design.loglik(a + t * d) - design.loglik(a), abs=1e-10)


class TestShapeConstraints:
    def test_feasible_theta_satisfies_all(self, small_spec, rng):
        axis = np.linspace(0.1, 4.7, 47)
        for total in (0.3, 1.0):
            th = random_interior_theta(rng, small_spec.dim, total=total)
            viol = shape_violations(*cdf_grid(small_spec, th, axis, axis))
            assert set(viol) == set(SHAPE_CHECKS)
            assert max(viol.values()) <= 1e-10

    def test_detects_decreasing_surface(self):
        axis = np.linspace(0, 1, 5)
        F = 0.5 - 0.1 * axis[:, None] * np.ones(5)
        viol = shape_violations(F, np.ones(5), np.ones(5))
        assert viol["F nondecreasing in s"] > 0.0
