import casadi as csd
import numpy as np
import pytest

from saferl.errors import SingularKktError
from saferl.nlp_core import NlpInstance, PrimalDualPoint, SolverConfig, solve
from saferl.sensitivities import (
    finite_difference_first_order,
    finite_difference_second_order,
    first_order,
    full_sensitivities,
    policy_jacobians,
    relative_error,
    second_order,
)


def _solved(inst, theta, d=None, tau=1e-2):
    params = inst.params(theta, d)
    return solve(inst, params, SolverConfig(tau=tau)), params


class TestFirstOrder:
    def test_unconstrained_solution_map(self, quad):
        z, params = _solved(quad, [0.3, -0.7])
        bundle = first_order(quad, z, params)
        np.testing.assert_allclose(bundle.dg_dd, -np.eye(2), atol=1e-12)
        np.testing.assert_allclose(bundle.dg_dtheta, np.eye(2), atol=1e-12)

    def test_disc_symmetric_point(self, disc):
        z, params = _solved(disc, [0.0, 0.0, 1.0])
        np.testing.assert_allclose(z.mu, [1e-2], rtol=1e-8)
        bundle = first_order(disc, z, params)
        np.testing.assert_allclose(bundle.dg_dd, -np.eye(2) / 1.02, atol=1e-9)
        np.testing.assert_allclose(bundle.dg_dtheta[:, :2], np.eye(2) / 1.02, atol=1e-9)
        np.testing.assert_allclose(bundle.dg_dtheta[:, 2], 0.0, atol=1e-9)

    def test_dg_dd_is_leading_rows(self, disc):
        z, params = _solved(disc, [1.2, 0.0, 1.0])
        bundle = first_order(disc, z, params)
        np.testing.assert_array_equal(bundle.dg_dd, bundle.dz_dd[:2])
        np.testing.assert_array_equal(bundle.dg_dtheta, bundle.dz_dtheta[:2])

    def test_linear_systems_hold(self, disc):
        z, params = _solved(disc, [1.2, 0.0, 1.0])
        bundle = first_order(disc, z, params)
        jac = disc.residual_jacobian(z, params)
        p = disc.parameter_jacobians(z, params)
        np.testing.assert_allclose(jac @ bundle.dz_dd + p["d"], 0.0, atol=1e-10)
        np.testing.assert_allclose(jac @ bundle.dz_dtheta + p["theta"], 0.0, atol=1e-10)

    def test_matches_finite_differences(self, disc):
        z, params = _solved(disc, [1.2, 0.0, 1.0])
        bundle = first_order(disc, z, params)
        fd_dd, fd_dtheta = finite_difference_first_order(disc, params, SolverConfig(tau=1e-2), z)
        assert relative_error(bundle.dz_dd, fd_dd) <= 1e-5
        assert relative_error(bundle.dz_dtheta, fd_dtheta) <= 1e-5

    def test_singular_jacobian_is_named(self):
        y = csd.SX.sym("y", 2)
        theta = csd.SX.sym("theta", 1)
        d = csd.SX.sym("d", 2)
        s = csd.SX.sym("s", 0)
        flat = NlpInstance("flat", y, 0.5 * (y[0] - theta[0]) ** 2, theta, d, s)
        params = flat.params([1.0])
        z = PrimalDualPoint(np.array([1.0, 0.0]), np.zeros(0), np.zeros(0), 1e-2)
        with pytest.raises(SingularKktError) as info:
            first_order(flat, z, params)
        assert "flat" in str(info.value)


class TestSecondOrder:
    def test_zero_for_affine_solution_map(self, quad):
        z, params = _solved(quad, [0.3, -0.7])
        np.testing.assert_array_equal(full_sensitivities(quad, z, params).d2g_dd2, np.zeros((2, 2, 2)))

    def test_zero_at_symmetric_point(self, disc):
        z, params = _solved(disc, [0.0, 0.0, 1.0])
        np.testing.assert_allclose(full_sensitivities(disc, z, params).d2g_dd2, 0.0, atol=1e-12)

    def test_symmetric_in_last_indices(self, disc):
        z, params = _solved(disc, [1.2, 0.3, 1.0])
        d2g = full_sensitivities(disc, z, params).d2g_dd2
        np.testing.assert_allclose(d2g, np.transpose(d2g, (0, 2, 1)), atol=1e-9)

    def test_matches_finite_differences(self, disc):
        z, params = _solved(disc, [1.2, 0.0, 1.0])
        first = first_order(disc, z, params)
        d2g = second_order(disc, z, params, first)
        fd = finite_difference_second_order(disc, params, SolverConfig(tau=1e-2), z)
        assert relative_error(d2g, fd) <= 1e-4


class TestPolicyJacobians:
    def test_shapes_and_transpose(self, disc):
        z, params = _solved(disc, [1.2, 0.0, 1.0])
        bundle = first_order(disc, z, params)
        nabla, dg_dd = policy_jacobians(bundle)
        assert nabla.shape == (3, 2)
        np.testing.assert_array_equal(nabla, bundle.dg_dtheta.T)
        np.testing.assert_array_equal(dg_dd, bundle.dg_dd)

    def test_interior_rows(self, disc):
        z, params = _solved(disc, [0.0, 0.0, 1.0])
        nabla, _ = policy_jacobians(first_order(disc, z, params))
        np.testing.assert_allclose(nabla[:2], np.eye(2) / 1.02, atol=1e-9)
        np.testing.assert_allclose(nabla[2], 0.0, atol=1e-9)

    def test_radius_moves_active_solution(self, disc):
        z, params = _solved(disc, [2.0, 0.0, 1.0], tau=1e-6)
        nabla, _ = policy_jacobians(first_order(disc, z, params))
        # y1 = sqrt(theta3) on the boundary
        np.testing.assert_allclose(nabla[2, 0], 0.5, atol=1e-3)


@pytest.mark.slow
class TestMpcSensitivities:
    def test_first_and_second_order_match_finite_differences(self, mpc, theta0, case1):
        params = mpc.params(theta0.to_vector(), None, np.asarray(case1.s0))
        solver = case1.solver_config()
        z = solve(mpc, params, solver)
        bundle = full_sensitivities(mpc, z, params)
        fd_dd, fd_dtheta = finite_difference_first_order(mpc, params, solver, z)
        assert relative_error(bundle.dz_dd, fd_dd) <= 1e-5
        assert relative_error(bundle.dz_dtheta, fd_dtheta) <= 1e-5
        fd2 = finite_difference_second_order(mpc, params, solver, z)
        assert relative_error(bundle.d2g_dd2, fd2) <= 1e-4
