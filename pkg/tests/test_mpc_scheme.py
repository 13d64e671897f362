from dataclasses import replace

import casadi as csd
import numpy as np
import pytest

from saferl.errors import DimensionError, RiccatiError
from saferl.experiment import init_theta
from saferl.geometry import (
    central_weights,
    convex_membership,
    hull_violation,
    sample_in_polytope,
    sample_noise_sequences,
)
from saferl.mpc_scheme import (
    MpcDims,
    PolytopeW,
    ThetaParams,
    build_mpc_nlp,
    count_membership_violations,
    hull_containment_check,
    lqr_gain,
    membership_residual,
    scenario_inputs,
    steady_state_input,
    symbolic_blocks,
    theta_names,
    unpack_solution,
)
from saferl.nlp_core import solve

SQUARE = 0.1 * np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


class TestThetaParams:
    def test_sizes(self):
        dims = MpcDims()
        assert dims.theta_size == 26
        assert dims.n_primal == 120
        assert len(theta_names(dims)) == 26
        assert theta_names(dims)[5] == "A0[0,1]"
        assert theta_names(dims)[-1] == "W4[1]"

    def test_vector_layout(self, theta0):
        vec = theta0.to_vector()
        back = ThetaParams.from_vector(vec, theta0.dims())
        np.testing.assert_array_equal(back.A0, theta0.A0)
        np.testing.assert_array_equal(back.W.vertices, theta0.W.vertices)
        assert vec[5] == theta0.A0[0, 1]

    def test_symbolic_blocks_agree_with_from_vector(self, theta0):
        dims = theta0.dims()
        sym = csd.SX.sym("theta", dims.theta_size)
        blocks = symbolic_blocks(sym, dims)
        f = csd.Function("blocks", [sym], [blocks["A0"], blocks["K"], blocks["W"]])
        A0, K, W = (np.asarray(m.full()) for m in f(theta0.to_vector()))
        np.testing.assert_allclose(A0, theta0.A0)
        np.testing.assert_allclose(K, theta0.K)
        np.testing.assert_allclose(W, theta0.W.vertices.T)

    def test_shape_mismatch(self, theta0):
        with pytest.raises(DimensionError):
            replace(theta0, A0=np.eye(3))
        with pytest.raises(DimensionError):
            ThetaParams.from_vector(np.zeros(25), MpcDims())


class TestInitialModel:
    def test_rotation_angle(self, theta0):
        b = np.deg2rad(20.0)
        np.testing.assert_allclose(theta0.A0, [[np.cos(b), np.sin(b)], [np.sin(b), np.cos(b)]])
        np.testing.assert_array_equal(theta0.B0, np.eye(2))
        np.testing.assert_array_equal(theta0.b0, np.zeros(2))
        np.testing.assert_allclose(theta0.W.vertices, SQUARE)

    def test_zero_angle_gives_identity(self, case1):
        theta = init_theta(replace(case1, beta_hat_deg=0.0))
        np.testing.assert_allclose(theta.A0, np.eye(2), atol=1e-15)

    def test_feedback_solves_riccati(self, theta0):
        Q, R = np.eye(2) / 20.0, np.eye(2)
        K, P, residual = lqr_gain(theta0.A0, theta0.B0, Q, R)
        np.testing.assert_allclose(theta0.K, K)
        assert residual <= 1e-10
        A, B = theta0.A0, theta0.B0
        np.testing.assert_allclose(A.T @ P @ A - P - A.T @ P @ B @ K + Q, 0.0, atol=1e-10)
        assert np.max(np.abs(np.linalg.eigvals(A - B @ K))) < 1.0

    def test_steady_state_input(self, theta0):
        expected = (np.eye(2) - theta0.A0) @ theta0.x_bar - theta0.b0
        np.testing.assert_allclose(steady_state_input(theta0), expected, atol=1e-14)
        np.testing.assert_allclose(theta0.u_bar, expected, atol=1e-14)

    def test_unstabilizable_pair(self):
        with pytest.raises(RiccatiError):
            lqr_gain(2.0 * np.eye(2), np.zeros((2, 2)), np.eye(2), np.eye(2))


class TestMpcProgram:
    @pytest.fixture(scope="class")
    def solved(self, mpc, theta0, case1):
        params = mpc.params(theta0.to_vector(), None, np.asarray(case1.s0))
        return solve(mpc, params, case1.solver_config()), params

    def test_solves_to_tolerance(self, mpc, solved):
        z, params = solved
        assert np.max(np.abs(mpc.residual(z, params))) <= 1e-10
        assert mpc.is_interior(z, params)
        assert mpc.n_y == 120

    def test_scenarios_share_first_input(self, theta0, case1, solved):
        z, _ = solved
        dims = case1.dims()
        u0, X = unpack_solution(z.y, dims)
        assert u0.shape == (10, 2)
        assert X.shape == (5, 10, 2)
        inputs = scenario_inputs(theta0, np.asarray(case1.s0), z.y, dims)
        np.testing.assert_allclose(inputs[0], u0)
        for j in range(1, 5):
            np.testing.assert_allclose(inputs[j, 0], u0[0])

    def test_scenario_dynamics(self, theta0, case1, solved):
        z, _ = solved
        dims = case1.dims()
        u0, X = unpack_solution(z.y, dims)
        inputs = scenario_inputs(theta0, np.asarray(case1.s0), z.y, dims)
        for j in range(1, 5):
            predicted = theta0.model_prediction(X[j, 0], inputs[j, 1]) + theta0.W.vertices[j - 1]
            np.testing.assert_allclose(X[j, 1], predicted, atol=1e-9)

    def test_all_predicted_states_feasible(self, case1, solved):
        z, _ = solved
        _, X = unpack_solution(z.y, case1.dims())
        assert np.all(np.linalg.norm(X, axis=2) < 1.0)

    def test_build_checks_dimensions(self, theta0):
        with pytest.raises(DimensionError):
            build_mpc_nlp(theta0, np.zeros(2), MpcDims(N_M=3))
        inst = build_mpc_nlp(theta0, np.zeros(2), MpcDims(), tau=1e-2)
        assert inst.nlp.is_interior(inst.nlp.initial_point(inst.params, inst.tau), inst.params)

    def test_constant_noise_stays_in_scenario_hull(self, theta0, case1, solved):
        z, _ = solved
        dims = case1.dims()
        noise = sample_noise_sequences(theta0.W.vertices, 100, dims.N, np.random.default_rng(1), "constant")
        report = hull_containment_check(theta0, z, np.asarray(case1.s0), dims, noise)
        assert report.checked == 100 * dims.N
        assert report.violations == 0


class TestMembership:
    def test_inside_and_outside(self, theta0):
        s, a = np.array([0.2, 0.1]), np.array([0.0, 0.05])
        inside = membership_residual(theta0, s, a, theta0.model_prediction(s, a) + np.array([0.05, -0.02]))
        assert inside.feasible
        np.testing.assert_allclose(inside.weights.sum(), 1.0)
        outside = membership_residual(theta0, s, a, theta0.model_prediction(s, a) + np.array([0.15, 0.0]))
        assert not outside.feasible
        assert outside.violation == pytest.approx(0.05, abs=1e-9)

    def test_count(self, theta0):
        s = np.zeros((3, 2))
        a = np.zeros((3, 2))
        offsets = np.array([[0.0, 0.0], [0.3, 0.0], [0.05, 0.05]])
        next_states = np.array([theta0.model_prediction(si, ai) for si, ai in zip(s, a)]) + offsets
        count, bad = count_membership_violations(theta0, s, a, next_states)
        assert count == 1
        assert bad == [1]

    def test_polytope_contains(self):
        W = PolytopeW(SQUARE)
        assert W.contains(np.zeros(2))
        assert not W.contains(np.array([0.2, 0.0]))


class TestGeometry:
    def test_hull_violation(self):
        _, inside = hull_violation(SQUARE, np.zeros(2))
        assert inside == pytest.approx(0.0, abs=1e-12)
        _, outside = hull_violation(SQUARE, np.array([0.2, 0.0]))
        assert outside == pytest.approx(0.1, abs=1e-9)

    def test_central_weights(self):
        start, _ = hull_violation(SQUARE, np.zeros(2))
        centroid = central_weights(SQUARE, np.zeros(2), start)
        np.testing.assert_allclose(centroid, 0.25, atol=1e-6)
        edge = convex_membership(SQUARE, np.array([0.1, 0.0]))
        assert edge.feasible
        np.testing.assert_allclose(edge.weights, [0.0, 0.5, 0.5, 0.0], atol=1e-6)

    def test_samples_inside(self):
        pts = sample_in_polytope(SQUARE, 200, np.random.default_rng(0))
        assert pts.shape == (200, 2)
        assert np.all(np.abs(pts) <= 0.1)

    def test_noise_modes(self):
        rng = np.random.default_rng(0)
        const = sample_noise_sequences(SQUARE, 5, 4, rng, "constant")
        assert const.shape == (5, 4, 2)
        np.testing.assert_array_equal(const[:, 0], const[:, 3])
        iid = sample_noise_sequences(SQUARE, 5, 4, rng, "iid")
        assert iid.shape == (5, 4, 2)
        with pytest.raises(ValueError):
            sample_noise_sequences(SQUARE, 5, 4, rng, "walk")
