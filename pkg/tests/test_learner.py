from dataclasses import replace

import numpy as np
import pytest

from saferl.critic import AdvantageModel
from saferl.errors import InfeasibleDataError, UpdateRejectedError
from saferl.geometry import sample_in_polytope
from saferl.learner import (
    TransitionDataset,
    UpdateConfig,
    bounded_alpha,
    estimate_policy_gradient,
    membership_violations,
    performance_estimate,
    safe_update,
    update_objective,
)
from saferl.mpc_scheme import theta_block_slices
from saferl.policy import ExplorationRecord

from conftest import make_batch


def _planted(theta, n=12, outside=True, seed=0):
    """Transitions generated by the nominal model plus noise inside 0.9 W; one pushed out."""
    rng = np.random.default_rng(seed)
    states = rng.uniform(-0.6, 0.6, (n, 2))
    actions = rng.uniform(-0.2, 0.2, (n, 2))
    w = sample_in_polytope(0.9 * theta.W.vertices, n, rng)
    if outside:
        w[0] = 1.5 * theta.W.vertices[2]
    next_states = np.array([theta.model_prediction(s, a) for s, a in zip(states, actions)]) + w
    return TransitionDataset(states, actions, next_states)


class TestGradient:
    def test_compatible_gradient(self):
        nabla = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
        rec = ExplorationRecord(
            s=np.zeros(2), a=np.zeros(2), e=np.zeros(2), pi=np.zeros(2), nabla_theta_pi=nabla, M=2.0 * np.eye(2), c=np.zeros(2)
        )
        grad = estimate_policy_gradient([rec] * 3, AdvantageModel(np.array([1.0, 2.0, 3.0])))
        np.testing.assert_allclose(grad, [6.0, 12.0, 0.0])

    def test_performance_estimate(self):
        batch = make_batch(np.zeros((4, 2)), np.zeros((4, 2)), np.zeros((4, 2)), np.array([1.0, 1.0, 2.0, 0.0]), split=2)
        mean, std = performance_estimate(batch, 0.5)
        assert mean == pytest.approx(1.75)
        assert std == pytest.approx(0.25)


class TestDataset:
    def test_window_keeps_most_recent(self):
        data = TransitionDataset.empty(2, 2)
        for k in range(3):
            states = np.full((4, 2), float(k))
            data = data.extended(make_batch(states, states, states, np.zeros(4), split=2), window=6)
        assert len(data) == 6
        np.testing.assert_array_equal(data.states[:, 0], [1, 1, 2, 2, 2, 2])
        assert data.transition(5)["s"] == [2.0, 2.0]


class TestUpdateConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            UpdateConfig(alpha=-1.0)
        with pytest.raises(ValueError):
            UpdateConfig(update_mode="projected")
        with pytest.raises(ValueError):
            UpdateConfig(frozen_blocks=("C0",))
        with pytest.raises(ValueError):
            UpdateConfig(tau_schedule=())
        with pytest.raises(ValueError):
            UpdateConfig(max_step_norm=0.0)
        with pytest.raises(ValueError):
            UpdateConfig(update_backtracks=-1)


class TestSafeUpdate:
    def test_unconstrained_step_respects_frozen_blocks(self, theta0):
        gradient = np.ones(theta0.to_vector().size)
        config = UpdateConfig(alpha=0.1, update_mode="unconstrained_gradient", frozen_blocks=("K",))
        theta = safe_update(theta0, gradient, _planted(theta0), config)
        step = theta.to_vector() - theta0.to_vector()
        K = theta_block_slices(theta0.dims())["K"]
        np.testing.assert_array_equal(step[K], 0.0)
        mask = np.ones(step.size, dtype=bool)
        mask[K] = False
        np.testing.assert_allclose(step[mask], -0.1)

    def test_empty_dataset_takes_plain_step(self, theta0):
        gradient = np.linspace(-1.0, 1.0, theta0.to_vector().size)
        theta = safe_update(theta0, gradient, TransitionDataset.empty(2, 2), UpdateConfig(alpha=0.05))
        np.testing.assert_allclose(theta.to_vector(), theta0.to_vector() - 0.05 * gradient)

    def test_gradient_size_checked(self, theta0):
        with pytest.raises(ValueError):
            safe_update(theta0, np.zeros(3), TransitionDataset.empty(2, 2), UpdateConfig())

    def test_planted_violation_is_absorbed(self, theta0):
        data = _planted(theta0)
        tol = UpdateConfig().membership_tolerance
        assert membership_violations(theta0, data, tol) == [0]
        theta = safe_update(theta0, np.zeros(theta0.to_vector().size), data, UpdateConfig(alpha=0.0))
        assert membership_violations(theta, data, tol) == []
        # the smallest change in theta that explains the data is a small one
        assert np.linalg.norm(theta.to_vector() - theta0.to_vector()) < 0.1

    def test_consistent_data_keeps_gradient_step(self, theta0):
        data = _planted(theta0, outside=False)
        gradient = np.zeros(theta0.to_vector().size)
        K = theta_block_slices(theta0.dims())["K"]
        gradient[K] = 1.0
        theta = safe_update(theta0, gradient, data, UpdateConfig(alpha=0.01))
        np.testing.assert_allclose(theta.K, theta0.K - 0.01, atol=1e-4)
        assert membership_violations(theta, data, 1e-8) == []

    def test_all_model_blocks_frozen_with_bad_data(self, theta0):
        config = UpdateConfig(frozen_blocks=("A0", "B0", "b0", "W"))
        with pytest.raises(InfeasibleDataError) as info:
            safe_update(theta0, np.zeros(theta0.to_vector().size), _planted(theta0), config)
        assert info.value.transitions[0]["index"] == 0

    def test_all_model_blocks_frozen_with_good_data(self, theta0):
        config = UpdateConfig(alpha=0.1, frozen_blocks=("A0", "B0", "b0", "W"))
        gradient = np.ones(theta0.to_vector().size)
        theta = safe_update(theta0, gradient, _planted(theta0, outside=False), config)
        np.testing.assert_allclose(theta.K, theta0.K - 0.1)
        np.testing.assert_array_equal(theta.A0, theta0.A0)

    def test_update_objective(self, theta0):
        gradient = np.ones(theta0.to_vector().size)
        moved = replace(theta0, b0=theta0.b0 + np.array([0.1, 0.0]))
        assert update_objective(moved, theta0, gradient, 0.5) == pytest.approx(0.5 * 0.01 + 0.5 * 0.1)
        assert update_objective(theta0, theta0, gradient, 0.5) == 0.0

    def test_zero_step_on_consistent_data_keeps_theta(self, theta0):
        data = _planted(theta0, outside=False)
        theta = safe_update(theta0, np.ones(theta0.to_vector().size), data, UpdateConfig(alpha=0.0))
        np.testing.assert_allclose(theta.to_vector(), theta0.to_vector(), atol=1e-5)

    def test_update_does_not_increase_objective(self, theta0):
        data = _planted(theta0, outside=False)
        gradient = np.random.default_rng(2).standard_normal(theta0.to_vector().size)
        theta = safe_update(theta0, gradient, data, UpdateConfig(alpha=0.01))
        assert update_objective(theta, theta0, gradient, 0.01) <= update_objective(theta0, theta0, gradient, 0.01) + 1e-9
        assert membership_violations(theta, data, 1e-8) == []


class TestStepControl:
    def test_step_norm_is_capped(self, theta0):
        gradient = np.full(theta0.to_vector().size, 10.0)
        config = UpdateConfig(alpha=0.05, update_mode="unconstrained_gradient", max_step_norm=0.02)
        theta = safe_update(theta0, gradient, TransitionDataset.empty(2, 2), config)
        assert np.linalg.norm(theta.to_vector() - theta0.to_vector()) == pytest.approx(0.02)

    def test_small_steps_are_not_scaled(self, theta0):
        gradient = np.full(theta0.to_vector().size, 1e-3)
        config = UpdateConfig(alpha=0.05, update_mode="unconstrained_gradient", max_step_norm=0.02)
        free = np.ones(gradient.size, dtype=bool)
        assert bounded_alpha(gradient, free, config) == 0.05

    def test_rejected_candidates_are_halved(self, theta0):
        gradient = np.ones(theta0.to_vector().size)
        limit = 0.01 * np.linalg.norm(gradient) / 6.0
        seen = []

        def accept(theta):
            seen.append(np.linalg.norm(theta.to_vector() - theta0.to_vector()))
            return seen[-1] < limit

        theta = safe_update(theta0, gradient, TransitionDataset.empty(2, 2), UpdateConfig(alpha=0.01), accept=accept)
        np.testing.assert_allclose(seen, 0.01 * np.linalg.norm(gradient) / np.array([1.0, 2.0, 4.0, 8.0]))
        np.testing.assert_allclose(theta.to_vector(), theta0.to_vector() - 0.01 / 8.0 * gradient)

    def test_falls_back_to_projection(self, theta0):
        data = _planted(theta0)
        gradient = np.zeros(theta0.to_vector().size)
        gradient[theta_block_slices(theta0.dims())["K"]] = 1.0
        config = UpdateConfig(alpha=0.01, update_backtracks=1)
        theta = safe_update(theta0, gradient, data, config, accept=lambda th: np.allclose(th.K, theta0.K, atol=1e-6))
        assert membership_violations(theta, data, config.membership_tolerance) == []

    def test_nothing_acceptable(self, theta0):
        config = UpdateConfig(alpha=0.01, update_backtracks=2)
        with pytest.raises(UpdateRejectedError) as info:
            safe_update(theta0, np.ones(theta0.to_vector().size), TransitionDataset.empty(2, 2), config, accept=lambda th: False)
        assert len(info.value.step_norms) == 4
        assert info.value.step_norms[-1] == 0.0
