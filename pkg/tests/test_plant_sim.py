import numpy as np
import pytest

from saferl.experiment import rollout_config
from saferl.plant_sim import (
    PlantModel,
    clip_noise,
    real_dynamics_matrix,
    rollout_batch,
    stage_cost,
    step,
)

from conftest import make_batch


class TestPlant:
    def test_dynamics_matrix(self):
        np.testing.assert_allclose(real_dynamics_matrix(1.0, 0.0), np.eye(2))
        A = real_dynamics_matrix(0.95, 22.0)
        np.testing.assert_allclose(A, A.T)
        np.testing.assert_allclose(A[0, 1], 0.95 * np.sin(np.deg2rad(22.0)))

    def test_clip_noise(self):
        np.testing.assert_allclose(clip_noise(np.array([0.006, 0.008]), 0.005), [0.003, 0.004])
        small = np.array([0.001, -0.002])
        np.testing.assert_array_equal(clip_noise(small, 0.005), small)

    def test_noiseless_step(self):
        plant = PlantModel(real_dynamics_matrix(0.95, 22.0), np.diag([1.1, 0.9]), np.zeros((2, 2)))
        s, a = np.array([0.3, -0.2]), np.array([0.1, 0.05])
        expected = plant.A_real @ s + plant.B_real @ a
        np.testing.assert_allclose(step(plant, s, a, np.random.default_rng(0)), expected)

    def test_noise_is_bounded(self):
        plant = PlantModel.from_case(1.0, 0.0, np.eye(2), 1.0, 0.005)
        rng = np.random.default_rng(0)
        for _ in range(50):
            assert np.linalg.norm(step(plant, np.zeros(2), np.zeros(2), rng)) <= 0.005 + 1e-15

    def test_stage_cost(self):
        x_ref, u_ref = np.array([0.5, 0.5]), np.array([0.1, 0.0])
        assert stage_cost(x_ref + [1.0, 0.0], u_ref + [0.0, 2.0], x_ref, u_ref) == pytest.approx(2.05)
        assert stage_cost(x_ref, u_ref, x_ref, u_ref) == 0.0

    def test_rejects_bad_plant(self):
        with pytest.raises(ValueError):
            PlantModel(np.eye(2), np.eye(2), np.eye(2), clip_radius=0.0)
        with pytest.raises(ValueError):
            PlantModel(np.eye(2), np.eye(2), -np.eye(2))
        with pytest.raises(ValueError):
            PlantModel(np.eye(2), np.eye(3), np.eye(2))


class TestTransitionBatch:
    def test_state_violations_count_start_and_final_state(self):
        states = np.array([[0.0, 0.0], [0.0, 1.2], [0.5, 0.0]])
        next_states = np.array([[0.0, 1.2], [0.5, 0.0], [1.1, 0.0]])
        batch = make_batch(states, np.zeros((3, 2)), next_states, np.zeros(3))
        assert batch.state_violations(1.0) == 2
        assert batch.max_state_norm() == pytest.approx(1.2)

    def test_unit_start_is_not_a_violation(self, case1):
        s0 = np.asarray(case1.s0)[None, :]
        batch = make_batch(s0, np.zeros((1, 2)), 0.5 * s0, np.zeros(1))
        assert batch.state_violations(1.0) == 0

    def test_frame_columns(self):
        batch = make_batch(np.ones((4, 2)), np.zeros((4, 2)), np.ones((4, 2)), np.arange(4.0), split=2)
        df = batch.to_frame()
        assert list(df.columns[:3]) == ["rollout", "t", "cost"]
        assert "s_plus[1]" in df.columns
        assert df["rollout"].tolist() == [0, 0, 1, 1]
        assert df["t"].tolist() == [0, 1, 0, 1]


class TestRollouts:
    @pytest.fixture
    def setup(self, small_config, theta0):
        return small_config.plant(), rollout_config(small_config, theta0)

    def test_batch_shape_and_start(self, setup, theta0, small_config):
        plant, roll_cfg = setup
        batch = rollout_batch(plant, theta0, roll_cfg, seed=3)
        assert batch.n_transitions == 6
        assert len(batch.records) == 6
        for r in batch.rollouts:
            np.testing.assert_allclose(r.states[0], small_config.s0)
            np.testing.assert_allclose(r.states[1:], r.next_states[:-1])
        assert batch.state_violations(1.0) == 0

    def test_reproducible_from_seed_and_step(self, setup, theta0):
        plant, roll_cfg = setup
        a = rollout_batch(plant, theta0, roll_cfg, seed=3, rl_step=1)
        b = rollout_batch(plant, theta0, roll_cfg, seed=3, rl_step=1)
        np.testing.assert_array_equal(a.actions, b.actions)
        np.testing.assert_array_equal(a.next_states, b.next_states)
        c = rollout_batch(plant, theta0, roll_cfg, seed=3, rl_step=2)
        assert not np.array_equal(a.next_states, c.next_states)

    def test_costs_follow_stage_cost(self, setup, theta0):
        plant, roll_cfg = setup
        batch = rollout_batch(plant, theta0, roll_cfg, seed=0)
        r = batch.rollouts[0]
        expected = [stage_cost(s, a, roll_cfg.x_ref, roll_cfg.u_ref) for s, a in zip(r.states, r.actions)]
        np.testing.assert_allclose(r.costs, expected)
