from dataclasses import replace

import numpy as np
import pytest

from saferl import validation
from saferl.errors import SolverFailure


class TestChecks:
    def test_kkt_exactness(self, case1):
        passed, metrics = validation.check_kkt_exactness(case1, n_disc=5, n_mpc=1)
        assert passed, metrics

    def test_range_diagnostic(self, case1):
        passed, metrics = validation.check_range_diagnostic(case1)
        assert passed, metrics
        assert metrics["active_residuals"][2] == pytest.approx(0.5, abs=1e-3)

    def test_planted_safe_update(self, case1):
        passed, metrics = validation.check_planted_safe_update(case1, n_transitions=15)
        assert passed, metrics
        assert metrics["violations_before"] >= 1
        assert metrics["violations_after"] == 0

    def test_hull_containment(self, case1):
        passed, metrics = validation.check_hull_containment(case1, n_sequences=50)
        assert passed, metrics
        assert metrics["violations"] == 0

    def test_exploration_estimators(self, case1):
        passed, metrics = validation.check_exploration_estimators(replace(case1, mc_samples=2000))
        assert passed, metrics
        assert metrics["mean_error"] <= metrics["mean_bound"]

    @pytest.mark.slow
    def test_sensitivity_consistency(self, case1):
        passed, metrics = validation.check_sensitivities(case1)
        assert passed, metrics

    @pytest.mark.slow
    def test_loose_solver_tolerance_breaks_sensitivity_check(self, case1):
        entry = validation._run("sensitivity_consistency", validation.check_sensitivities, replace(case1, residual_tolerance=1.0))
        assert entry["passed"] is False

    @pytest.mark.slow
    def test_small_exploration_limit(self, case1):
        passed, metrics = validation.check_small_exploration_limit(replace(case1, mc_samples=500))
        assert passed, metrics


class TestSuite:
    def test_failures_are_recorded_not_raised(self, case1, monkeypatch):
        def broken(config):
            raise SolverFailure("no convergence", residual_norm=1.0, iterations=3)

        monkeypatch.setattr(validation, "CRITERIA", {"ok": lambda config: (True, {"x": 1.0}), "broken": broken})
        report = validation.validate_suite(case1)
        assert report["passed"] is False
        assert report["criteria"]["ok"] == {"passed": True, "metrics": {"x": 1.0}, "elapsed_s": pytest.approx(0.0, abs=1.0)}
        assert report["criteria"]["broken"]["passed"] is False
        assert report["criteria"]["broken"]["error"].startswith("SolverFailure")

    def test_closed_loop_is_opt_in(self, case1, monkeypatch):
        monkeypatch.setattr(validation, "CRITERIA", {})
        monkeypatch.setattr(validation, "check_closed_loop", lambda config: (True, {}))
        assert validation.validate_suite(case1)["criteria"] == {}
        assert list(validation.validate_suite(case1, closed_loop=True)["criteria"]) == ["closed_loop"]
        assert np.isfinite(validation.validate_suite(case1, closed_loop=True)["criteria"]["closed_loop"]["elapsed_s"])
