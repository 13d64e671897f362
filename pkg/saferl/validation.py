"""Property checks of a configuration, collected into one pass/fail report.

Each criterion returns ``(passed, metrics)``; library errors inside a criterion
mark it failed instead of aborting the suite.
"""

from __future__ import annotations

import logging
import time
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, Sequence, Tuple

import numpy as np

from .config import ExperimentConfig
from .connectors.trace_io import read_trace
from .errors import SafeRLError
from .experiment import init_theta, run_experiment
from .geometry import sample_in_polytope, sample_noise_sequences
from .learner import TransitionDataset, membership_violations, safe_update
from .mpc_scheme import hull_containment_check, mpc_program
from .nlp_core import SolverConfig, solve
from .policy import ExplorationConfig, random_stream, range_diagnostic, sample_exploration, standard_normals
from .reference_problems import disc_problem
from .sensitivities import (
    finite_difference_first_order,
    finite_difference_second_order,
    first_order,
    full_sensitivities,
    relative_error,
)

logger = logging.getLogger(__name__)

Outcome = Tuple[bool, Dict[str, Any]]

KKT_TOLERANCE = 1e-10
FIRST_ORDER_TOLERANCE = 1e-5
SECOND_ORDER_TOLERANCE = 1e-4
DISC_THETA = np.array([1.2, 0.0, 1.0])


def _disc_solver(config: ExperimentConfig, tau: float) -> SolverConfig:
    return replace(config.solver_config(), tau=tau)


def check_kkt_exactness(config: ExperimentConfig, n_disc: int = 20, n_mpc: int = 5) -> Outcome:
    rng = random_stream(config.seed, 101)
    disc = disc_problem()
    worst, interior = 0.0, True
    for _ in range(n_disc):
        theta = np.concatenate([rng.uniform(-2.0, 2.0, 2), rng.uniform(0.5, 1.5, 1)])
        params = disc.params(theta)
        point = solve(disc, params, _disc_solver(config, config.tau))
        worst = max(worst, float(np.max(np.abs(disc.residual(point, params)))))
        interior &= disc.is_interior(point, params)

    theta0 = init_theta(config)
    nlp = mpc_program(config.dims())
    radius = 0.9 * np.sqrt(rng.uniform(size=n_mpc - 1))
    angle = rng.uniform(0.0, 2.0 * np.pi, n_mpc - 1)
    states = [np.asarray(config.s0)] + list(np.column_stack([radius * np.cos(angle), radius * np.sin(angle)]))
    worst_mpc = 0.0
    for s in states:
        params = nlp.params(theta0.to_vector(), None, s)
        point = solve(nlp, params, config.solver_config())
        worst_mpc = max(worst_mpc, float(np.max(np.abs(nlp.residual(point, params)))))
        interior &= nlp.is_interior(point, params)
    passed = worst <= KKT_TOLERANCE and worst_mpc <= KKT_TOLERANCE and interior
    return passed, {"disc_max_residual": worst, "mpc_max_residual": worst_mpc, "interior": bool(interior)}


def _sensitivity_errors(nlp, params, solver: SolverConfig, second: bool) -> Dict[str, float]:
    point = solve(nlp, params, solver)
    bundle = full_sensitivities(nlp, point, params) if second else first_order(nlp, point, params)
    fd_dd, fd_dtheta = finite_difference_first_order(nlp, params, solver, point)
    out = {
        "dz_dd": relative_error(bundle.dz_dd, fd_dd),
        "dz_dtheta": relative_error(bundle.dz_dtheta, fd_dtheta),
    }
    if second:
        out["d2g_dd2"] = relative_error(bundle.d2g_dd2, finite_difference_second_order(nlp, params, solver, point))
    return out


def check_sensitivities(config: ExperimentConfig) -> Outcome:
    disc = disc_problem()
    metrics = {
        f"disc_{k}": v
        for k, v in _sensitivity_errors(disc, disc.params(DISC_THETA), _disc_solver(config, 1e-2), True).items()
    }
    theta0 = init_theta(config)
    nlp = mpc_program(config.dims())
    mpc = _sensitivity_errors(nlp, nlp.params(theta0.to_vector(), None, np.asarray(config.s0)), config.solver_config(), True)
    metrics.update({f"mpc_{k}": v for k, v in mpc.items()})
    passed = all(v <= (SECOND_ORDER_TOLERANCE if k.endswith("d2g_dd2") else FIRST_ORDER_TOLERANCE) for k, v in metrics.items())
    return passed, metrics


def _disc_exploration(config: ExperimentConfig, sigma: float) -> ExplorationConfig:
    return replace(config.exploration_config(), sigma=sigma, tau=1e-2)


def check_exploration_estimators(config: ExperimentConfig) -> Outcome:
    """Sampled mean and covariance of e against c and sigma M^-1 on the disc problem."""
    exp_cfg = _disc_exploration(config, config.sigma)
    sample = sample_exploration(
        disc_problem(), DISC_THETA, None, exp_cfg, config.mc_samples, random_stream(config.seed, 103), _disc_solver(config, 1e-2)
    )
    c = sample.stats.c
    predicted_cov = exp_cfg.sigma * np.linalg.inv(sample.stats.M)
    mean_err = float(np.linalg.norm(sample.mean - c))
    mean_bound = max(3.0 * sample.standard_error, 0.1 * float(np.linalg.norm(c)) + 1e-6)
    cov_err = float(np.linalg.norm(sample.cov - predicted_cov))
    cov_bound = 0.15 * float(np.linalg.norm(predicted_cov))
    metrics = {"mean_error": mean_err, "mean_bound": mean_bound, "cov_error": cov_err, "cov_bound": cov_bound}
    return mean_err <= mean_bound and cov_err <= cov_bound, metrics


def check_small_exploration_limit(config: ExperimentConfig, sigmas: Sequence[float] = (1e-2, 1e-3, 1e-4)) -> Outcome:
    """(1/sigma) M cov(e) -> I as sigma -> 0, with common random numbers."""
    xi = standard_normals(random_stream(config.seed, 104), config.mc_samples, 2)
    gaps = []
    for sigma in sigmas:
        sample = sample_exploration(
            disc_problem(), DISC_THETA, None, _disc_exploration(config, sigma), config.mc_samples,
            solver=_disc_solver(config, 1e-2), xi=xi,
        )
        gaps.append(float(np.linalg.norm(sample.stats.M @ sample.cov / sigma - np.eye(2))))
    passed = all(b < a for a, b in zip(gaps, gaps[1:]))
    return passed, {"sigmas": list(sigmas), "gaps": gaps}


def check_range_diagnostic(config: ExperimentConfig) -> Outcome:
    disc = disc_problem()
    exp_cfg = replace(config.exploration_config(), tau=1e-6, m_mode="pseudo_inverse")
    solver = _disc_solver(config, 1e-6)
    residuals = {}
    for label, theta in (("active", np.array([2.0, 0.0, 1.0])), ("interior", np.array([0.0, 0.0, 1.0]))):
        params = disc.params(theta)
        bundle = first_order(disc, solve(disc, params, solver), params)
        residuals[label] = range_diagnostic(bundle, exp_cfg).residuals
    active, interior = residuals["active"], residuals["interior"]
    passed = active[2] > 10.0 * max(active[0], active[1]) and float(np.max(interior)) <= 1e-6
    return passed, {"active_residuals": active.tolist(), "interior_residuals": interior.tolist()}


def check_hull_containment(config: ExperimentConfig, n_sequences: int = 1000) -> Outcome:
    theta0 = init_theta(config)
    dims = config.dims()
    nlp = mpc_program(dims)
    s = np.asarray(config.s0)
    point = solve(nlp, nlp.params(theta0.to_vector(), None, s), config.solver_config())
    rng = random_stream(config.seed, 105)
    constant = hull_containment_check(
        theta0, point, s, dims, sample_noise_sequences(theta0.W.vertices, n_sequences, dims.N, rng, "constant")
    )
    iid = hull_containment_check(
        theta0, point, s, dims, sample_noise_sequences(theta0.W.vertices, max(1, n_sequences // 10), dims.N, rng, "iid")
    )
    metrics = {
        "sequences": constant.sequences,
        "violations": constant.violations,
        "max_violation": constant.max_violation,
        "iid_violations": iid.violations,
        "iid_checked": iid.checked,
    }
    return constant.violations == 0, metrics


def check_planted_safe_update(config: ExperimentConfig, n_transitions: int = 40) -> Outcome:
    """A transition planted outside W must be absorbed by the safe update."""
    theta0 = init_theta(config)
    rng = random_stream(config.seed, 106)
    states = rng.uniform(-0.6, 0.6, (n_transitions, config.n_s))
    actions = rng.uniform(-0.2, 0.2, (n_transitions, config.n_a))
    w = sample_in_polytope(0.9 * theta0.W.vertices, n_transitions, rng)
    w[0] = 1.5 * theta0.W.vertices[2]
    next_states = np.array([theta0.model_prediction(s, a) for s, a in zip(states, actions)]) + w
    dataset = TransitionDataset(states, actions, next_states)
    update_cfg = replace(config.update_config(), alpha=config.alpha, update_mode="safe_constrained", frozen_blocks=())
    tol = update_cfg.membership_tolerance
    before = len(membership_violations(theta0, dataset, tol))
    theta = safe_update(theta0, np.zeros(theta0.to_vector().size), dataset, update_cfg)
    after = len(membership_violations(theta, dataset, tol))
    return before >= 1 and after == 0, {"violations_before": before, "violations_after": after}


def check_closed_loop(config: ExperimentConfig, seeds: Sequence[int] = (), window: int = 10) -> Outcome:
    seeds = tuple(seeds) or (config.seed, config.seed + 1, config.seed + 2)
    first, last, violations, state_violations, gaps = [], [], 0, 0, []
    for seed in seeds:
        run_cfg = replace(config, seed=seed, out_dir=str(Path(config.out_dir) / f"closed_loop_seed{seed}"), report=False)
        result = run_experiment(run_cfg)
        J = np.asarray(result.J_mean)
        k = min(window, max(1, J.size // 2))
        first.extend(J[:k])
        last.extend(J[-k:])
        violations += result.safety_violations
        gaps.append(float(np.linalg.norm(result.theta.A0 - run_cfg.plant().A_real)))
        state_violations += int(read_trace(Path(run_cfg.out_dir) / "safety_report.csv")["state_violations"].sum())
    first, last = np.asarray(first), np.asarray(last)
    se = float(np.sqrt(first.var(ddof=1) / first.size + last.var(ddof=1) / last.size)) if first.size > 1 else 0.0
    improvement = float(first.mean() - last.mean())
    passed = improvement >= 3.0 * se and improvement > 0 and violations == 0 and state_violations == 0 and min(gaps) > 1e-3
    return passed, {
        "seeds": list(seeds),
        "improvement": improvement,
        "pooled_standard_error": se,
        "membership_violations": violations,
        "state_violations": state_violations,
        "final_model_gaps": gaps,
    }


CRITERIA: Dict[str, Callable[[ExperimentConfig], Outcome]] = {
    "kkt_exactness": check_kkt_exactness,
    "sensitivity_consistency": check_sensitivities,
    "exploration_estimators": check_exploration_estimators,
    "small_exploration_limit": check_small_exploration_limit,
    "range_diagnostic": check_range_diagnostic,
    "hull_containment": check_hull_containment,
    "planted_safe_update": check_planted_safe_update,
}


def _run(name: str, check: Callable[[ExperimentConfig], Outcome], config: ExperimentConfig) -> Dict[str, Any]:
    started = time.perf_counter()
    try:
        passed, metrics = check(config)
        error = None
    except (SafeRLError, ValueError, np.linalg.LinAlgError) as exc:
        passed, metrics, error = False, {}, f"{type(exc).__name__}: {exc}"
    elapsed = time.perf_counter() - started
    logger.info("%-26s %s (%.1f s)", name, "PASS" if passed else "FAIL", elapsed)
    entry = {"passed": bool(passed), "metrics": metrics, "elapsed_s": elapsed}
    if error:
        entry["error"] = error
    return entry


def validate_suite(config: ExperimentConfig, closed_loop: bool = False) -> Dict[str, Any]:
    """Run every criterion (plus the multi-seed closed-loop check when asked)."""
    checks = dict(CRITERIA)
    if closed_loop:
        checks["closed_loop"] = check_closed_loop
    results = {name: _run(name, check, config) for name, check in checks.items()}
    return {"passed": all(r["passed"] for r in results.values()), "criteria": results}
