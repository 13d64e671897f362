"""RL outer loop: rollouts, critic fits, gradient, safe update and traces."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from functools import partial
from pathlib import Path
from typing import Any, Dict, List

import numpy as np

from .config import ExperimentConfig
from .connectors.trace_io import TRACE_COLUMNS, TraceWriter, write_abort_bundle, write_manifest
from .critic import fit_advantage, fit_value
from .errors import RolloutFailure, SafeRLError, SolverFailure, UpdateRejectedError, _TransitionError
from .learner import (
    TransitionDataset,
    estimate_policy_gradient,
    membership_violations,
    performance_estimate,
    safe_update,
)
from .mpc_scheme import PolytopeW, ThetaParams, lqr_gain, mpc_program, steady_state_input, theta_names
from .plant_sim import PlantModel, RolloutConfig, TransitionBatch, real_dynamics_matrix, rollout_batch
from .policy import deterministic_action
from .report import write_report

logger = logging.getLogger(__name__)


def init_theta(config: ExperimentConfig) -> ThetaParams:
    """Initial model: A0 at angle beta_hat with unit gain, B0 = I, b0 = 0,
    K the LQR gain of (A0, B0) and u_bar the steady-state input at x_bar."""
    n_s, n_a = config.n_s, config.n_a
    A0 = real_dynamics_matrix(1.0, config.beta_hat_deg)
    B0 = np.eye(n_s, n_a)
    K, _, residual = lqr_gain(
        A0, B0, config.lqr_state_weight * np.eye(n_s), config.lqr_input_weight * np.eye(n_a)
    )
    logger.debug("initial LQR gain: Riccati residual %.2e", residual)
    theta = ThetaParams(
        x_bar=np.asarray(config.x_bar, dtype=float),
        u_bar=np.zeros(n_a),
        A0=A0,
        B0=B0,
        b0=np.zeros(n_s),
        K=K,
        W=PolytopeW(np.asarray(config.W_vertices, dtype=float)),
    )
    return replace(theta, u_bar=steady_state_input(theta))


def rollout_config(config: ExperimentConfig, theta0: ThetaParams) -> RolloutConfig:
    u_ref = theta0.u_bar if config.u_ref is None else np.asarray(config.u_ref, dtype=float)
    return RolloutConfig(
        x_ref=np.asarray(config.x_ref, dtype=float),
        u_ref=np.asarray(u_ref, dtype=float),
        s0=np.asarray(config.s0, dtype=float),
        N_t=config.N_t,
        S=config.S,
        dims=config.dims(),
        exploration=config.exploration_config(),
        solver=config.solver_config(),
        state_weight=config.state_weight,
        input_weight=config.input_weight,
        workers=config.workers,
    )


def solvable_at_start(theta: ThetaParams, config: RolloutConfig) -> bool:
    """True when the policy NLP under ``theta`` converges at the rollout start state."""
    try:
        deterministic_action(mpc_program(config.dims), theta, config.s0, config.solver)
    except SafeRLError as exc:
        logger.debug("candidate theta not solvable at s0: %s", exc)
        return False
    return True


def named_theta(theta: ThetaParams) -> Dict[str, float]:
    return dict(zip(theta_names(theta.dims()), theta.to_vector().tolist()))


@dataclass(frozen=True)
class ExperimentResult:
    out_dir: Path
    theta: ThetaParams
    J_mean: List[float]
    J_std: List[float]
    safety_violations: int
    elapsed_s: float


def _record_step(
    writer: TraceWriter,
    step: int,
    theta: ThetaParams,
    K_init: np.ndarray,
    plant: PlantModel,
    batch: TransitionBatch,
    J: tuple,
) -> None:
    dims = theta.dims()
    writer.add("rl_trace", {"step": step, "J_mean": J[0], "J_std": J[1]})
    writer.add("theta_trace", {"step": step, **named_theta(theta)})
    writer.add(
        "model_gap",
        {
            "step": step,
            "A0_gap": float(np.linalg.norm(theta.A0 - plant.A_real)),
            "B0_gap": float(np.linalg.norm(theta.B0 - plant.B_real)),
            "b0_norm": float(np.linalg.norm(theta.b0)),
        },
    )
    W_row = {"step": step}
    for v in range(dims.N_M):
        for i in range(dims.n_s):
            W_row[f"W{v + 1}[{i}]"] = float(theta.W.vertices[v, i])
    writer.add("polytope_trace", W_row)
    K_row = {"step": step, "K_gap": float(np.linalg.norm(theta.K - K_init))}
    K_row.update({f"K[{i},{j}]": float(theta.K[i, j]) for i in range(dims.n_a) for j in range(dims.n_s)})
    writer.add("feedback_trace", K_row)

    traj = batch.to_frame()
    traj = traj[traj["rollout"] == batch.rollouts[0].index].assign(step=step)
    writer.extend("trajectory_trace", traj.to_dict("records"))


def _error_details(error: BaseException) -> Dict[str, Any]:
    if isinstance(error, _TransitionError):
        return {"transitions": error.transitions}
    if isinstance(error, UpdateRejectedError):
        return {"step_norms": error.step_norms}
    if isinstance(error, RolloutFailure):
        details = {"rollout": error.rollout, "t": error.t, "state": error.state, "cause": str(error.cause)}
        if isinstance(error.cause, SolverFailure) and error.cause.point is not None:
            details["last_iterate"] = error.cause.point.to_dict()
        return details
    if isinstance(error, SolverFailure):
        return {
            "residual_norm": error.residual_norm,
            "iterations": error.iterations,
            "last_iterate": error.point.to_dict() if error.point is not None else None,
        }
    return {}


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run ``rl_steps`` updates and evaluate rl_steps + 1 parameter sets.

    Every step's batch is generated from (seed, step), so identical configs give
    identical traces. On a library error the partial traces and an
    ``abort_bundle.json`` are written before the error is re-raised.
    """
    started = time.perf_counter()
    out_dir = Path(config.out_dir)
    writer = TraceWriter(out_dir)
    plant = config.plant()
    theta = init_theta(config)
    K_init = theta.K.copy()
    roll_cfg = rollout_config(config, theta)
    update_cfg = config.update_config()
    accept = partial(solvable_at_start, config=roll_cfg)
    tol = update_cfg.membership_tolerance
    dataset = TransitionDataset.empty(config.n_s, config.n_a)
    J_mean: List[float] = []
    J_std: List[float] = []
    total_violations = 0
    logger.info("case %d: %d RL steps, seed %d, output %s", config.case, config.rl_steps, config.seed, out_dir)

    step = 0
    try:
        for step in range(config.rl_steps + 1):
            batch = rollout_batch(plant, theta, roll_cfg, config.seed, step)
            J = performance_estimate(batch, config.gamma)
            J_mean.append(J[0])
            J_std.append(J[1])
            _record_step(writer, step, theta, K_init, plant, batch, J)
            safety = {
                "step": step,
                "state_violations": batch.state_violations(1.0),
                "max_state_norm": batch.max_state_norm(),
            }
            if step == config.rl_steps:
                # last evaluation: no update, report the fresh batch against the final model
                fresh = TransitionDataset.empty(config.n_s, config.n_a).extended(batch, batch.n_transitions)
                safety["membership_violations"] = len(membership_violations(theta, dataset, tol)) if len(dataset) else 0
                safety["pre_update_outside_w"] = len(membership_violations(theta, fresh, tol))
                writer.add("safety_report", safety)
                logger.info("step %d: J = %.6f +- %.6f (final)", step, J[0], J[1])
                break

            dataset = dataset.extended(batch, update_cfg.dataset_window)
            safety["pre_update_outside_w"] = len(membership_violations(theta, dataset, tol))
            value = fit_value(batch, config.gamma, np.asarray(config.x_ref), config.critic_floor)
            advantage = fit_advantage(batch, value, config.gamma, config.critic_floor)
            gradient = estimate_policy_gradient(batch.records, advantage)
            theta = safe_update(theta, gradient, dataset, update_cfg, accept=accept)
            safety["membership_violations"] = len(membership_violations(theta, dataset, tol))
            total_violations += safety["membership_violations"]
            if safety["membership_violations"]:
                logger.warning(
                    "step %d: %d retained transitions outside W after a %s update",
                    step,
                    safety["membership_violations"],
                    update_cfg.update_mode,
                )
            writer.add("safety_report", safety)
            logger.info("step %d: J = %.6f +- %.6f, |grad| = %.3e", step, J[0], J[1], float(np.linalg.norm(gradient)))
    except SafeRLError as exc:
        writer.flush()
        write_abort_bundle(out_dir, config.to_dict(), named_theta(theta), exc, {"step": step, **_error_details(exc)})
        raise

    writer.flush()
    elapsed = time.perf_counter() - started
    write_manifest(
        out_dir,
        config.to_dict(),
        {name: writer.frame(name) for name in TRACE_COLUMNS},
        {"rl_steps_completed": config.rl_steps, "safety_violations": total_violations},
    )
    result = ExperimentResult(out_dir, theta, J_mean, J_std, total_violations, elapsed)
    if config.report:
        write_report(config, out_dir)
    logger.info("finished in %.1f s; artifacts in %s", elapsed, out_dir)
    return result
