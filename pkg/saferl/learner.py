"""Policy-gradient assembly and the safe parameter update."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Literal, Optional, Sequence, Tuple

import casadi as csd
import numpy as np

from .critic import AdvantageModel
from .errors import InfeasibleDataError, SafetyViolationError, SolverFailure, UpdateRejectedError
from .geometry import MEMBERSHIP_TOL
from .mpc_scheme import THETA_BLOCKS, ThetaParams, count_membership_violations, symbolic_blocks, theta_block_slices
from .nlp_core import NlpInstance, PrimalDualPoint, SolverConfig, solve
from .plant_sim import TransitionBatch
from .policy import ExplorationRecord

logger = logging.getLogger(__name__)

UpdateMode = Literal["unconstrained_gradient", "safe_constrained"]
CONSTRAINT_BLOCKS = ("A0", "B0", "b0", "W")


@dataclass(frozen=True)
class UpdateConfig:
    alpha: float = 0.05
    dataset_window: int = 600
    update_mode: UpdateMode = "safe_constrained"
    frozen_blocks: Tuple[str, ...] = ()
    # relaxation schedule of the update NLP; the last value is the one returned
    tau_schedule: Tuple[float, ...] = (1e-2, 1e-4, 1e-6)
    membership_tolerance: float = MEMBERSHIP_TOL
    max_newton_iterations: int = 300
    # cap on ||alpha g|| over the free entries; None leaves alpha untouched
    max_step_norm: Optional[float] = None
    # halvings of alpha tried when an acceptance check rejects a candidate
    update_backtracks: int = 4

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.dataset_window < 1:
            raise ValueError("dataset_window must be >= 1")
        if self.update_mode not in ("unconstrained_gradient", "safe_constrained"):
            raise ValueError("update_mode must be 'unconstrained_gradient' or 'safe_constrained'")
        unknown = set(self.frozen_blocks) - set(THETA_BLOCKS)
        if unknown:
            raise ValueError(f"unknown frozen blocks: {sorted(unknown)}")
        if not self.tau_schedule or min(self.tau_schedule) <= 0:
            raise ValueError("tau_schedule must contain positive values")
        if self.max_step_norm is not None and not self.max_step_norm > 0:
            raise ValueError("max_step_norm must be > 0")
        if self.update_backtracks < 0:
            raise ValueError("update_backtracks must be >= 0")


@dataclass(frozen=True)
class TransitionDataset:
    """Observed (s, a, s+) triples constraining the model."""

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]

    @classmethod
    def empty(cls, n_s: int, n_a: int) -> "TransitionDataset":
        return cls(np.zeros((0, n_s)), np.zeros((0, n_a)), np.zeros((0, n_s)))

    def extended(self, batch: TransitionBatch, window: int) -> "TransitionDataset":
        """Append a batch and keep the most recent ``window`` transitions."""
        return TransitionDataset(
            np.vstack([self.states, batch.states])[-window:],
            np.vstack([self.actions, batch.actions])[-window:],
            np.vstack([self.next_states, batch.next_states])[-window:],
        )

    def transition(self, k: int) -> dict:
        return {"index": k, "s": self.states[k].tolist(), "a": self.actions[k].tolist(), "s_plus": self.next_states[k].tolist()}


def estimate_policy_gradient(records: Sequence[ExplorationRecord], advantage: AdvantageModel) -> np.ndarray:
    """sum_k grad_theta pi_k M_k grad_theta pi_k^T w."""
    grad = np.zeros_like(advantage.w, dtype=float)
    for rec in records:
        grad += rec.nabla_theta_pi @ (rec.M @ (rec.nabla_theta_pi.T @ advantage.w))
    return grad


def performance_estimate(batch: TransitionBatch, gamma: float) -> Tuple[float, float]:
    """Mean and (population) standard deviation of per-rollout discounted cost."""
    returns = np.array([float(np.sum(gamma ** np.arange(len(r)) * r.costs)) for r in batch.rollouts])
    return float(returns.mean()), float(returns.std())


def _const(arr: np.ndarray) -> csd.SX:
    return csd.SX(csd.DM(np.asarray(arr, dtype=float)))


def _update_program(
    theta_minus: ThetaParams,
    gradient: np.ndarray,
    dataset: TransitionDataset,
    config: UpdateConfig,
    alpha: float,
) -> Tuple[NlpInstance, np.ndarray]:
    """Bilinear NLP in (free theta entries, convex weights), data baked in."""
    dims = theta_minus.dims()
    vec0 = theta_minus.to_vector()
    free_idx = np.flatnonzero(_free_mask(theta_minus, config))

    th_free = csd.SX.sym("theta_free", free_idx.size)
    pos = {int(i): k for k, i in enumerate(free_idx)}
    theta = csd.vertcat(*[th_free[pos[i]] if i in pos else csd.SX(float(vec0[i])) for i in range(vec0.size)])
    blocks = symbolic_blocks(theta, dims)

    n_d, n_v = len(dataset), dims.N_M
    weights = csd.SX.sym("vartheta", n_v, n_d)
    step = th_free - _const(vec0[free_idx].reshape(-1, 1))
    cost = 0.5 * csd.sumsqr(step) + alpha * csd.dot(_const(gradient[free_idx].reshape(-1, 1)), step)

    S = _const(dataset.states.T)
    A = _const(dataset.actions.T)
    S_plus = _const(dataset.next_states.T)
    prediction = csd.mtimes(blocks["A0"], S) + csd.mtimes(blocks["B0"], A) + csd.repmat(blocks["b0"], 1, n_d)
    membership = S_plus - prediction - csd.mtimes(blocks["W"], weights)
    simplex = csd.mtimes(csd.DM.ones(1, n_v), weights) - 1
    eq = csd.vertcat(csd.vec(membership), csd.vec(simplex))

    y = csd.vertcat(th_free, csd.vec(weights))
    no_theta, no_d, no_s = csd.SX.sym("p", 0), csd.SX.sym("d", 0), csd.SX.sym("s", 0)
    start_y = np.concatenate([vec0[free_idx], np.full(n_v * n_d, 1.0 / n_v)])

    def start(inst: NlpInstance, params, tau: float) -> PrimalDualPoint:
        h = inst.inequality_values(start_y, params)
        return PrimalDualPoint(start_y.copy(), np.zeros(inst.n_eq), tau / -h, float(tau))

    nlp = NlpInstance("safe_update", y, cost, no_theta, no_d, no_s, eq=eq, ineq=-csd.vec(weights), initializer=start)
    return nlp, free_idx


def membership_violations(theta: ThetaParams, dataset: TransitionDataset, tol: float) -> List[int]:
    _, bad = count_membership_violations(theta, dataset.states, dataset.actions, dataset.next_states, tol)
    return bad


def bounded_alpha(gradient: np.ndarray, free: np.ndarray, config: UpdateConfig) -> float:
    """Step size with ||alpha g|| over the free entries capped at ``max_step_norm``."""
    norm = float(np.linalg.norm(gradient[free]))
    if config.max_step_norm is None or config.alpha * norm <= config.max_step_norm:
        return config.alpha
    return config.max_step_norm / norm


def _free_mask(theta: ThetaParams, config: UpdateConfig) -> np.ndarray:
    free = np.ones(theta.to_vector().size, dtype=bool)
    for name, sl in theta_block_slices(theta.dims()).items():
        if name in config.frozen_blocks:
            free[sl] = False
    return free


def _projected_step(
    theta_minus: ThetaParams,
    gradient: np.ndarray,
    dataset: TransitionDataset,
    config: UpdateConfig,
    alpha: float,
    pre: List[int],
) -> ThetaParams:
    dims = theta_minus.dims()
    vec0 = theta_minus.to_vector()
    nlp, free_idx = _update_program(theta_minus, gradient, dataset, config, alpha)
    params = nlp.params()
    point = None
    try:
        for tau in config.tau_schedule:
            solver = SolverConfig(tau=tau, max_newton_iterations=config.max_newton_iterations)
            point = solve(nlp, params, solver, warm_start=point)
    except SolverFailure as exc:
        if config.frozen_blocks and pre:
            raise InfeasibleDataError(
                f"safe update failed with frozen blocks {config.frozen_blocks}: {exc}",
                [dataset.transition(k) for k in pre],
            ) from exc
        raise

    vec = vec0.copy()
    vec[free_idx] = point.y[: free_idx.size]
    theta = ThetaParams.from_vector(vec, dims)
    bad = membership_violations(theta, dataset, config.membership_tolerance)
    if bad:
        raise SafetyViolationError(
            f"{len(bad)} retained transitions outside W after the update", [dataset.transition(k) for k in bad]
        )
    return theta


def safe_update(
    theta_minus: ThetaParams,
    gradient: np.ndarray,
    dataset: TransitionDataset,
    config: UpdateConfig,
    accept: Optional[Callable[[ThetaParams], bool]] = None,
) -> ThetaParams:
    """min 1/2 ||theta - theta_-||^2 + alpha g^T (theta - theta_-) s.t. every retained
    transition satisfies s+ - F0(s, a, theta) in conv(W(theta)).

    ``alpha`` is first capped by ``config.max_step_norm``. When ``accept`` rejects a
    candidate, alpha is halved up to ``config.update_backtracks`` times and finally set
    to zero, which leaves the pure projection of theta_- onto the data constraints.
    """
    vec0 = theta_minus.to_vector()
    gradient = np.asarray(gradient, dtype=float).ravel()
    if gradient.size != vec0.size:
        raise ValueError(f"gradient has size {gradient.size}, expected {vec0.size}")
    free = _free_mask(theta_minus, config)
    alpha = bounded_alpha(gradient, free, config)

    constrained = len(dataset) > 0 and config.update_mode == "safe_constrained"
    if constrained and set(CONSTRAINT_BLOCKS) <= set(config.frozen_blocks):
        bad = membership_violations(theta_minus, dataset, config.membership_tolerance)
        if bad:
            raise InfeasibleDataError(
                f"{len(bad)} transitions lie outside W and every model block is frozen",
                [dataset.transition(k) for k in bad],
            )
        constrained = False

    pre: List[int] = []
    if constrained:
        pre = membership_violations(theta_minus, dataset, config.membership_tolerance)
        if pre:
            logger.warning("%d of %d retained transitions lie outside W before the update", len(pre), len(dataset))

    candidates = [alpha]
    if accept is not None and alpha > 0:
        candidates = [alpha * 0.5**k for k in range(config.update_backtracks + 1)] + [0.0]
    tried: List[float] = []
    for step_alpha in candidates:
        if constrained:
            try:
                theta = _projected_step(theta_minus, gradient, dataset, config, step_alpha, pre)
            except SolverFailure as exc:
                if step_alpha == 0.0 or accept is None:
                    raise
                logger.warning("update with alpha = %.3e failed to solve: %s", step_alpha, exc)
                tried.append(float("nan"))
                continue
        else:
            theta = ThetaParams.from_vector(vec0 - step_alpha * gradient * free, theta_minus.dims())
        step_norm = float(np.linalg.norm(theta.to_vector() - vec0))
        tried.append(step_norm)
        if accept is None or accept(theta):
            logger.info(
                "%s update: alpha = %.3e, |dtheta| = %.3e over %d transitions",
                config.update_mode,
                step_alpha,
                step_norm,
                len(dataset),
            )
            return theta
        logger.warning("update with alpha = %.3e (|dtheta| = %.3e) rejected", step_alpha, step_norm)
    raise UpdateRejectedError(f"no acceptable update among {len(tried)} candidates", tried)


def update_objective(theta: ThetaParams, theta_minus: ThetaParams, gradient: np.ndarray, alpha: float) -> float:
    step = theta.to_vector() - theta_minus.to_vector()
    return float(0.5 * step @ step + alpha * np.asarray(gradient, dtype=float) @ step)
