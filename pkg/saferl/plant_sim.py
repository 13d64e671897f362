"""Real linear plant, baseline stage cost and closed-loop batch rollouts."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import RolloutFailure, SafeRLError
from .mpc_scheme import MpcDims, ThetaParams, mpc_program
from .nlp_core import SolverConfig
from .policy import ExplorationConfig, ExplorationRecord, explore_step, random_stream

logger = logging.getLogger(__name__)

# stream ids inside one time step
_EXPLORATION_STREAM = 0
_NOISE_STREAM = 1


def real_dynamics_matrix(kappa: float, beta_deg: float) -> np.ndarray:
    """kappa * [[cos b, sin b], [sin b, cos b]] (symmetric, not a rotation)."""
    b = np.deg2rad(beta_deg)
    return kappa * np.array([[np.cos(b), np.sin(b)], [np.sin(b), np.cos(b)]])


@dataclass(frozen=True)
class PlantModel:
    A_real: np.ndarray
    B_real: np.ndarray
    noise_cov: np.ndarray
    clip_radius: float = 0.5e-2

    def __post_init__(self) -> None:
        if not self.clip_radius > 0:
            raise ValueError("clip_radius must be > 0")
        A = np.atleast_2d(np.asarray(self.A_real, dtype=float))
        B = np.atleast_2d(np.asarray(self.B_real, dtype=float))
        C = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        n_s = A.shape[0]
        if A.shape != (n_s, n_s) or B.shape[0] != n_s or C.shape != (n_s, n_s):
            raise ValueError("A_real, B_real and noise_cov dimensions are inconsistent")
        if np.any(np.linalg.eigvalsh(0.5 * (C + C.T)) < -1e-14):
            raise ValueError("noise_cov must be positive semidefinite")
        object.__setattr__(self, "A_real", A)
        object.__setattr__(self, "B_real", B)
        object.__setattr__(self, "noise_cov", C)

    @classmethod
    def from_case(
        cls, kappa: float, beta_deg: float, B_real: np.ndarray, noise_variance: float, clip_radius: float
    ) -> "PlantModel":
        A = real_dynamics_matrix(kappa, beta_deg)
        return cls(A, np.asarray(B_real, dtype=float), noise_variance * np.eye(A.shape[0]), clip_radius)


def clip_noise(n: np.ndarray, radius: float) -> np.ndarray:
    norm = float(np.linalg.norm(n))
    return n * (radius / norm) if norm > radius else n


def step(plant: PlantModel, s: np.ndarray, a: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = rng.multivariate_normal(np.zeros(plant.A_real.shape[0]), plant.noise_cov)
    return plant.A_real @ np.asarray(s, dtype=float) + plant.B_real @ np.asarray(a, dtype=float) + clip_noise(n, plant.clip_radius)


def stage_cost(
    s: np.ndarray,
    a: np.ndarray,
    x_ref: np.ndarray,
    u_ref: np.ndarray,
    state_weight: float = 1.0 / 20.0,
    input_weight: float = 0.5,
) -> float:
    ds = np.asarray(s, dtype=float) - np.asarray(x_ref, dtype=float)
    da = np.asarray(a, dtype=float) - np.asarray(u_ref, dtype=float)
    return float(state_weight * ds @ ds + input_weight * da @ da)


# ---- batches ------------------------------------------------------------------------


@dataclass(frozen=True)
class Rollout:
    index: int
    states: np.ndarray  # N_t x n_s
    actions: np.ndarray  # N_t x n_a
    costs: np.ndarray  # N_t
    next_states: np.ndarray  # N_t x n_s
    records: Tuple[ExplorationRecord, ...]

    def __len__(self) -> int:
        return self.costs.size


@dataclass(frozen=True)
class TransitionBatch:
    rollouts: Tuple[Rollout, ...]
    seed: int = 0
    rl_step: int = 0

    @property
    def n_transitions(self) -> int:
        return sum(len(r) for r in self.rollouts)

    @property
    def states(self) -> np.ndarray:
        return np.vstack([r.states for r in self.rollouts])

    @property
    def actions(self) -> np.ndarray:
        return np.vstack([r.actions for r in self.rollouts])

    @property
    def costs(self) -> np.ndarray:
        return np.concatenate([r.costs for r in self.rollouts])

    @property
    def next_states(self) -> np.ndarray:
        return np.vstack([r.next_states for r in self.rollouts])

    @property
    def records(self) -> List[ExplorationRecord]:
        return [rec for r in self.rollouts for rec in r.records]

    def max_state_norm(self) -> float:
        return float(np.max(np.linalg.norm(np.vstack([self.states, self.next_states]), axis=1)))

    def state_violations(self, radius: float = 1.0, tol: float = 1e-9) -> int:
        """Visited states (s and the final s+) with norm above ``radius + tol``.

        The default start lies on the unit circle, so rounding must not count it.
        """
        count = 0
        for r in self.rollouts:
            visited = np.vstack([r.states, r.next_states[-1:]])
            count += int(np.sum(np.linalg.norm(visited, axis=1) > radius + tol))
        return count

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for r in self.rollouts:
            for t in range(len(r)):
                row = {"rollout": r.index, "t": t, "cost": r.costs[t]}
                row.update({f"s[{i}]": v for i, v in enumerate(r.states[t])})
                row.update({f"a[{i}]": v for i, v in enumerate(r.actions[t])})
                row.update({f"s_plus[{i}]": v for i, v in enumerate(r.next_states[t])})
                rows.append(row)
        return pd.DataFrame(rows)


@dataclass(frozen=True)
class RolloutConfig:
    x_ref: np.ndarray
    u_ref: np.ndarray
    s0: np.ndarray
    N_t: int = 20
    S: int = 30
    dims: MpcDims = field(default_factory=MpcDims)
    exploration: ExplorationConfig = field(default_factory=ExplorationConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    state_weight: float = 1.0 / 20.0
    input_weight: float = 0.5
    workers: int = 1
    # start each deterministic solve from the previous time step's solution
    warm_start: bool = True

    def __post_init__(self) -> None:
        if self.N_t < 1:
            raise ValueError("N_t must be >= 1")
        if self.S < 1:
            raise ValueError("S must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


def run_rollout(plant: PlantModel, theta: ThetaParams, config: RolloutConfig, seed: int, rl_step: int, index: int) -> Rollout:
    nlp = mpc_program(config.dims)
    s = np.asarray(config.s0, dtype=float).copy()
    n_s, n_a = config.dims.n_s, config.dims.n_a
    states = np.zeros((config.N_t, n_s))
    actions = np.zeros((config.N_t, n_a))
    costs = np.zeros(config.N_t)
    next_states = np.zeros((config.N_t, n_s))
    records = []
    warm = None
    for t in range(config.N_t):
        try:
            result = explore_step(
                nlp,
                theta,
                s,
                config.exploration,
                random_stream(seed, rl_step, index, t, _EXPLORATION_STREAM),
                config.solver,
                warm_start=warm,
            )
        except SafeRLError as exc:
            raise RolloutFailure(index, t, s.tolist(), exc) from exc
        if config.warm_start:
            warm = result.point
        s_plus = step(plant, s, result.a, random_stream(seed, rl_step, index, t, _NOISE_STREAM))
        states[t], actions[t], next_states[t] = s, result.a, s_plus
        costs[t] = stage_cost(s, result.a, config.x_ref, config.u_ref, config.state_weight, config.input_weight)
        records.append(result.record)
        s = s_plus
    return Rollout(index, states, actions, costs, next_states, tuple(records))


def _rollout_job(args):
    return run_rollout(*args)


def rollout_batch(plant: PlantModel, theta: ThetaParams, config: RolloutConfig, seed: int, rl_step: int = 0) -> TransitionBatch:
    """S independent rollouts from s0; content depends only on the arguments."""
    jobs = [(plant, theta, config, seed, rl_step, i) for i in range(config.S)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            rollouts = list(pool.map(_rollout_job, jobs))
    else:
        rollouts = [_rollout_job(job) for job in jobs]
    batch = TransitionBatch(tuple(rollouts), seed=seed, rl_step=rl_step)
    logger.debug("rl step %d: %d transitions, max |s| = %.4f", rl_step, batch.n_transitions, batch.max_state_norm())
    return batch
