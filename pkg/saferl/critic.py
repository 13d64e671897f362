"""Batch LSTD critic: quadratic value function and compatible advantage."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ExplorationDegenerateError
from .plant_sim import TransitionBatch
from .policy import ExplorationRecord

logger = logging.getLogger(__name__)

DEFAULT_FLOOR = 1e-6


def quadratic_features(states: np.ndarray, center: np.ndarray) -> np.ndarray:
    """[1, delta, delta_i delta_j (i <= j)] with delta = s - center, one row per state."""
    delta = np.atleast_2d(np.asarray(states, dtype=float)) - np.asarray(center, dtype=float)
    n_s = delta.shape[1]
    iu, ju = np.triu_indices(n_s)
    return np.hstack([np.ones((delta.shape[0], 1)), delta, delta[:, iu] * delta[:, ju]])


def feature_dimension(n_s: int) -> int:
    return 1 + n_s + n_s * (n_s + 1) // 2


def saturated_solve(A: np.ndarray, b: np.ndarray, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """Solve A x = b by SVD with singular values raised to floor * s_max."""
    U, sv, Vt = np.linalg.svd(A)
    if sv.size == 0 or sv[0] == 0.0:
        raise ValueError("LSTD matrix is identically zero")
    sat = np.maximum(sv, floor * sv[0])
    return Vt.T @ ((U.T @ b) / sat)


@dataclass(frozen=True)
class ValueModel:
    v: np.ndarray
    center: np.ndarray

    def value(self, states: np.ndarray) -> np.ndarray:
        return quadratic_features(states, self.center) @ self.v


@dataclass(frozen=True)
class AdvantageModel:
    w: np.ndarray


def advantage_features(records: Sequence[ExplorationRecord], actions: Optional[np.ndarray] = None) -> np.ndarray:
    """Rows grad_theta pi M (a - pi - c); ``actions`` defaults to the recorded ones."""
    rows = []
    for k, rec in enumerate(records):
        a = rec.a if actions is None else np.asarray(actions[k], dtype=float)
        rows.append(rec.nabla_theta_pi @ rec.M @ (a - rec.pi - rec.c))
    return np.vstack(rows)


def fit_value(batch: TransitionBatch, gamma: float, center: np.ndarray, floor: float = DEFAULT_FLOOR) -> ValueModel:
    """LSTD: sum_k rho(s_k) (L_k + gamma V(s+_k) - V(s_k)) = 0."""
    if batch.n_transitions == 0:
        raise ValueError("batch is empty")
    rho = quadratic_features(batch.states, center)
    rho_next = quadratic_features(batch.next_states, center)
    A = rho.T @ (rho - gamma * rho_next)
    b = rho.T @ batch.costs
    if not np.any(A):
        raise ValueError("value features are identically zero")
    return ValueModel(saturated_solve(A, b, floor), np.asarray(center, dtype=float).copy())


def value_td_errors(batch: TransitionBatch, value: ValueModel, gamma: float) -> np.ndarray:
    return batch.costs + gamma * value.value(batch.next_states) - value.value(batch.states)


def fit_advantage(batch: TransitionBatch, value: ValueModel, gamma: float, floor: float = DEFAULT_FLOOR) -> AdvantageModel:
    """LSTD on Q = V(s) + w^T phi(s, a) with the value model held fixed."""
    phi = advantage_features(batch.records)
    if float(np.max(np.abs(phi))) <= 1e-12:
        raise ExplorationDegenerateError("exploration degenerate: advantage features vanish on the whole batch")
    target = value_td_errors(batch, value, gamma)
    w = saturated_solve(phi.T @ phi, phi.T @ target, floor)
    return AdvantageModel(w)


def advantage_value(model: AdvantageModel, record: ExplorationRecord, a: np.ndarray) -> float:
    return float(model.w @ (record.nabla_theta_pi @ record.M @ (np.asarray(a, dtype=float) - record.pi - record.c)))


def value_fixed_point_residual(batch: TransitionBatch, value: ValueModel, gamma: float) -> float:
    rho = quadratic_features(batch.states, value.center)
    return float(np.linalg.norm(rho.T @ value_td_errors(batch, value, gamma)))


def advantage_fixed_point_residual(batch: TransitionBatch, value: ValueModel, model: AdvantageModel, gamma: float) -> float:
    phi = advantage_features(batch.records)
    return float(np.linalg.norm(phi.T @ (value_td_errors(batch, value, gamma) - phi @ model.w)))
