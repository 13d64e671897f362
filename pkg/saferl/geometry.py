"""Convex-hull membership and sampling helpers for the disturbance polytope."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.spatial import Delaunay

logger = logging.getLogger(__name__)

MEMBERSHIP_TOL = 1e-8


@dataclass(frozen=True)
class MembershipResult:
    feasible: bool
    weights: Optional[np.ndarray]  # convex weights when feasible
    violation: float  # minimal infinity-norm mismatch over all convex combinations


def hull_violation(points: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, float]:
    """Minimal ||P w - x||_inf over the simplex, by LP.

    ``points`` has one point per row. Returns the minimizing weights and the
    attained violation (zero when ``target`` is in the hull).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    target = np.asarray(target, dtype=float).ravel()
    n_v, n = points.shape
    if target.size != n:
        raise ValueError("target dimension does not match the points")
    P = points.T
    ones = np.ones((n, 1))
    # variables: weights (n_v), slack t
    c = np.zeros(n_v + 1)
    c[-1] = 1.0
    A_ub = np.vstack([np.hstack([P, -ones]), np.hstack([-P, -ones])])
    b_ub = np.concatenate([target, -target])
    A_eq = np.hstack([np.ones((1, n_v)), np.zeros((1, 1))])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=[(0, None)] * (n_v + 1), method="highs")
    if res.status != 0:
        logger.warning("membership LP returned status %d: %s", res.status, res.message)
        return np.full(n_v, 1.0 / n_v), float("inf")
    return res.x[:n_v], max(float(res.x[-1]), 0.0)


def central_weights(points: np.ndarray, target: np.ndarray, start: np.ndarray) -> np.ndarray:
    """Convex weights of ``target`` closest to uniform; falls back to ``start``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n_v = points.shape[0]
    center = np.full(n_v, 1.0 / n_v)
    A = np.vstack([points.T, np.ones((1, n_v))])
    b = np.concatenate([np.asarray(target, dtype=float).ravel(), [1.0]])
    res = minimize(
        lambda w: 0.5 * float(np.sum((w - center) ** 2)),
        start,
        jac=lambda w: w - center,
        method="SLSQP",
        bounds=[(0.0, 1.0)] * n_v,
        constraints=[{"type": "eq", "fun": lambda w: A @ w - b, "jac": lambda w: A}],
        options={"ftol": 1e-15, "maxiter": 200},
    )
    if not res.success or np.max(np.abs(A @ res.x - b)) > MEMBERSHIP_TOL:
        return start
    return np.clip(res.x, 0.0, None)


def convex_membership(points: np.ndarray, target: np.ndarray, tol: float = MEMBERSHIP_TOL) -> MembershipResult:
    weights, violation = hull_violation(points, target)
    if violation > tol:
        return MembershipResult(False, None, violation)
    return MembershipResult(True, central_weights(points, target, weights), violation)


def sample_in_polytope(vertices: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples in conv(vertices) by rejection from the bounding box."""
    vertices = np.atleast_2d(np.asarray(vertices, dtype=float))
    tri = Delaunay(vertices)
    lo, hi = vertices.min(axis=0), vertices.max(axis=0)
    out = np.empty((0, vertices.shape[1]))
    while out.shape[0] < n:
        cand = rng.uniform(lo, hi, size=(2 * (n - out.shape[0]) + 8, vertices.shape[1]))
        out = np.vstack([out, cand[tri.find_simplex(cand) >= 0]])
    return out[:n]


def sample_noise_sequences(
    vertices: np.ndarray, n_sequences: int, horizon: int, rng: np.random.Generator, mode: str = "constant"
) -> np.ndarray:
    """Disturbance sequences inside W, shape (n_sequences, horizon, n_s).

    ``constant`` holds one sample over the horizon; ``iid`` redraws every step.
    """
    if mode == "constant":
        w = sample_in_polytope(vertices, n_sequences, rng)
        return np.repeat(w[:, None, :], horizon, axis=1)
    if mode == "iid":
        w = sample_in_polytope(vertices, n_sequences * horizon, rng)
        return w.reshape(n_sequences, horizon, -1)
    raise ValueError("mode must be 'constant' or 'iid'")
