"""Robust multi-model linear MPC used as the learned policy.

Scenario j = 0 is the nominal model; scenarios j = 1..N_M add the constant
disturbance vertex W^j. All scenarios share the first-stage inputs u_{0,k};
scenario inputs follow the ancillary law u_{j,k} = u_{0,k} - K (x_{j,k} - x_{0,k})
and are substituted out, so the primal vector is

    y = [u_{0,0}, ..., u_{0,N-1}, x_{0,1..N}, x_{1,1..N}, ..., x_{N_M,1..N}].

The flat parameter vector orders the blocks x_bar, u_bar, A0, B0, b0, K, W
with matrices stored row-major and W as vertex after vertex.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import casadi as csd
import numpy as np
import scipy.linalg

from .errors import DimensionError, RiccatiError
from .geometry import MEMBERSHIP_TOL, MembershipResult, convex_membership, hull_violation
from .nlp_core import NlpInstance, NlpParams, PrimalDualPoint

logger = logging.getLogger(__name__)

THETA_BLOCKS = ("x_bar", "u_bar", "A0", "B0", "b0", "K", "W")


@dataclass(frozen=True)
class MpcDims:
    N: int = 10  # horizon
    N_M: int = 4  # disturbance scenarios
    n_s: int = 2
    n_a: int = 2

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.N_M < 1:
            raise ValueError("N_M must be >= 1")
        if self.n_s < 1 or self.n_a < 1:
            raise ValueError("n_s and n_a must be >= 1")

    @property
    def theta_size(self) -> int:
        return sum(sl.stop - sl.start for sl in theta_block_slices(self).values())

    @property
    def n_primal(self) -> int:
        return self.n_a * self.N + self.n_s * self.N * (self.N_M + 1)


def theta_block_slices(dims: MpcDims) -> "OrderedDict[str, slice]":
    n_s, n_a = dims.n_s, dims.n_a
    sizes = (n_s, n_a, n_s * n_s, n_s * n_a, n_s, n_a * n_s, dims.N_M * n_s)
    out: "OrderedDict[str, slice]" = OrderedDict()
    start = 0
    for name, size in zip(THETA_BLOCKS, sizes):
        out[name] = slice(start, start + size)
        start += size
    return out


@dataclass(frozen=True)
class PolytopeW:
    vertices: np.ndarray  # N_M x n_s, one vertex per row

    def __post_init__(self) -> None:
        v = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if v.shape[0] < 1:
            raise ValueError("W needs at least one vertex")
        object.__setattr__(self, "vertices", v)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    def contains(self, point: np.ndarray, tol: float = MEMBERSHIP_TOL) -> bool:
        return hull_violation(self.vertices, point)[1] <= tol


@dataclass(frozen=True)
class ThetaParams:
    x_bar: np.ndarray
    u_bar: np.ndarray
    A0: np.ndarray
    B0: np.ndarray
    b0: np.ndarray
    K: np.ndarray
    W: PolytopeW

    def __post_init__(self) -> None:
        n_s = np.asarray(self.x_bar).size
        n_a = np.asarray(self.u_bar).size
        shapes = {
            "A0": (n_s, n_s),
            "B0": (n_s, n_a),
            "K": (n_a, n_s),
        }
        for name, shape in shapes.items():
            if np.shape(getattr(self, name)) != shape:
                raise DimensionError(f"{name} has shape {np.shape(getattr(self, name))}, expected {shape}")
        if np.asarray(self.b0).size != n_s:
            raise DimensionError(f"b0 has size {np.asarray(self.b0).size}, expected {n_s}")
        if self.W.vertices.shape[1] != n_s:
            raise DimensionError(f"W vertices have dimension {self.W.vertices.shape[1]}, expected {n_s}")

    def dims(self, N: int = 10) -> MpcDims:
        return MpcDims(N=N, N_M=self.W.n_vertices, n_s=self.x_bar.size, n_a=self.u_bar.size)

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [
                np.ravel(self.x_bar),
                np.ravel(self.u_bar),
                np.ravel(self.A0),
                np.ravel(self.B0),
                np.ravel(self.b0),
                np.ravel(self.K),
                np.ravel(self.W.vertices),
            ]
        ).astype(float)

    @classmethod
    def from_vector(cls, vec: np.ndarray, dims: MpcDims) -> "ThetaParams":
        vec = np.asarray(vec, dtype=float).ravel()
        if vec.size != dims.theta_size:
            raise DimensionError(f"theta vector has size {vec.size}, expected {dims.theta_size}")
        sl = theta_block_slices(dims)
        n_s, n_a = dims.n_s, dims.n_a
        return cls(
            x_bar=vec[sl["x_bar"]].copy(),
            u_bar=vec[sl["u_bar"]].copy(),
            A0=vec[sl["A0"]].reshape(n_s, n_s).copy(),
            B0=vec[sl["B0"]].reshape(n_s, n_a).copy(),
            b0=vec[sl["b0"]].copy(),
            K=vec[sl["K"]].reshape(n_a, n_s).copy(),
            W=PolytopeW(vec[sl["W"]].reshape(dims.N_M, n_s).copy()),
        )

    def model_prediction(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        """F0(s, a) = A0 s + B0 a + b0."""
        return self.A0 @ np.asarray(s, dtype=float) + self.B0 @ np.asarray(a, dtype=float) + self.b0


def theta_names(dims: MpcDims) -> List[str]:
    """Column labels for the flat parameter vector."""
    n_s, n_a = dims.n_s, dims.n_a
    names = [f"x_bar[{i}]" for i in range(n_s)] + [f"u_bar[{i}]" for i in range(n_a)]
    names += [f"A0[{i},{j}]" for i in range(n_s) for j in range(n_s)]
    names += [f"B0[{i},{j}]" for i in range(n_s) for j in range(n_a)]
    names += [f"b0[{i}]" for i in range(n_s)]
    names += [f"K[{i},{j}]" for i in range(n_a) for j in range(n_s)]
    names += [f"W{v + 1}[{i}]" for v in range(dims.N_M) for i in range(n_s)]
    return names


# ---- symbolic problem -----------------------------------------------------------


def _row_major(vec: csd.SX, rows: int, cols: int) -> csd.SX:
    return csd.reshape(vec, cols, rows).T


def symbolic_blocks(theta: csd.SX, dims: MpcDims) -> Dict[str, csd.SX]:
    """Unpack a symbolic flat parameter vector; "W" is n_s x N_M, one vertex per column."""
    sl = theta_block_slices(dims)
    n_s, n_a = dims.n_s, dims.n_a
    return {
        "x_bar": theta[sl["x_bar"]],
        "u_bar": theta[sl["u_bar"]],
        "A0": _row_major(theta[sl["A0"]], n_s, n_s),
        "B0": _row_major(theta[sl["B0"]], n_s, n_a),
        "b0": theta[sl["b0"]],
        "K": _row_major(theta[sl["K"]], n_a, n_s),
        "W": csd.reshape(theta[sl["W"]], n_s, dims.N_M),
    }


def _interior_start(dims: MpcDims):
    def start(inst: NlpInstance, params: NlpParams, tau: float) -> PrimalDualPoint:
        theta = ThetaParams.from_vector(params.theta, dims)
        x = params.s.copy()
        traj = np.zeros((dims.N, dims.n_s))
        for k in range(dims.N):
            x = theta.model_prediction(x, theta.u_bar)
            traj[k] = x
        traj *= 0.99 / max(1.0, float(np.max(np.linalg.norm(traj, axis=1))))
        u = np.tile(theta.u_bar, dims.N)
        y = np.concatenate([u] + [traj.ravel()] * (dims.N_M + 1))
        h = inst.inequality_values(y, params)
        return PrimalDualPoint(y, np.zeros(inst.n_eq), tau / -h, float(tau))

    return start


@lru_cache(maxsize=8)
def mpc_program(dims: MpcDims) -> NlpInstance:
    """Compile the scenario MPC for ``dims`` (cached; parameters stay symbolic)."""
    n_s, n_a, N, N_M = dims.n_s, dims.n_a, dims.N, dims.N_M
    theta = csd.SX.sym("theta", dims.theta_size)
    s = csd.SX.sym("s", n_s)
    d = csd.SX.sym("d", n_a)
    blocks = symbolic_blocks(theta, dims)
    x_bar, u_bar, b0 = blocks["x_bar"], blocks["u_bar"], blocks["b0"]
    A0, B0, K = blocks["A0"], blocks["B0"], blocks["K"]
    W = [csd.SX.zeros(n_s, 1)] + [blocks["W"][:, i] for i in range(N_M)]

    U = csd.SX.sym("u", n_a, N)
    X = [csd.SX.sym(f"x{j}", n_s, N) for j in range(N_M + 1)]
    y = csd.vertcat(csd.vec(U), *[csd.vec(Xj) for Xj in X])

    cost = 0
    eq = []
    ineq = []
    for j in range(N_M + 1):
        x_prev = s
        for k in range(N):
            if j == 0:
                u = U[:, k]
            else:
                x_nom = s if k == 0 else X[0][:, k - 1]
                u = U[:, k] - csd.mtimes(K, x_prev - x_nom)
            cost += csd.sumsqr(x_prev - x_bar) + csd.sumsqr(u - u_bar)
            x_next = X[j][:, k]
            eq.append(x_next - (csd.mtimes(A0, x_prev) + csd.mtimes(B0, u) + b0 + W[j]))
            ineq.append(csd.sumsqr(x_next) - 1)
            x_prev = x_next
        cost += csd.sumsqr(x_prev - x_bar)

    return NlpInstance(
        f"mpc_N{N}_M{N_M}",
        y,
        cost,
        theta,
        d,
        s,
        eq=csd.vertcat(*eq),
        ineq=csd.vertcat(*ineq),
        initializer=_interior_start(dims),
    )


@dataclass(frozen=True)
class MpcInstance:
    nlp: NlpInstance
    params: NlpParams
    tau: float
    dims: MpcDims = field(default_factory=MpcDims)


def build_mpc_nlp(
    theta: ThetaParams, s: np.ndarray, dims: MpcDims, d: Optional[np.ndarray] = None, tau: float = 1e-2
) -> MpcInstance:
    if theta.dims(dims.N) != dims:
        raise DimensionError(f"theta dimensions {theta.dims(dims.N)} do not match {dims}")
    nlp = mpc_program(dims)
    return MpcInstance(nlp, nlp.params(theta.to_vector(), d, s), float(tau), dims)


def unpack_solution(y: np.ndarray, dims: MpcDims) -> Tuple[np.ndarray, np.ndarray]:
    """Split the primal vector into u0 (N x n_a) and states (N_M+1 x N x n_s)."""
    y = np.asarray(y, dtype=float)
    n_u = dims.N * dims.n_a
    u0 = y[:n_u].reshape(dims.N, dims.n_a)
    X = y[n_u:].reshape(dims.N_M + 1, dims.N, dims.n_s)
    return u0, X


def scenario_inputs(theta: ThetaParams, s: np.ndarray, y: np.ndarray, dims: MpcDims) -> np.ndarray:
    """Reconstruct u_{j,k} for every scenario, shape (N_M+1, N, n_a)."""
    u0, X = unpack_solution(y, dims)
    out = np.zeros((dims.N_M + 1, dims.N, dims.n_a))
    for j in range(dims.N_M + 1):
        for k in range(dims.N):
            x_prev = s if k == 0 else X[j, k - 1]
            x_nom = s if k == 0 else X[0, k - 1]
            out[j, k] = u0[k] - theta.K @ (x_prev - x_nom)
    return out


def steady_state_input(theta: ThetaParams) -> np.ndarray:
    """Least-squares u_bar with B0 u_bar = (I - A0) x_bar - b0."""
    n_a = theta.B0.shape[1]
    if np.linalg.matrix_rank(theta.B0) < n_a:
        raise ValueError("B0 must have full column rank for a steady-state input")
    rhs = (np.eye(theta.A0.shape[0]) - theta.A0) @ theta.x_bar - theta.b0
    u_bar, *_ = np.linalg.lstsq(theta.B0, rhs, rcond=None)
    return u_bar


def lqr_gain(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray, tol: float = 1e-8) -> Tuple[np.ndarray, np.ndarray, float]:
    """Infinite-horizon discrete LQR for u = -K x. Returns (K, P, Riccati residual)."""
    try:
        P = scipy.linalg.solve_discrete_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise RiccatiError(f"discrete Riccati equation has no stabilizing solution: {exc}") from exc
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    residual = float(np.linalg.norm(A.T @ P @ A - P - A.T @ P @ B @ K + Q))
    if not np.isfinite(residual) or residual > tol * max(1.0, float(np.linalg.norm(P))):
        raise RiccatiError(f"Riccati residual {residual:.3e} above tolerance")
    return K, P, residual


# ---- safety geometry ------------------------------------------------------------


@dataclass(frozen=True)
class HullReport:
    sequences: int
    checked: int  # number of (sequence, stage) membership tests
    violations: int
    max_violation: float


def hull_containment_check(
    theta: ThetaParams,
    point: PrimalDualPoint,
    s: np.ndarray,
    dims: MpcDims,
    noise_samples: np.ndarray,
    tol: float = MEMBERSHIP_TOL,
) -> HullReport:
    """Simulate the nominal model with noise sequences under the ancillary law and
    test x_k in conv(x_{1,k}, ..., x_{N_M,k}) for k = 1..N.

    ``noise_samples`` has shape (n_sequences, N, n_s).
    """
    noise = np.asarray(noise_samples, dtype=float)
    if noise.ndim != 3 or noise.shape[1:] != (dims.N, dims.n_s):
        raise DimensionError(f"noise_samples must have shape (n, {dims.N}, {dims.n_s})")
    u0, X = unpack_solution(point.y, dims)
    s = np.asarray(s, dtype=float)
    violations = 0
    worst = 0.0
    for seq in noise:
        x = s.copy()
        for k in range(dims.N):
            x_nom = s if k == 0 else X[0, k - 1]
            u = u0[k] - theta.K @ (x - x_nom)
            x = theta.model_prediction(x, u) + seq[k]
            _, viol = hull_violation(X[1:, k], x)
            worst = max(worst, viol)
            if viol > tol:
                violations += 1
    report = HullReport(noise.shape[0], noise.shape[0] * dims.N, violations, worst)
    if violations:
        logger.info("hull containment: %d of %d stages outside the scenario hull", violations, report.checked)
    return report


def membership_residual(
    theta: ThetaParams, s: np.ndarray, a: np.ndarray, s_plus: np.ndarray, tol: float = MEMBERSHIP_TOL
) -> MembershipResult:
    """Is s_plus - F0(s, a) a convex combination of the W vertices?"""
    residual = np.asarray(s_plus, dtype=float) - theta.model_prediction(s, a)
    return convex_membership(theta.W.vertices, residual, tol)


def count_membership_violations(theta: ThetaParams, states, actions, next_states, tol: float = MEMBERSHIP_TOL) -> Tuple[int, List[int]]:
    bad = [
        i
        for i, (s, a, sp) in enumerate(zip(states, actions, next_states))
        if not theta.W.contains(np.asarray(sp, dtype=float) - theta.model_prediction(s, a), tol)
    ]
    return len(bad), bad
