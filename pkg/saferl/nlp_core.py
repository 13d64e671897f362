"""Primal-dual interior-point solver on the relaxed KKT conditions.

A problem is stated symbolically (casadi SX) as

    min_y  Phi(y; theta, s) + d^T g(y)      s.t.  f(y; theta, s) = 0,  h(y; theta, s) <= 0

and compiled once into an :class:`NlpInstance`. The solver drives the residual

    r_tau = [grad_y L;  f;  mu * h + tau]

to zero by damped Newton steps that keep ``h < 0`` and ``mu > 0`` at every
accepted iterate. ``tau`` is held fixed during a solve.

Supported problems have at most quadratic costs and quadratic or bilinear
constraints, so third derivatives in the primal variables vanish.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple, Union

import casadi as csd
import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import DimensionError, SingularKktError, SolverFailure

logger = logging.getLogger(__name__)

Matrix = Union[np.ndarray, scipy.sparse.spmatrix]

# pivot magnitude (relative to the largest) below which an LU is treated as singular
_PIVOT_RTOL = 1e-14
_MAX_REGULARIZATION_ROUNDS = 8


@dataclass(frozen=True)
class SolverConfig:
    tau: float = 1e-2
    residual_tolerance: float = 1e-10  # on ||r_tau||_inf
    max_newton_iterations: int = 200
    fraction_to_boundary: float = 0.995
    regularization_floor: float = 1e-10
    max_backtracks: int = 60
    # KKT systems larger than this are factorized with sparse LU
    sparse_threshold: int = 1500

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if not 0.0 < self.fraction_to_boundary < 1.0:
            raise ValueError("fraction_to_boundary must be in (0, 1)")
        if self.residual_tolerance <= 0:
            raise ValueError("residual_tolerance must be > 0")
        if self.max_newton_iterations < 1:
            raise ValueError("max_newton_iterations must be >= 1")
        if self.regularization_floor < 0:
            raise ValueError("regularization_floor must be >= 0")


@dataclass(frozen=True)
class NlpParams:
    """Numeric values of the three parameter blocks."""

    theta: np.ndarray
    d: np.ndarray
    s: np.ndarray


@dataclass(frozen=True)
class PrimalDualPoint:
    y: np.ndarray
    lam: np.ndarray  # equality multipliers
    mu: np.ndarray  # inequality multipliers
    tau: float

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.y, self.lam, self.mu])

    def moved(self, direction: np.ndarray, alpha: float) -> "PrimalDualPoint":
        n_y, n_eq = self.y.size, self.lam.size
        return PrimalDualPoint(
            y=self.y + alpha * direction[:n_y],
            lam=self.lam + alpha * direction[n_y:n_y + n_eq],
            mu=self.mu + alpha * direction[n_y + n_eq:],
            tau=self.tau,
        )

    def with_tau(self, tau: float) -> "PrimalDualPoint":
        return PrimalDualPoint(self.y, self.lam, self.mu, float(tau))

    def to_dict(self) -> Dict[str, object]:
        return {"y": self.y.tolist(), "lam": self.lam.tolist(), "mu": self.mu.tolist(), "tau": self.tau}

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "PrimalDualPoint":
        return cls(
            y=np.asarray(data["y"], dtype=float),
            lam=np.asarray(data["lam"], dtype=float),
            mu=np.asarray(data["mu"], dtype=float),
            tau=float(data["tau"]),
        )


Initializer = Callable[["NlpInstance", NlpParams, float], PrimalDualPoint]


def _col(v: np.ndarray) -> csd.DM:
    return csd.DM(np.asarray(v, dtype=float).reshape(-1, 1))


def _vec(m: csd.DM) -> np.ndarray:
    return np.asarray(m.full(), dtype=float).ravel()


def _csc(m: csd.DM) -> scipy.sparse.csc_matrix:
    sp = m.sparsity()
    return scipy.sparse.csc_matrix(
        (np.asarray(m.nonzeros(), dtype=float), np.asarray(sp.row(), dtype=int), np.asarray(sp.colind(), dtype=int)),
        shape=m.shape,
    )


class NlpInstance:
    """A compiled parametric NLP and its relaxed-KKT evaluation interface.

    ``y``, ``theta``, ``d`` and ``s`` are casadi SX column symbols; ``eq`` and
    ``ineq`` are SX column expressions (``None`` for none). The disturbance ``d``
    enters the cost linearly through the first ``d.numel()`` primal entries.
    """

    def __init__(
        self,
        name: str,
        y: csd.SX,
        cost: csd.SX,
        theta: csd.SX,
        d: csd.SX,
        s: csd.SX,
        eq: Optional[csd.SX] = None,
        ineq: Optional[csd.SX] = None,
        initializer: Optional[Initializer] = None,
    ):
        eq = csd.SX(0, 1) if eq is None else eq
        ineq = csd.SX(0, 1) if ineq is None else ineq
        self.name = name
        self.n_y = y.numel()
        self.n_eq = eq.numel()
        self.n_in = ineq.numel()
        self.n_theta = theta.numel()
        self.n_d = d.numel()
        self.n_s = s.numel()
        if self.n_d > self.n_y:
            raise DimensionError(f"{name}: disturbance dimension {self.n_d} exceeds primal dimension {self.n_y}")
        self._initializer = initializer

        lam = csd.SX.sym("lam", self.n_eq)
        mu = csd.SX.sym("mu", self.n_in)
        tau = csd.SX.sym("tau")
        objective = cost + csd.mtimes(d.T, y[: self.n_d])
        lagrangian = objective + csd.mtimes(lam.T, eq) + csd.mtimes(mu.T, ineq)
        complementarity = mu * ineq + tau if self.n_in else csd.SX(0, 1)
        residual = csd.vertcat(csd.gradient(lagrangian, y), eq, complementarity)
        z = csd.vertcat(y, lam, mu)
        args = [z, tau, theta, d, s]
        self.n_z = z.numel()

        self._residual = csd.Function(f"{name}_residual", args, [residual])
        self._jac_z = csd.Function(f"{name}_jac_z", args, [csd.jacobian(residual, z)])
        self._jac_params = csd.Function(
            f"{name}_jac_params",
            args,
            [csd.jacobian(residual, theta), csd.jacobian(residual, d), csd.jacobian(residual, s)],
        )
        # second directional derivative of r in the joint (z, d) space
        zd = csd.vertcat(z, d)
        va = csd.SX.sym("va", zd.numel())
        vb = csd.SX.sym("vb", zd.numel())
        d2r = csd.jtimes(csd.jtimes(residual, zd, va), zd, vb)
        self._second = csd.Function(f"{name}_d2r", args + [va, vb], [d2r])
        self._ineq = csd.Function(f"{name}_ineq", [y, theta, d, s], [ineq])

    def __repr__(self) -> str:
        return f"NlpInstance({self.name!r}, n_y={self.n_y}, n_eq={self.n_eq}, n_in={self.n_in})"

    # ---- parameters and points -------------------------------------------------

    def params(self, theta=None, d=None, s=None) -> NlpParams:
        blocks = {}
        for label, value, size in (("theta", theta, self.n_theta), ("d", d, self.n_d), ("s", s, self.n_s)):
            arr = np.zeros(size) if value is None else np.asarray(value, dtype=float).ravel()
            if arr.size != size:
                raise DimensionError(f"{self.name}: {label} has size {arr.size}, expected {size}")
            blocks[label] = arr
        return NlpParams(**blocks)

    def split(self, z: np.ndarray, tau: float) -> PrimalDualPoint:
        z = np.asarray(z, dtype=float)
        if z.size != self.n_z:
            raise DimensionError(f"{self.name}: z has size {z.size}, expected {self.n_z}")
        return PrimalDualPoint(z[: self.n_y], z[self.n_y:self.n_y + self.n_eq], z[self.n_y + self.n_eq:], float(tau))

    def initial_point(self, params: NlpParams, tau: float) -> PrimalDualPoint:
        if self._initializer is not None:
            return self._initializer(self, params, tau)
        y = np.zeros(self.n_y)
        h = self.inequality_values(y, params)
        if np.any(h >= 0):
            raise ValueError(f"{self.name}: y = 0 is not strictly interior; supply an initializer")
        return PrimalDualPoint(y, np.zeros(self.n_eq), tau / -h, float(tau))

    def _check(self, point: PrimalDualPoint) -> None:
        if point.y.size != self.n_y or point.lam.size != self.n_eq or point.mu.size != self.n_in:
            raise DimensionError(
                f"{self.name}: point sizes ({point.y.size}, {point.lam.size}, {point.mu.size}) "
                f"do not match ({self.n_y}, {self.n_eq}, {self.n_in})"
            )

    def _args(self, point: PrimalDualPoint, params: NlpParams) -> List[csd.DM]:
        self._check(point)
        return [_col(point.z), csd.DM(point.tau), _col(params.theta), _col(params.d), _col(params.s)]

    # ---- evaluation interface --------------------------------------------------

    def residual(self, point: PrimalDualPoint, params: NlpParams) -> np.ndarray:
        return _vec(self._residual(*self._args(point, params)))

    def residual_jacobian(self, point: PrimalDualPoint, params: NlpParams, sparse: bool = False) -> Matrix:
        jac = self._jac_z(*self._args(point, params))
        return _csc(jac) if sparse else np.asarray(jac.full(), dtype=float)

    def parameter_jacobians(self, point: PrimalDualPoint, params: NlpParams) -> Dict[str, np.ndarray]:
        jt, jd, js = self._jac_params.call(self._args(point, params))
        return {
            "theta": np.asarray(jt.full(), dtype=float),
            "d": np.asarray(jd.full(), dtype=float),
            "s": np.asarray(js.full(), dtype=float),
        }

    def second_directional(self, point: PrimalDualPoint, params: NlpParams, va: np.ndarray, vb: np.ndarray) -> np.ndarray:
        """D^2 r[va, vb] with directions in the joint (z, d) space."""
        return _vec(self._second(*self._args(point, params), _col(va), _col(vb)))

    def inequality_values(self, y: np.ndarray, params: NlpParams) -> np.ndarray:
        return _vec(self._ineq(_col(y), _col(params.theta), _col(params.d), _col(params.s)))

    def is_interior(self, point: PrimalDualPoint, params: NlpParams) -> bool:
        return bool(np.all(point.mu > 0) and np.all(self.inequality_values(point.y, params) < 0))


# ---- linear algebra -----------------------------------------------------------


class KktFactorization:
    """LU factors of a (possibly regularized) KKT matrix."""

    def __init__(self, solve: Callable[[np.ndarray], np.ndarray], regularization: float, sparse: bool):
        self._solve = solve
        self.regularization = regularization
        self.sparse = sparse

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        out = self._solve(np.asarray(rhs, dtype=float))
        if not np.all(np.isfinite(out)):
            raise SingularKktError("back-substitution", "non-finite solution")
        return out


def _lu(matrix: Matrix) -> Tuple[Optional[Callable[[np.ndarray], np.ndarray]], np.ndarray]:
    if scipy.sparse.issparse(matrix):
        try:
            lu = scipy.sparse.linalg.splu(scipy.sparse.csc_matrix(matrix))
        except RuntimeError:
            return None, np.zeros(1)
        return lu.solve, np.abs(lu.U.diagonal())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        factors = scipy.linalg.lu_factor(matrix)
    return (lambda rhs: scipy.linalg.lu_solve(factors, rhs)), np.abs(np.diag(factors[0]))


def _singular(pivots: np.ndarray) -> bool:
    if pivots.size == 0:
        return False
    top = float(pivots.max())
    return not np.isfinite(top) or top == 0.0 or float(pivots.min()) <= _PIVOT_RTOL * top


def factorize_kkt(
    matrix: Matrix,
    label: str,
    n_y: int = 0,
    n_eq: int = 0,
    regularization_floor: Optional[float] = None,
) -> KktFactorization:
    """Factorize ``matrix``; with a floor given, retry with diagonal regularization.

    Regularization adds ``+delta`` on the primal block and ``-delta`` on the
    equality-multiplier block, starting at the floor and growing 100x per round.
    """
    sparse = scipy.sparse.issparse(matrix)
    solve, pivots = _lu(matrix)
    if solve is not None and not _singular(pivots):
        return KktFactorization(solve, 0.0, sparse)
    if regularization_floor is None:
        raise SingularKktError(label)

    n = matrix.shape[0]
    delta = max(regularization_floor, 1e-12)
    for _ in range(_MAX_REGULARIZATION_ROUNDS):
        diag = np.zeros(n)
        diag[:n_y] = delta
        diag[n_y:n_y + n_eq] = -delta
        shifted = matrix + (scipy.sparse.diags(diag) if sparse else np.diag(diag))
        solve, pivots = _lu(shifted)
        if solve is not None and not _singular(pivots):
            logger.warning("%s: KKT matrix regularized with delta=%.1e", label, delta)
            return KktFactorization(solve, delta, sparse)
        delta *= 100.0
    raise SingularKktError(label, f"still singular after regularization up to {delta / 100.0:.1e}")


# ---- Newton iteration ---------------------------------------------------------


def evaluate_residual(inst: NlpInstance, z: PrimalDualPoint, params: NlpParams) -> np.ndarray:
    """Stacked relaxed-KKT residual [stationarity; f; mu*h + tau]."""
    return inst.residual(z, params)


def newton_step(
    inst: NlpInstance, z: PrimalDualPoint, params: NlpParams, config: SolverConfig
) -> Tuple[np.ndarray, float]:
    r = inst.residual(z, params)
    sparse = inst.n_z > config.sparse_threshold
    jac = inst.residual_jacobian(z, params, sparse=sparse)
    factor = factorize_kkt(jac, f"{inst.name} Newton", inst.n_y, inst.n_eq, config.regularization_floor)
    direction = factor.solve(-r)

    # fraction to the boundary on mu
    dmu = direction[inst.n_y + inst.n_eq:]
    alpha = 1.0
    shrinking = dmu < 0
    if np.any(shrinking):
        alpha = min(1.0, float(np.min(-config.fraction_to_boundary * z.mu[shrinking] / dmu[shrinking])))

    h_now = inst.inequality_values(z.y, params)
    h_bound = (1.0 - config.fraction_to_boundary) * h_now
    merit = float(np.linalg.norm(r))
    for _ in range(config.max_backtracks):
        trial = z.moved(direction, alpha)
        if np.all(inst.inequality_values(trial.y, params) <= h_bound):
            if float(np.linalg.norm(inst.residual(trial, params))) < merit:
                return direction, alpha
        alpha *= 0.5
    raise SolverFailure(f"{inst.name}: backtracking failed to reduce the residual", z, float(np.max(np.abs(r))))


def solve(
    inst: NlpInstance,
    params: NlpParams,
    config: SolverConfig = SolverConfig(),
    warm_start: Optional[PrimalDualPoint] = None,
    history: Optional[List[float]] = None,
) -> PrimalDualPoint:
    """Solve the relaxed KKT system at ``config.tau``.

    ``history``, when given, receives the 2-norm of the residual at every
    accepted iterate (starting point included).
    """
    z = inst.initial_point(params, config.tau) if warm_start is None else warm_start.with_tau(config.tau)
    if not inst.is_interior(z, params):
        raise ValueError(f"{inst.name}: starting point is not strictly interior (need h < 0, mu > 0)")

    r = inst.residual(z, params)
    for it in range(config.max_newton_iterations + 1):
        if history is not None:
            history.append(float(np.linalg.norm(r)))
        r_inf = float(np.max(np.abs(r))) if r.size else 0.0
        if r_inf <= config.residual_tolerance:
            logger.debug("%s: converged in %d iterations (|r|=%.2e)", inst.name, it, r_inf)
            return z
        if it == config.max_newton_iterations:
            break
        try:
            direction, alpha = newton_step(inst, z, params, config)
        except SolverFailure as exc:
            raise SolverFailure(f"{inst.name}: line search stalled", z, r_inf, it) from exc
        except SingularKktError as exc:
            raise SolverFailure(f"{inst.name}: {exc}", z, r_inf, it) from exc
        z = z.moved(direction, alpha)
        r = inst.residual(z, params)
        logger.debug("%s: iter %d alpha=%.3e |r|=%.3e", inst.name, it, alpha, float(np.max(np.abs(r))))
    raise SolverFailure(f"{inst.name}: maximum Newton iterations exceeded", z, r_inf, config.max_newton_iterations)
