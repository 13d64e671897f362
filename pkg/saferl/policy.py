"""Deterministic policy, safe exploration and the exploration corrections.

The policy is the first input of a parametric NLP solved at relaxation ``tau``.
Exploration perturbs the NLP cost by ``d^T u0`` with ``d ~ N(0, sigma * Sigma)``,
so every explored action is still a solution of the constrained problem.
``M`` and ``c`` are the asymptotic inverse covariance and mean of the resulting
action perturbation ``e = a - pi``, computed from first- and second-order
sensitivities of the d = 0 solution.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Literal, Optional, Tuple, Union

import numpy as np

from .errors import SingularCovarianceError, SolverFailure
from .mpc_scheme import ThetaParams
from .nlp_core import NlpInstance, NlpParams, PrimalDualPoint, SolverConfig, solve
from .sensitivities import SensitivityBundle, full_sensitivities, policy_jacobians

logger = logging.getLogger(__name__)

MMode = Literal["plain_inverse", "pseudo_inverse"]
ThetaLike = Union[ThetaParams, np.ndarray]

# condition number of dg_dd Sigma dg_dd^T beyond which plain inversion is refused
_MAX_CONDITION = 1e12


@dataclass(frozen=True)
class ExplorationConfig:
    sigma: float = 1e-3
    Sigma: np.ndarray = field(default_factory=lambda: np.eye(2))
    tau: float = 1e-2
    m_mode: MMode = "plain_inverse"
    pinv_floor: float = 1e-8  # relative to the largest singular value
    # False: classic approximator with M = I and c = 0
    use_corrections: bool = True

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.m_mode not in ("plain_inverse", "pseudo_inverse"):
            raise ValueError("m_mode must be 'plain_inverse' or 'pseudo_inverse'")
        S = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        if S.shape[0] != S.shape[1] or not np.allclose(S, S.T):
            raise ValueError("Sigma must be a symmetric matrix")
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise ValueError("Sigma must be positive definite") from exc
        object.__setattr__(self, "Sigma", S)

    @property
    def covariance(self) -> np.ndarray:
        return self.sigma * self.Sigma


@dataclass(frozen=True)
class ExplorationStats:
    M: np.ndarray
    c: np.ndarray
    nabla_theta_pi: np.ndarray  # n_theta x n_a
    bundle: SensitivityBundle


@dataclass(frozen=True)
class ExplorationRecord:
    s: np.ndarray
    a: np.ndarray
    e: np.ndarray
    pi: np.ndarray
    nabla_theta_pi: np.ndarray
    M: np.ndarray
    c: np.ndarray

    def to_dict(self) -> Dict[str, Any]:
        return {
            "s": self.s.tolist(),
            "a": self.a.tolist(),
            "e": self.e.tolist(),
            "pi": self.pi.tolist(),
            "nabla_theta_pi": self.nabla_theta_pi.tolist(),
            "M": self.M.tolist(),
            "c": self.c.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExplorationRecord":
        return cls(**{k: np.asarray(data[k], dtype=float) for k in ("s", "a", "e", "pi", "nabla_theta_pi", "M", "c")})


@dataclass(frozen=True)
class ExplorationStep:
    a: np.ndarray
    record: ExplorationRecord
    point: PrimalDualPoint  # d = 0 solution, reusable as a warm start


def random_stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for (seed, keys...), e.g. (seed, rl_step, rollout, t)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + [int(k) for k in keys]))


def _theta_vector(theta: ThetaLike) -> np.ndarray:
    return theta.to_vector() if isinstance(theta, ThetaParams) else np.asarray(theta, dtype=float).ravel()


def _solver(solver: SolverConfig, tau: float) -> SolverConfig:
    return solver if solver.tau == tau else replace(solver, tau=tau)


def deterministic_action(
    nlp: NlpInstance,
    theta: ThetaLike,
    s: Optional[np.ndarray],
    solver: SolverConfig = SolverConfig(),
    warm_start: Optional[PrimalDualPoint] = None,
) -> Tuple[np.ndarray, PrimalDualPoint]:
    params = nlp.params(_theta_vector(theta), None, s)
    point = solve(nlp, params, solver, warm_start=warm_start)
    return point.y[: nlp.n_d].copy(), point


def correction_matrices(bundle: SensitivityBundle, config: ExplorationConfig) -> Tuple[np.ndarray, np.ndarray]:
    """M = (dg_dd Sigma dg_dd^T)^-1 and c = 1/2 sum_ij d2g/dd_i dd_j (sigma Sigma)_ij."""
    n_a = bundle.dg_dd.shape[0]
    if not config.use_corrections:
        return np.eye(n_a), np.zeros(n_a)
    G = bundle.dg_dd @ config.Sigma @ bundle.dg_dd.T
    G = 0.5 * (G + G.T)
    if config.m_mode == "plain_inverse":
        if np.linalg.cond(G) > _MAX_CONDITION:
            raise SingularCovarianceError(
                "dg_dd Sigma dg_dd^T is numerically singular (strongly active constraint); use m_mode='pseudo_inverse'"
            )
        M = np.linalg.inv(G)
    else:
        U, sv, _ = np.linalg.svd(G)
        keep = sv > config.pinv_floor * sv[0]
        M = (U[:, keep] / sv[keep]) @ U[:, keep].T
    M = 0.5 * (M + M.T)
    d2g = bundle.d2g_dd2 if bundle.d2g_dd2 is not None else np.zeros((n_a, n_a, n_a))
    c = 0.5 * np.einsum("kij,ij->k", d2g, config.covariance)
    return M, c


def exploration_stats(
    nlp: NlpInstance, point: PrimalDualPoint, params: NlpParams, config: ExplorationConfig
) -> ExplorationStats:
    bundle = full_sensitivities(nlp, point, params)
    M, c = correction_matrices(bundle, config)
    nabla_theta_pi, _ = policy_jacobians(bundle)
    return ExplorationStats(M=M, c=c, nabla_theta_pi=nabla_theta_pi, bundle=bundle)


def draw_disturbance(config: ExplorationConfig, rng: np.random.Generator) -> np.ndarray:
    L = np.linalg.cholesky(config.covariance)
    return L @ rng.standard_normal(L.shape[0])


def explore_step(
    nlp: NlpInstance,
    theta: ThetaLike,
    s: Optional[np.ndarray],
    config: ExplorationConfig,
    rng: np.random.Generator,
    solver: SolverConfig = SolverConfig(),
    d: Optional[np.ndarray] = None,
    warm_start: Optional[PrimalDualPoint] = None,
) -> ExplorationStep:
    """Solve twice: d = 0 for pi and the statistics, then the disturbed problem."""
    solver = _solver(solver, config.tau)
    theta_vec = _theta_vector(theta)
    pi, point = deterministic_action(nlp, theta_vec, s, solver, warm_start)
    stats = exploration_stats(nlp, point, nlp.params(theta_vec, None, s), config)

    forced = d is not None
    attempts = 1 if forced else 2
    for attempt in range(attempts):
        dist = np.asarray(d, dtype=float) if forced else draw_disturbance(config, rng)
        try:
            disturbed = solve(nlp, nlp.params(theta_vec, dist, s), solver, warm_start=point)
            break
        except SolverFailure:
            if attempt + 1 == attempts:
                raise
            logger.warning("%s: disturbed solve failed, retrying with a fresh draw", nlp.name)
    a = disturbed.y[: nlp.n_d].copy()
    record = ExplorationRecord(
        s=np.zeros(0) if s is None else np.asarray(s, dtype=float).copy(),
        a=a,
        e=a - pi,
        pi=pi,
        nabla_theta_pi=stats.nabla_theta_pi,
        M=stats.M,
        c=stats.c,
    )
    return ExplorationStep(a=a, record=record, point=point)


def explore_action(
    nlp: NlpInstance,
    theta: ThetaLike,
    s: Optional[np.ndarray],
    config: ExplorationConfig,
    rng: np.random.Generator,
    solver: SolverConfig = SolverConfig(),
    d: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, ExplorationRecord]:
    step = explore_step(nlp, theta, s, config, rng, solver, d)
    return step.a, step.record


# ---- range-space diagnostic -------------------------------------------------------


@dataclass(frozen=True)
class RangeDiagnostic:
    residuals: np.ndarray  # per parameter, ||(I - P_range) dg/dtheta_k||
    relative: np.ndarray  # residuals / ||dg/dtheta_k|| (zero columns give zero)
    rank: int

    def unexplored(self, threshold: float = 1e-6) -> np.ndarray:
        return np.flatnonzero(self.residuals > threshold)


def range_diagnostic(bundle: SensitivityBundle, config: ExplorationConfig) -> RangeDiagnostic:
    """Project each column of dg/dtheta onto range(dg_dd Sigma dg_dd^T).

    Large residuals mark parameter directions the constrained exploration
    cannot excite.
    """
    G = bundle.dg_dd @ config.Sigma @ bundle.dg_dd.T
    U, sv, _ = np.linalg.svd(0.5 * (G + G.T))
    keep = sv > config.pinv_floor * sv[0] if sv.size and sv[0] > 0 else np.zeros(sv.size, dtype=bool)
    Q = U[:, keep]
    cols = bundle.dg_dtheta
    resid = np.linalg.norm(cols - Q @ (Q.T @ cols), axis=0)
    norms = np.linalg.norm(cols, axis=0)
    relative = np.divide(resid, norms, out=np.zeros_like(resid), where=norms > 0)
    return RangeDiagnostic(residuals=resid, relative=relative, rank=int(keep.sum()))


# ---- Monte-Carlo check of the statistics ----------------------------------------


@dataclass(frozen=True)
class SampledExploration:
    e: np.ndarray  # n_samples x n_a
    mean: np.ndarray
    cov: np.ndarray
    standard_error: float  # of the mean, Euclidean norm
    compatibility: np.ndarray  # (1/sigma) mean of grad_theta pi M (e - c) e^T
    stats: ExplorationStats


def standard_normals(rng: np.random.Generator, n: int, dim: int, moment_matching: bool = True) -> np.ndarray:
    """n x dim standard normal draws; with moment matching the sample mean is
    zero and the sample covariance (ddof=1) is exactly the identity."""
    xi = rng.standard_normal((n, dim))
    if moment_matching and n > dim + 1:
        xi = xi - xi.mean(axis=0)
        L = np.linalg.cholesky(np.cov(xi, rowvar=False).reshape(dim, dim))
        xi = np.linalg.solve(L, xi.T).T
    return xi


def sample_exploration(
    nlp: NlpInstance,
    theta: ThetaLike,
    s: Optional[np.ndarray],
    config: ExplorationConfig,
    n_samples: int,
    rng: Optional[np.random.Generator] = None,
    solver: SolverConfig = SolverConfig(),
    xi: Optional[np.ndarray] = None,
) -> SampledExploration:
    """Empirical distribution of e = a - pi under d ~ N(0, sigma Sigma).

    Pass ``xi`` (standard normal draws) to reuse common random numbers across
    configurations.
    """
    solver = _solver(solver, config.tau)
    theta_vec = _theta_vector(theta)
    pi, point = deterministic_action(nlp, theta_vec, s, solver)
    stats = exploration_stats(nlp, point, nlp.params(theta_vec, None, s), config)
    if xi is None:
        xi = standard_normals(rng if rng is not None else np.random.default_rng(0), n_samples, nlp.n_d)
    dist = xi @ np.linalg.cholesky(config.covariance).T
    e = np.empty_like(dist)
    for i, d in enumerate(dist):
        z = solve(nlp, nlp.params(theta_vec, d, s), solver, warm_start=point)
        e[i] = z.y[: nlp.n_d] - pi
    mean = e.mean(axis=0)
    cov = np.cov(e, rowvar=False).reshape(nlp.n_d, nlp.n_d)
    se = float(np.sqrt(np.sum(np.diag(cov)) / e.shape[0]))
    centered = e - stats.c
    compat = stats.nabla_theta_pi @ stats.M @ (centered.T @ e) / (e.shape[0] * config.sigma)
    return SampledExploration(e=e, mean=mean, cov=cov, standard_error=se, compatibility=compat, stats=stats)
