"""Parametric sensitivities of the relaxed-KKT solution.

First order: ``J_z dz/dp = -dr/dp`` for p in (d, theta), one factorization of
``J_z = dr/dz`` shared by every right-hand side. Second order in d: for each
pair (i, j), ``J_z z_ij = -D^2 r[(z_i, e_i), (z_j, e_j)]`` with the same factors.
The policy output g is the leading ``n_d`` primal entries.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from .nlp_core import KktFactorization, NlpInstance, NlpParams, PrimalDualPoint, SolverConfig, factorize_kkt, solve

logger = logging.getLogger(__name__)

_SPARSE_THRESHOLD = 1500


@dataclass(frozen=True)
class SensitivityBundle:
    dz_dd: np.ndarray  # n_z x n_a
    dz_dtheta: np.ndarray  # n_z x n_theta
    dg_dd: np.ndarray  # n_a x n_a
    dg_dtheta: np.ndarray  # n_a x n_theta
    d2g_dd2: Optional[np.ndarray] = None  # [:, i, j] = d2 g / dd_i dd_j
    factorization: Optional[KktFactorization] = field(default=None, repr=False, compare=False)


def _factor(inst: NlpInstance, z: PrimalDualPoint, params: NlpParams) -> KktFactorization:
    jac = inst.residual_jacobian(z, params, sparse=inst.n_z > _SPARSE_THRESHOLD)
    return factorize_kkt(jac, f"{inst.name} sensitivity (dr/dz)")


def first_order(inst: NlpInstance, z_solved: PrimalDualPoint, params: NlpParams) -> SensitivityBundle:
    """Solve for dz/dd and dz/dtheta at a converged point.

    Raises SingularKktError if dr/dz cannot be factorized; no regularization is
    applied because it would bias the sensitivities.
    """
    r = inst.residual(z_solved, params)
    if r.size and float(np.max(np.abs(r))) > 1e-8:
        logger.warning("%s: sensitivities at a point with |r|=%.2e", inst.name, float(np.max(np.abs(r))))
    factor = _factor(inst, z_solved, params)
    jacs = inst.parameter_jacobians(z_solved, params)
    sol = factor.solve(-np.hstack([jacs["d"], jacs["theta"]]))
    sol = sol.reshape(inst.n_z, inst.n_d + inst.n_theta)
    n_a = inst.n_d
    dz_dd = sol[:, :n_a]
    dz_dtheta = sol[:, n_a:]
    return SensitivityBundle(
        dz_dd=dz_dd,
        dz_dtheta=dz_dtheta,
        dg_dd=dz_dd[:n_a].copy(),
        dg_dtheta=dz_dtheta[:n_a].copy(),
        factorization=factor,
    )


def second_order(
    inst: NlpInstance, z_solved: PrimalDualPoint, params: NlpParams, first: SensitivityBundle
) -> np.ndarray:
    n_a = inst.n_d
    factor = first.factorization if first.factorization is not None else _factor(inst, z_solved, params)
    eye = np.eye(n_a)
    directions = [np.concatenate([first.dz_dd[:, i], eye[i]]) for i in range(n_a)]
    out = np.zeros((n_a, n_a, n_a))
    for i in range(n_a):
        for j in range(i, n_a):
            rhs = -inst.second_directional(z_solved, params, directions[i], directions[j])
            z_ij = factor.solve(rhs)[:n_a]
            out[:, i, j] = z_ij
            out[:, j, i] = z_ij
    return out


def full_sensitivities(inst: NlpInstance, z_solved: PrimalDualPoint, params: NlpParams) -> SensitivityBundle:
    first = first_order(inst, z_solved, params)
    return replace(first, d2g_dd2=second_order(inst, z_solved, params, first))


def policy_jacobians(first: SensitivityBundle) -> Tuple[np.ndarray, np.ndarray]:
    """Return (grad_theta pi, dg/dd) with grad_theta pi of shape n_theta x n_a."""
    return first.dg_dtheta.T, first.dg_dd


# ---- finite-difference oracles ------------------------------------------------


def finite_difference_first_order(
    inst: NlpInstance,
    params: NlpParams,
    config: SolverConfig,
    base: PrimalDualPoint,
    step: float = 1e-5,
) -> Tuple[np.ndarray, np.ndarray]:
    """Central differences of solve() over d and theta, warm-started at ``base``."""

    def z_at(theta: np.ndarray, d: np.ndarray) -> np.ndarray:
        return solve(inst, inst.params(theta, d, params.s), config, warm_start=base).z

    dz_dd = np.zeros((inst.n_z, inst.n_d))
    for i in range(inst.n_d):
        e = np.zeros(inst.n_d)
        e[i] = step
        dz_dd[:, i] = (z_at(params.theta, params.d + e) - z_at(params.theta, params.d - e)) / (2 * step)
    dz_dtheta = np.zeros((inst.n_z, inst.n_theta))
    for k in range(inst.n_theta):
        e = np.zeros(inst.n_theta)
        e[k] = step
        dz_dtheta[:, k] = (z_at(params.theta + e, params.d) - z_at(params.theta - e, params.d)) / (2 * step)
    return dz_dd, dz_dtheta


def finite_difference_second_order(
    inst: NlpInstance,
    params: NlpParams,
    config: SolverConfig,
    base: PrimalDualPoint,
    step: float = 1e-3,
) -> np.ndarray:
    """Central differences over d of the analytic dg/dd."""
    n_a = inst.n_d
    out = np.zeros((n_a, n_a, n_a))
    for j in range(n_a):
        e = np.zeros(n_a)
        e[j] = step
        columns = []
        for sign in (1.0, -1.0):
            p = inst.params(params.theta, params.d + sign * e, params.s)
            z = solve(inst, p, config, warm_start=base)
            columns.append(first_order(inst, z, p).dg_dd)
        out[:, :, j] = (columns[0] - columns[1]) / (2 * step)
    return out


def relative_error(estimate: np.ndarray, reference: np.ndarray, floor: float = 1e-8) -> float:
    return float(np.linalg.norm(estimate - reference) / max(float(np.linalg.norm(reference)), floor))
