"""Small policy problems with known solutions.

``disc_problem`` is the two-dimensional projection onto a disc used to illustrate
constrained exploration; ``unconstrained_quadratic`` has the affine solution
map ``y* = theta - d``.
"""

from __future__ import annotations

from functools import lru_cache

import casadi as csd

from .nlp_core import NlpInstance


@lru_cache(maxsize=None)
def disc_problem() -> NlpInstance:
    """min 1/2 ||y - (theta1, theta2)||^2 + d^T y  s.t.  ||y||^2 <= theta3."""
    y = csd.SX.sym("y", 2)
    theta = csd.SX.sym("theta", 3)
    d = csd.SX.sym("d", 2)
    s = csd.SX.sym("s", 0)
    cost = 0.5 * csd.sumsqr(y - theta[:2])
    ineq = csd.sumsqr(y) - theta[2]
    return NlpInstance("disc", y, cost, theta, d, s, ineq=ineq)


@lru_cache(maxsize=None)
def unconstrained_quadratic(n: int = 2) -> NlpInstance:
    """min 1/2 ||y - theta||^2 + d^T y."""
    if n < 1:
        raise ValueError("n must be >= 1")
    y = csd.SX.sym("y", n)
    theta = csd.SX.sym("theta", n)
    d = csd.SX.sym("d", n)
    s = csd.SX.sym("s", 0)
    return NlpInstance(f"quadratic{n}", y, 0.5 * csd.sumsqr(y - theta), theta, d, s)
