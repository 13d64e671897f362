"""Exception hierarchy for the safe RL / MPC library.

Range checks on inputs raise plain ``ValueError``; algorithmic failures raise the
domain exceptions below so that the CLI can map them onto exit codes.
"""

from __future__ import annotations

from typing import Any, Dict, List, Optional


class SafeRLError(Exception):
    """Base class for all library errors."""


class ConfigError(SafeRLError):
    """Invalid, incomplete or unknown experiment configuration."""


class DimensionError(SafeRLError, ValueError):
    """Array shapes inconsistent with the problem dimensions."""


class SolverFailure(SafeRLError):
    """The interior-point solver did not reach the residual tolerance."""

    def __init__(self, message: str, point: Any = None, residual_norm: float = float("nan"), iterations: int = 0):
        super().__init__(f"{message} (residual {residual_norm:.3e} after {iterations} iterations)")
        self.message = message
        self.point = point
        self.residual_norm = residual_norm
        self.iterations = iterations

    def __reduce__(self):
        return (self.__class__, (self.message, self.point, self.residual_norm, self.iterations))


class SingularKktError(SafeRLError):
    """A KKT matrix factorization failed."""

    def __init__(self, factorization: str, detail: str = ""):
        msg = f"singular KKT matrix in {factorization} factorization"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.factorization = factorization


class RiccatiError(SafeRLError):
    """Discrete-time Riccati equation could not be solved to tolerance."""


class ExplorationDegenerateError(SafeRLError):
    """Advantage features vanish across the whole batch."""


class _TransitionError(SafeRLError):
    def __init__(self, message: str, transitions: Optional[List[Dict[str, Any]]] = None):
        super().__init__(message)
        self.transitions = transitions or []


class InfeasibleDataError(_TransitionError):
    """Observed transitions cannot be explained by the model with the adaptable blocks."""


class SafetyViolationError(_TransitionError):
    """A retained transition left the disturbance polytope after an update."""


class UpdateRejectedError(SafeRLError):
    """Every candidate update, down to the pure projection, failed the acceptance check."""

    def __init__(self, message: str, step_norms: Optional[List[float]] = None):
        super().__init__(message)
        self.step_norms = step_norms or []


class RolloutFailure(SafeRLError):
    """A closed-loop rollout aborted because a policy solve failed."""

    def __init__(self, rollout: int, t: int, state: Any, cause: Exception):
        super().__init__(f"rollout {rollout} failed at t={t}: {cause}")
        self.rollout = rollout
        self.t = t
        self.state = state
        self.cause = cause

    def __reduce__(self):
        return (self.__class__, (self.rollout, self.t, self.state, self.cause))


class SingularCovarianceError(SafeRLError):
    """dg/dd Sigma dg/dd^T is singular while its plain inverse was requested."""
