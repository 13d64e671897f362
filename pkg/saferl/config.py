"""Experiment configuration: defaults, JSON loading and validation."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple

import numpy as np

from .errors import ConfigError
from .learner import UpdateConfig
from .mpc_scheme import THETA_BLOCKS, MpcDims
from .nlp_core import SolverConfig
from .parameters import (
    case_parameters,
    model_parameters,
    plant_parameters,
    run_parameters,
    solver_parameters,
    learning_parameters,
)
from .plant_sim import PlantModel
from .policy import ExplorationConfig

logger = logging.getLogger(__name__)

REQUIRED_KEYS = ("case", "seed", "rl_steps", "out_dir")

Vector = Tuple[float, ...]
MatrixT = Tuple[Tuple[float, ...], ...]


def _polar(radius: float, angle_deg: float) -> Vector:
    a = np.deg2rad(angle_deg)
    return (float(radius * np.cos(a)), float(radius * np.sin(a)))


@dataclass(frozen=True)
class ExperimentConfig:
    # Run identity
    case: int = 1
    seed: int = run_parameters["seed"]
    rl_steps: int = run_parameters["rl_steps"]
    out_dir: str = "runs/case1"

    # Case-dependent (None takes the case preset)
    kappa: Optional[float] = None
    alpha: Optional[float] = None

    # Learning
    gamma: float = learning_parameters["gamma"]
    sigma: float = learning_parameters["sigma"]
    Sigma: MatrixT = tuple(tuple(r) for r in learning_parameters["Sigma"])
    tau: float = learning_parameters["tau"]
    beta_deg: float = learning_parameters["beta_deg"]
    beta_hat_deg: float = learning_parameters["beta_hat_deg"]
    N_t: int = learning_parameters["N_t"]
    S: int = learning_parameters["S"]
    N: int = learning_parameters["N"]
    N_M: int = learning_parameters["N_M"]

    # Plant and cost
    B_real: MatrixT = tuple(tuple(r) for r in plant_parameters["B_real"])
    noise_variance: float = plant_parameters["noise_variance"]
    clip_radius: float = plant_parameters["clip_radius"]
    s0: Optional[Vector] = None  # default: unit circle at 60 degrees
    x_ref: Optional[Vector] = None  # default: 0.95 * (cos 45, sin 45)
    x_bar: Optional[Vector] = None  # default: x_ref
    u_ref: Optional[Vector] = None  # default: steady-state input of the initial model
    state_weight: float = plant_parameters["state_weight"]
    input_weight: float = plant_parameters["input_weight"]

    # Initial model
    W_vertices: MatrixT = tuple(tuple(r) for r in model_parameters["W_vertices"])
    lqr_state_weight: float = model_parameters["lqr_state_weight"]
    lqr_input_weight: float = model_parameters["lqr_input_weight"]

    # Algorithm switches
    m_mode: Literal["plain_inverse", "pseudo_inverse"] = run_parameters["m_mode"]
    use_corrections: bool = run_parameters["use_corrections"]
    update_mode: Literal["unconstrained_gradient", "safe_constrained"] = run_parameters["update_mode"]
    frozen_blocks: Tuple[str, ...] = ()
    dataset_window: int = run_parameters["dataset_window"]
    update_tau: float = solver_parameters["update_tau"]
    max_step_norm: Optional[float] = solver_parameters["max_step_norm"]
    update_backtracks: int = solver_parameters["update_backtracks"]

    # Numerics
    residual_tolerance: float = solver_parameters["residual_tolerance"]
    max_newton_iterations: int = solver_parameters["max_newton_iterations"]
    pinv_floor: float = solver_parameters["pinv_floor"]
    critic_floor: float = solver_parameters["critic_floor"]

    # Execution
    workers: int = run_parameters["workers"]
    mc_samples: int = run_parameters["mc_samples"]
    report: bool = run_parameters["report"]

    def __post_init__(self) -> None:
        if self.case not in case_parameters:
            raise ConfigError(f"case must be one of {sorted(case_parameters)}")
        preset = case_parameters[self.case]
        if self.kappa is None:
            object.__setattr__(self, "kappa", preset["kappa"])
        if self.alpha is None:
            object.__setattr__(self, "alpha", preset["alpha"])
        if self.s0 is None:
            object.__setattr__(self, "s0", _polar(1.0, plant_parameters["s0_angle_deg"]))
        if self.x_ref is None:
            object.__setattr__(
                self, "x_ref", _polar(plant_parameters["x_ref_radius"], plant_parameters["x_ref_angle_deg"])
            )
        if self.x_bar is None:
            object.__setattr__(self, "x_bar", tuple(self.x_ref))
        # lists from JSON become tuples
        for name in ("Sigma", "B_real", "W_vertices"):
            object.__setattr__(self, name, tuple(tuple(float(v) for v in row) for row in getattr(self, name)))
        for name in ("s0", "x_ref", "x_bar", "u_ref"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(float(v) for v in value))
        object.__setattr__(self, "frozen_blocks", tuple(self.frozen_blocks))
        self._validate()

    def _validate(self) -> None:
        positive = ("sigma", "tau", "clip_radius", "residual_tolerance", "update_tau", "lqr_input_weight")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must be in [0, 1]")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        for name in ("rl_steps", "seed"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("N_t", "S", "N", "N_M", "workers", "max_newton_iterations", "mc_samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.dataset_window < self.S * self.N_t:
            raise ConfigError("dataset_window must be >= the batch size S * N_t")
        if self.max_step_norm is not None and not self.max_step_norm > 0:
            raise ConfigError("max_step_norm must be > 0")
        if self.update_backtracks < 0:
            raise ConfigError("update_backtracks must be >= 0")
        if self.noise_variance < 0:
            raise ConfigError("noise_variance must be >= 0")
        if self.m_mode not in ("plain_inverse", "pseudo_inverse"):
            raise ConfigError("m_mode must be 'plain_inverse' or 'pseudo_inverse'")
        if self.update_mode not in ("unconstrained_gradient", "safe_constrained"):
            raise ConfigError("update_mode must be 'unconstrained_gradient' or 'safe_constrained'")
        bad = set(self.frozen_blocks) - set(THETA_BLOCKS)
        if bad:
            raise ConfigError(f"unknown frozen_blocks: {sorted(bad)}")
        if len(self.W_vertices) != self.N_M:
            raise ConfigError(f"W_vertices has {len(self.W_vertices)} vertices but N_M = {self.N_M}")
        n_s = len(self.s0)
        for name in ("x_ref", "x_bar"):
            if len(getattr(self, name)) != n_s:
                raise ConfigError(f"{name} must have {n_s} entries")
        if np.asarray(self.Sigma).shape != (len(self.B_real[0]),) * 2:
            raise ConfigError("Sigma must be n_a x n_a")
        try:
            self.exploration_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # ---- derived objects ------------------------------------------------------

    @property
    def n_s(self) -> int:
        return len(self.s0)

    @property
    def n_a(self) -> int:
        return len(self.B_real[0])

    def dims(self) -> MpcDims:
        return MpcDims(N=self.N, N_M=self.N_M, n_s=self.n_s, n_a=self.n_a)

    def exploration_config(self) -> ExplorationConfig:
        return ExplorationConfig(
            sigma=self.sigma,
            Sigma=np.asarray(self.Sigma, dtype=float),
            tau=self.tau,
            m_mode=self.m_mode,
            pinv_floor=self.pinv_floor,
            use_corrections=self.use_corrections,
        )

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            tau=self.tau,
            residual_tolerance=self.residual_tolerance,
            max_newton_iterations=self.max_newton_iterations,
            fraction_to_boundary=solver_parameters["fraction_to_boundary"],
            regularization_floor=solver_parameters["regularization_floor"],
        )

    def update_config(self) -> UpdateConfig:
        schedule = tuple(t for t in (1e-2, 1e-4) if t > self.update_tau) + (self.update_tau,)
        return UpdateConfig(
            alpha=self.alpha,
            dataset_window=self.dataset_window,
            update_mode=self.update_mode,
            frozen_blocks=self.frozen_blocks,
            tau_schedule=schedule,
            membership_tolerance=solver_parameters["membership_tolerance"],
            max_step_norm=self.max_step_norm,
            update_backtracks=self.update_backtracks,
        )

    def plant(self) -> PlantModel:
        return PlantModel.from_case(self.kappa, self.beta_deg, np.asarray(self.B_real), self.noise_variance, self.clip_radius)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def config_from_dict(data: Dict[str, Any], require: bool = True) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    if require:
        missing = sorted(k for k in REQUIRED_KEYS if k not in data)
        if missing:
            raise ConfigError(f"missing required configuration keys: {', '.join(missing)}")
    for f in fields(ExperimentConfig):
        if f.name in data and data[f.name] is not None:
            _check_type(f.name, data[f.name], f.default)
    try:
        return ExperimentConfig(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _check_type(name: str, value: Any, default: Any) -> None:
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int) and not isinstance(default, bool):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float) or default is None and name in ("kappa", "alpha"):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        ok = isinstance(value, (list, tuple))
    if not ok:
        raise ConfigError(f"{name} has invalid type {type(value).__name__}")


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Read a JSON config file (if given) and apply non-None overrides.

    Without a file, the case preset supplies everything and no keys are required.
    """
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    if path is None and "out_dir" not in data:
        data["out_dir"] = f"runs/case{data.get('case', 1)}"
    return config_from_dict(data, require=path is not None)
