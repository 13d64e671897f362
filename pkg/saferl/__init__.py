from .config import ExperimentConfig, load_config
from .experiment import init_theta, run_experiment
from .mpc_scheme import MpcDims, PolytopeW, ThetaParams, build_mpc_nlp
from .nlp_core import NlpInstance, PrimalDualPoint, SolverConfig, solve
from .policy import ExplorationConfig, explore_action, range_diagnostic
from .sensitivities import first_order, second_order, policy_jacobians
from .validation import validate_suite
