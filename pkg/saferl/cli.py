"""Command line: ``python -m saferl run|validate``.

Exit codes: 0 clean, 1 configuration error, 2 safety abort, 3 solver failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .config import ExperimentConfig, load_config
from .connectors.trace_io import write_abort_bundle, write_json
from .errors import ConfigError, InfeasibleDataError, SafeRLError, SafetyViolationError, UpdateRejectedError
from .experiment import run_experiment
from .validation import validate_suite

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SAFETY = 2
EXIT_SOLVER = 3

_SAFETY_ERRORS = (SafetyViolationError, InfeasibleDataError, UpdateRejectedError)


def exit_code(error: BaseException) -> int:
    """Solver, rollout, Riccati and other numerical failures all map to 3."""
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, _SAFETY_ERRORS):
        return EXIT_SAFETY
    return EXIT_SOLVER


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="saferl", description="Safe policy-gradient learning of a robust linear MPC.")
    sub = p.add_subparsers(dest="cmd", required=True)
    run = sub.add_parser("run", help="run the RL loop and write traces")
    val = sub.add_parser("validate", help="run the property checks and write validation.json")
    for s in (run, val):
        s.add_argument("--config", type=str, default=None, help="JSON configuration file")
        s.add_argument("--case", type=int, choices=[1, 2], default=None)
        s.add_argument("--steps", type=int, default=None, help="number of RL steps (rl_steps)")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--out-dir", type=str, default=None)
        s.add_argument("--workers", type=int, default=None, help="process pool size for rollouts")
        s.add_argument("--log-level", type=str, default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    val.add_argument("--closed-loop", action="store_true", help="also run the multi-seed closed-loop check")
    return p


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {
        "case": args.case,
        "rl_steps": args.steps,
        "seed": args.seed,
        "out_dir": args.out_dir,
        "workers": args.workers,
    }
    return load_config(args.config, overrides)


def _run(config: ExperimentConfig) -> int:
    try:
        result = run_experiment(config)
    except SafeRLError as exc:
        # run_experiment has already written the abort bundle
        code = exit_code(exc)
        logger.error("%s: %s (exit %d)", type(exc).__name__, exc, code)
        return code
    if result.safety_violations:
        logger.error("%d membership violations recorded", result.safety_violations)
        return EXIT_SAFETY
    return EXIT_OK


def _validate(config: ExperimentConfig, closed_loop: bool) -> int:
    report = validate_suite(config, closed_loop=closed_loop)
    path = write_json(report, Path(config.out_dir) / "validation.json")
    failed = [name for name, entry in report["criteria"].items() if not entry["passed"]]
    if failed:
        logger.error("failed criteria: %s (report in %s)", ", ".join(failed), path)
    else:
        logger.info("all criteria passed (report in %s)", path)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = config_from_args(args)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        if args.out_dir:
            write_abort_bundle(Path(args.out_dir), {"config_file": args.config}, None, exc)
        return EXIT_CONFIG
    if args.cmd == "run":
        return _run(config)
    return _validate(config, args.closed_loop)


if __name__ == "__main__":
    sys.exit(main())
