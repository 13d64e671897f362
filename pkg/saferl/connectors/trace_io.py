from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
FLOAT_FORMAT = "%.17g"

# fixed leading columns of each trace; theta-dependent columns follow
TRACE_COLUMNS: Dict[str, List[str]] = {
    "rl_trace": ["step", "J_mean", "J_std"],
    "theta_trace": ["step"],
    "safety_report": [
        "step",
        "membership_violations",
        "pre_update_outside_w",
        "state_violations",
        "max_state_norm",
    ],
    "model_gap": ["step", "A0_gap", "B0_gap", "b0_norm"],
    "polytope_trace": ["step"],
    "feedback_trace": ["step", "K_gap"],
    "trajectory_trace": ["step", "rollout", "t"],
}


@dataclass
class TraceWriter:
    """Accumulates rows per trace and writes CSV plus gnuplot files on flush."""

    out_dir: Path
    rows: Dict[str, List[Dict[str, Any]]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.out_dir = Path(self.out_dir)

    def add(self, trace: str, row: Mapping[str, Any]) -> None:
        if trace not in TRACE_COLUMNS:
            raise ValueError(f"unknown trace '{trace}'")
        self.rows.setdefault(trace, []).append(dict(row))

    def extend(self, trace: str, rows: Iterable[Mapping[str, Any]]) -> None:
        for row in rows:
            self.add(trace, row)

    def frame(self, trace: str) -> pd.DataFrame:
        return trace_frame(trace, self.rows.get(trace, []))

    def flush(self) -> Dict[str, Path]:
        """Write every trace (empty traces get a header only). Returns csv paths."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        paths = {}
        for trace in TRACE_COLUMNS:
            df = self.frame(trace)
            paths[trace] = write_csv(df, self.out_dir / f"{trace}.csv")
            write_gnuplot(df, self.out_dir / f"{trace}.dat")
        return paths


def trace_frame(trace: str, rows: Sequence[Mapping[str, Any]]) -> pd.DataFrame:
    leading = TRACE_COLUMNS[trace]
    df = pd.DataFrame(list(rows))
    if df.empty:
        return pd.DataFrame(columns=leading)
    rest = [c for c in df.columns if c not in leading]
    missing = [c for c in leading if c not in df.columns]
    if missing:
        raise ValueError(f"{trace}: rows lack columns {missing}")
    return df[leading + rest]


def write_csv(df: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_gnuplot(df: pd.DataFrame, path: Path) -> Path:
    """Whitespace-separated table with a commented header line."""
    path = Path(path)
    lines = ["# " + " ".join(str(c) for c in df.columns)]
    for row in df.itertuples(index=False):
        lines.append(" ".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def _fmt(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % value
    return str(value)


def read_trace(path: Path) -> pd.DataFrame:
    return pd.read_csv(path)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (set, tuple)):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(obj: Any, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def write_manifest(out_dir: Path, config: Mapping[str, Any], traces: Mapping[str, pd.DataFrame], extra: Optional[Mapping[str, Any]] = None) -> Path:
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config": dict(config),
        "traces": {name: {"file": f"{name}.csv", "columns": [str(c) for c in df.columns]} for name, df in traces.items()},
    }
    if extra:
        manifest.update(extra)
    return write_json(manifest, Path(out_dir) / "manifest.json")


def write_abort_bundle(
    out_dir: Path,
    config: Mapping[str, Any],
    theta: Optional[Mapping[str, float]],
    error: BaseException,
    details: Optional[Mapping[str, Any]] = None,
) -> Path:
    bundle = {
        "schema_version": SCHEMA_VERSION,
        "config": dict(config),
        "theta": dict(theta) if theta is not None else None,
        "error_type": type(error).__name__,
        "message": str(error),
        "details": dict(details or {}),
    }
    path = write_json(bundle, Path(out_dir) / "abort_bundle.json")
    logger.error("run aborted (%s); diagnostics in %s", type(error).__name__, path)
    return path
