"""PNG figures and a PDF run report built from the trace CSVs of a finished run."""

from __future__ import annotations

import datetime as _dt
import io
import logging
from pathlib import Path
from typing import Dict, List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from reportlab.lib import colors  # noqa: E402
from reportlab.lib.pagesizes import A4  # noqa: E402
from reportlab.lib.styles import getSampleStyleSheet  # noqa: E402
from reportlab.lib.units import cm  # noqa: E402
from reportlab.platypus import Image as RLImage  # noqa: E402
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle  # noqa: E402

from .config import ExperimentConfig  # noqa: E402
from .connectors.trace_io import read_trace  # noqa: E402

logger = logging.getLogger(__name__)

_TABLE_STYLE = TableStyle(
    [
        ("BACKGROUND", (0, 0), (-1, 0), colors.HexColor("#f2f2f2")),
        ("BOX", (0, 0), (-1, -1), 0.25, colors.grey),
        ("INNERGRID", (0, 0), (-1, -1), 0.25, colors.lightgrey),
        ("VALIGN", (0, 0), (-1, -1), "MIDDLE"),
    ]
)


def learning_curve(rl: pd.DataFrame) -> plt.Figure:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(rl["step"], rl["J_mean"], color="tab:blue", label="J mean")
    ax.fill_between(rl["step"], rl["J_mean"] - rl["J_std"], rl["J_mean"] + rl["J_std"], color="tab:blue", alpha=0.2)
    ax.set_xlabel("RL step")
    ax.set_ylabel("discounted closed-loop cost")
    ax.legend()
    fig.tight_layout()
    return fig


def trajectory_figure(traj: pd.DataFrame, x_ref) -> plt.Figure:
    """First-rollout state paths, first and last RL step, against the unit-disc constraint."""
    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    angle = np.linspace(0.0, 2.0 * np.pi, 361)
    ax.plot(np.cos(angle), np.sin(angle), "k--", lw=0.8, label="|s| = 1")
    if not traj.empty:
        for step, label in ((traj["step"].min(), "first step"), (traj["step"].max(), "last step")):
            part = traj[traj["step"] == step]
            xs = np.append(part["s[0]"].to_numpy(), part["s_plus[0]"].to_numpy()[-1:])
            ys = np.append(part["s[1]"].to_numpy(), part["s_plus[1]"].to_numpy()[-1:])
            ax.plot(xs, ys, marker=".", label=f"{label} ({step})")
    ax.plot([x_ref[0]], [x_ref[1]], "r*", ms=10, label="x_ref")
    ax.set_aspect("equal")
    ax.set_xlabel("s[0]")
    ax.set_ylabel("s[1]")
    ax.legend(loc="lower left", fontsize=8)
    fig.tight_layout()
    return fig


def model_gap_figure(gap: pd.DataFrame, feedback: pd.DataFrame) -> plt.Figure:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(gap["step"], gap["A0_gap"], label="|A0 - A_real|")
    ax.plot(gap["step"], gap["B0_gap"], label="|B0 - B_real|")
    ax.plot(gap["step"], gap["b0_norm"], label="|b0|")
    ax.plot(feedback["step"], feedback["K_gap"], label="|K - K_init|")
    ax.set_xlabel("RL step")
    ax.legend()
    fig.tight_layout()
    return fig


def polytope_figure(poly: pd.DataFrame) -> plt.Figure:
    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    n_vertices = sum(1 for c in poly.columns if c.endswith("[0]"))
    rows = [poly.iloc[0], poly.iloc[-1]] if len(poly) > 1 else [poly.iloc[0]]
    for row, style in zip(rows, ("k--", "b-")):
        xs = [row[f"W{v + 1}[0]"] for v in range(n_vertices)]
        ys = [row[f"W{v + 1}[1]"] for v in range(n_vertices)]
        ax.plot(xs + xs[:1], ys + ys[:1], style, label=f"step {int(row['step'])}")
    ax.set_aspect("equal")
    ax.set_title("disturbance polytope W")
    ax.legend()
    fig.tight_layout()
    return fig


def make_figures(config: ExperimentConfig, out_dir: Path) -> Dict[str, plt.Figure]:
    out_dir = Path(out_dir)
    traces = {name: read_trace(out_dir / f"{name}.csv") for name in ("rl_trace", "trajectory_trace", "model_gap", "feedback_trace", "polytope_trace")}
    figures = {
        "learning_curve": learning_curve(traces["rl_trace"]),
        "trajectories": trajectory_figure(traces["trajectory_trace"], config.x_ref),
        "model_gap": model_gap_figure(traces["model_gap"], traces["feedback_trace"]),
    }
    if not traces["polytope_trace"].empty:
        figures["polytope"] = polytope_figure(traces["polytope_trace"])
    return figures


def _config_table(config: ExperimentConfig) -> Table:
    rows: List[List[str]] = [["Parameter", "Value"]]
    for key, value in config.to_dict().items():
        rows.append([key, str(value)])
    table = Table(rows, colWidths=[5 * cm, 10.5 * cm])
    table.setStyle(_TABLE_STYLE)
    return table


def build_pdf_report(config: ExperimentConfig, out_dir: Path, figures: Dict[str, plt.Figure]) -> bytes:
    out_dir = Path(out_dir)
    buf = io.BytesIO()
    doc = SimpleDocTemplate(buf, pagesize=A4, rightMargin=2 * cm, leftMargin=2 * cm, topMargin=1.5 * cm, bottomMargin=1.5 * cm)
    styles = getSampleStyleSheet()
    story = []

    story.append(Paragraph(f"Safe RL run report, case {config.case}", styles["Title"]))
    story.append(Paragraph(f"Generated: {_dt.datetime.now(_dt.timezone.utc).strftime('%Y-%m-%d %H:%M UTC')}", styles["Normal"]))
    story.append(Spacer(1, 0.4 * cm))

    rl = read_trace(out_dir / "rl_trace.csv")
    safety = read_trace(out_dir / "safety_report.csv")
    story.append(Paragraph("Summary", styles["Heading2"]))
    summary = Table(
        [
            ["Quantity", "Value"],
            ["RL steps", str(len(rl) - 1)],
            ["J at first step", f"{rl['J_mean'].iloc[0]:.6f}"],
            ["J at last step", f"{rl['J_mean'].iloc[-1]:.6f}"],
            ["Membership violations", str(int(safety["membership_violations"].sum()))],
            ["State constraint violations", str(int(safety["state_violations"].sum()))],
            ["Max |s|", f"{safety['max_state_norm'].max():.4f}"],
        ],
        colWidths=[5 * cm, 10.5 * cm],
    )
    summary.setStyle(_TABLE_STYLE)
    story.append(summary)
    story.append(Spacer(1, 0.5 * cm))

    for name, fig in figures.items():
        img_buf = io.BytesIO()
        fig.savefig(img_buf, format="png", dpi=150, bbox_inches="tight")
        img_buf.seek(0)
        story.append(Paragraph(name.replace("_", " ").capitalize(), styles["Heading2"]))
        story.append(RLImage(img_buf, width=14 * cm, height=8.5 * cm))
        story.append(Spacer(1, 0.4 * cm))

    story.append(Paragraph("Configuration", styles["Heading2"]))
    story.append(_config_table(config))
    doc.build(story)
    return buf.getvalue()


def write_report(config: ExperimentConfig, out_dir: Path) -> Path:
    """Save one PNG per figure and ``report.pdf`` into ``out_dir``."""
    out_dir = Path(out_dir)
    figures = make_figures(config, out_dir)
    for name, fig in figures.items():
        fig.savefig(out_dir / f"{name}.png", dpi=150, bbox_inches="tight")
    pdf = out_dir / "report.pdf"
    pdf.write_bytes(build_pdf_report(config, out_dir, figures))
    for fig in figures.values():
        plt.close(fig)
    logger.info("report written to %s", pdf)
    return pdf
