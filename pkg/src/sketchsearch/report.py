"""Report output: JSON document, delimited per-step curves, and figures."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .fileio import write_atomic
from .retrieval import EvalReport

REPORT_FORMAT = "eval-report-1"

FORMULAS = {
    "m_at_a": "100 * mean((n - rank) / (n - 1)) over all (episode, step)",
    "m_at_b": "100 * mean(1 / rank) over all (episode, step)",
    "acc_at_q": "100 * fraction of episodes with final-step rank <= q",
}


def report_to_doc(report: EvalReport) -> dict:
    return {
        "format": REPORT_FORMAT,
        "n": report.n,
        "T": report.T,
        "episodes": report.episode_count,
        "formulas": FORMULAS,
        "metrics": {
            "m_at_a": report.m_a,
            "m_at_b": report.m_b,
            **{f"acc_at_{q}": v for q, v in sorted(report.acc.items())},
        },
        "curves": {
            "step_fraction": report.step_fraction,
            "mean_inverse_rank": report.mean_inverse_rank,
            **{f"acc_at_{q}": v for q, v in sorted(report.step_acc.items())},
        },
        "ranks": report.ranks,
    }


def write_report(report: EvalReport, path: str | Path) -> None:
    write_atomic(path, json.dumps(report_to_doc(report), indent=1) + "\n")


def write_curves_csv(report: EvalReport, path: str | Path) -> None:
    """Per-step curves as delimited text next to the report."""
    rows = []
    qs = sorted(report.step_acc)
    header = ["step", "step_fraction", "mean_inverse_rank"] + [f"acc_at_{q}" for q in qs]
    for t in range(report.T):
        rows.append(
            [t, report.step_fraction[t], report.mean_inverse_rank[t]]
            + [report.step_acc[q][t] for q in qs]
        )
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    writer.writerows(rows)
    write_atomic(path, buf.getvalue())


def render_figures(report: EvalReport, out_dir: str | Path, stem: str = "eval") -> list[Path]:
    """Render the early-retrieval curves to PNG files; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pct = [100.0 * f for f in report.step_fraction]
    paths = []

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(pct, report.mean_inverse_rank, marker="o", ms=3)
    ax.set_xlabel("percentage of sketch")
    ax.set_ylabel("mean 1/rank (x100)")
    ax.set_title(f"Early retrieval (n={report.n}, {report.episode_count} episodes)")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = out_dir / f"{stem}_inverse_rank.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for q in sorted(report.step_acc):
        ax.plot(pct, report.step_acc[q], marker="o", ms=3, label=f"top-{q}")
    ax.set_xlabel("percentage of sketch")
    ax.set_ylabel("episodes with true photo in top-q (%)")
    ax.set_ylim(-2, 102)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = out_dir / f"{stem}_accuracy.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)
    return paths


def render_sweep_figure(
    stage_counts: list[int], m_a: list[float], m_b: list[float], path: str | Path
) -> Path:
    """Aggregate metrics against stage count for ablation sweeps."""
    path = Path(path)
    fig, ax1 = plt.subplots(figsize=(5, 3.5))
    ax1.plot(stage_counts, m_b, marker="o", color="tab:blue", label="m@B")
    ax1.set_xlabel("stage count")
    ax1.set_ylabel("m@B", color="tab:blue")
    ax1.set_xticks(stage_counts)
    ax2 = ax1.twinx()
    ax2.plot(stage_counts, m_a, marker="s", color="tab:orange", label="m@A")
    ax2.set_ylabel("m@A", color="tab:orange")
    ax1.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
