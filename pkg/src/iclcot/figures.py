"""Figure rendering for evaluation reports.

SVG output is byte-deterministic for identical inputs: the Agg backend,
a fixed svg.hashsalt and no Date metadata. One polyline per method,
x = context length, y = mean normalized MSE.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import ComparisonReport, EvalReport  # noqa: E402

_MARKERS = {"baseline": "o", "autocot": "s"}


def render_mse_plot(
    reports: Sequence[EvalReport], path: str | Path, salt: str = "iclcot"
) -> None:
    """Write an SVG of mse_mean vs context length, one line per method."""
    with matplotlib.rc_context({"svg.hashsalt": salt}):
        fig, ax = plt.subplots(figsize=(5.5, 3.5))
        for report in reports:
            xs = [r.context_len for r in report.rows]
            ys = [r.mse_mean for r in report.rows]
            ax.plot(xs, ys, marker=_MARKERS.get(report.method, "."),
                    label=report.method)
        ax.set_xlabel("context length")
        ax.set_ylabel("normalized MSE")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def render_comparison_plot(
    comp: ComparisonReport, path: str | Path, salt: str = "iclcot"
) -> None:
    """Write an SVG of baseline vs Auto-CoT mse_mean per context length."""
    with matplotlib.rc_context({"svg.hashsalt": salt}):
        fig, ax = plt.subplots(figsize=(5.5, 3.5))
        xs = [r.context_len for r in comp.rows]
        ax.plot(xs, [r.baseline_mse for r in comp.rows], marker="o", label="baseline")
        ax.plot(xs, [r.autocot_mse for r in comp.rows], marker="s", label="autocot")
        ax.set_xlabel("context length")
        ax.set_ylabel("normalized MSE")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
