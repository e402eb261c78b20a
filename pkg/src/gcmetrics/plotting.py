"""Per-attribute box plots and implicit-vs-explicit scatter for a MetricReport."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from gcmetrics.core import ATTRIBUTES  # noqa: E402
from gcmetrics.metrics import ROLES, MetricReport  # noqa: E402

COLORS = {"consistent": "tab:blue", "inconsistent": "tab:orange"}
LABELS = {"age": "Age [years]", "bmi": "BMI", "body_fat_pct": "Body fat [%]"}


def _column(report: MetricReport, role: str, col: str) -> np.ndarray:
    return np.array([r[col] for r in report.per_image if r["role"] == role], dtype=float)


def plot_attribute_boxplots(report: MetricReport, path: str | Path) -> Path:
    cols = [f"error_{a}" for a in ATTRIBUTES] + ["explicit_composite"]
    titles = [LABELS[a] for a in ATTRIBUTES] + ["Normalized average"]
    fig, axes = plt.subplots(1, len(cols), figsize=(3.2 * len(cols), 3.6))
    for ax, col, title in zip(axes, cols, titles):
        roles = [r for r in ROLES if len(_column(report, r, col))]
        bp = ax.boxplot([_column(report, r, col) for r in roles], patch_artist=True, widths=0.6)
        for patch, role in zip(bp["boxes"], roles):
            patch.set_facecolor(COLORS[role])
            patch.set_alpha(0.6)
        ax.set_xticks(range(1, len(roles) + 1), [r.capitalize() for r in roles])
        ax.set_title(title)
    axes[0].set_ylabel("|superior - inferior|")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_correlation(report: MetricReport, path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 4))
    for role in ROLES:
        x = _column(report, role, "implicit_similarity")
        y = _column(report, role, "explicit_composite")
        if len(x):
            ax.scatter(x, y, s=10, alpha=0.6, color=COLORS[role], label=role.capitalize())
    ax.set_xlabel("Implicit (cosine similarity)")
    ax.set_ylabel("Explicit (normalized error)")
    if report.correlation is not None:
        ax.set_title(f"Pearson r = {report.correlation:.2f}")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def write_plots(report: MetricReport, directory: str | Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return [
        plot_attribute_boxplots(report, directory / "fig3_attribute_errors.png"),
        plot_correlation(report, directory / "fig4_implicit_vs_explicit.png"),
    ]
