"""Figure rendering over a sweep CSV.

Reads only the aggregated per-run CSV (never transcripts or raw results)
and redraws its cell means as publication-style charts. Rendering never
recomputes metrics: what the CSV says is what gets plotted.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__version__ = "0.1.0"

FIGURE_KINDS = ("size_turns", "freshness", "diversity", "ablation")

DEFAULT_METRICS = ("hd", "cd", "ci", "on")

_X_LABELS = {
    "size_turns": "team size / discussion turns",
    "freshness": "team freshness fraction",
    "diversity": "research diversity fraction",
    "ablation": "configuration",
}


class RenderError(ValueError):
    """Bad figure spec or CSV input; message names the offending part."""


@dataclass(frozen=True)
class FigureSpec:
    csv_path: str
    kind: str
    out_path: str
    metrics: tuple[str, ...] = DEFAULT_METRICS

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise RenderError(f"unknown figure kind {self.kind!r}; pick one of {FIGURE_KINDS}")
        if not self.metrics:
            raise RenderError("at least one metric column must be plotted")


def load_rows(csv_path: str | Path, required: tuple[str, ...]) -> list[dict]:
    """Parse the sweep CSV; missing columns and empty files are errors."""
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise RenderError(f"{csv_path}: empty CSV, nothing to plot")
        missing = [c for c in ("cell_id", "value", *required) if c not in reader.fieldnames]
        if missing:
            raise RenderError(f"{csv_path}: missing required columns {missing}")
        rows = list(reader)
    if not rows:
        raise RenderError(f"{csv_path}: no data rows")
    return rows


def cell_means(rows: list[dict], metrics: tuple[str, ...]) -> dict[str, dict[str, float]]:
    """Per-cell arithmetic means for each metric, cells in file order.

    Rows with an empty metric value (failed runs, disabled scorers) are
    skipped for that metric; a cell with no usable value at all is an
    error because every plotted cell needs at least one row.
    """
    cells: dict[str, list[dict]] = {}
    for row in rows:
        cells.setdefault(row["cell_id"], []).append(row)
    means: dict[str, dict[str, float]] = {}
    for cell_id, cell_rows in cells.items():
        means[cell_id] = {}
        for metric in metrics:
            values = [float(r[metric]) for r in cell_rows if r.get(metric) not in ("", None)]
            if not values:
                raise RenderError(f"cell {cell_id!r} has no usable rows for column {metric!r}")
            means[cell_id][metric] = sum(values) / len(values)
    return means


def _sorted_cells(means: dict[str, dict[str, float]], numeric: bool) -> list[str]:
    if not numeric:
        return list(means)
    try:
        return sorted(means, key=float)
    except ValueError:
        return list(means)


def build_figure(spec: FigureSpec, rows: list[dict]):
    """Build the matplotlib Figure plus the plotted payload.

    The payload carries exactly the numbers drawn (cells in plot order and
    per-metric series), so callers can verify the drawing against the CSV.
    """
    means = cell_means(rows, spec.metrics)
    numeric = spec.kind in ("size_turns", "freshness", "diversity")
    cells = _sorted_cells(means, numeric)
    series = {m: [means[c][m] for c in cells] for m in spec.metrics}
    payload = {"cells": cells, "series": series}

    fig, ax = plt.subplots(figsize=(7, 4.5))
    if spec.kind == "size_turns":
        xs = [float(c) for c in cells]
        for metric in spec.metrics:
            ax.plot(xs, series[metric], marker="o", label=metric.upper())
        ax.set_xticks(xs)
        ax.legend()
    elif spec.kind in ("freshness", "diversity"):
        positions = range(len(cells))
        width = 0.8 / len(spec.metrics)
        for j, metric in enumerate(spec.metrics):
            offsets = [p + (j - (len(spec.metrics) - 1) / 2) * width for p in positions]
            ax.bar(offsets, series[metric], width=width, label=metric.upper())
        ax.set_xticks(list(positions))
        ax.set_xticklabels(cells)
        ax.legend()
    else:  # ablation: a table of means per configuration
        ax.axis("off")
        cell_text = [[c] + [f"{series[m][i]:.4f}" for m in spec.metrics] for i, c in enumerate(cells)]
        table = ax.table(
            cellText=cell_text,
            colLabels=["configuration"] + [m.upper() for m in spec.metrics],
            loc="center",
        )
        table.scale(1, 1.4)
    if spec.kind != "ablation":
        ax.set_xlabel(_X_LABELS[spec.kind])
        ax.set_ylabel("normalized score")
    ax.set_title(f"cell means by {spec.kind.replace('_', ' ')}")
    fig.tight_layout()
    return fig, payload


def render(spec: FigureSpec) -> tuple[Path, Path]:
    """Render the figure to SVG and PNG next to the requested out path."""
    rows = load_rows(spec.csv_path, spec.metrics)
    plt.rcParams["svg.hashsalt"] = "figrender"
    fig, _ = build_figure(spec, rows)
    out = Path(spec.out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    svg_path = out.with_suffix(".svg")
    png_path = out.with_suffix(".png")
    try:
        fig.savefig(svg_path, format="svg", metadata={"Date": None})
        fig.savefig(png_path, format="png", dpi=150)
    finally:
        plt.close(fig)
    return svg_path, png_path
