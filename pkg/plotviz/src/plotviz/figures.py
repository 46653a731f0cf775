"""Benchmark CSV to static scaling figures.

Consumes the benchmark CSV schema (one row per run) and renders line
plots: throughput vs a settings column, speedup vs the ideal line, and
two-series toggle comparisons. Output is a static image whose bytes are
deterministic for fixed input.
"""

import csv
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


class PlotvizError(Exception):
    pass


@dataclass(frozen=True)
class PlotSpec:
    csv_paths: tuple
    x: str = "workers"
    group: str = "simd"
    out: str = "fig.png"
    log2: bool = False
    speedup: bool = False

    def __post_init__(self):
        if not self.csv_paths:
            raise PlotvizError("no input CSV paths given")


def read_rows(paths):
    """Concatenated rows of all input files, input order preserved.
    Returns (header, rows); all files must share one header."""
    header = None
    rows = []
    for path in paths:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise PlotvizError(f"{path} is empty")
            if header is None:
                header = list(reader.fieldnames)
            elif list(reader.fieldnames) != header:
                raise PlotvizError(
                    f"{path} header {','.join(reader.fieldnames)} does not "
                    f"match first file header {','.join(header)}")
            rows.extend(reader)
    if not rows:
        raise PlotvizError(f"no data rows in {', '.join(paths)}")
    return header, rows


def check_columns(header, needed):
    missing = [c for c in needed if c not in header]
    if missing:
        raise PlotvizError(
            f"column(s) {', '.join(repr(c) for c in missing)} not in "
            f"CSV header: {','.join(header)}")


def split_series(rows, group):
    """Partition rows by the grouping column, first-appearance order,
    keeping every row and the row order within each series."""
    series = {}
    for row in rows:
        series.setdefault(row[group], []).append(row)
    return series


def _numeric(row, col):
    try:
        return float(row[col])
    except ValueError:
        raise PlotvizError(f"non-numeric value {row[col]!r} in column "
                           f"{col!r}") from None


def _series_xy(rows, spec):
    xs = [_numeric(r, spec.x) for r in rows]
    if spec.speedup:
        # speedup normalizes each series by its own smallest-x wall time
        # (first such row if the smallest x repeats)
        walls = [_numeric(r, "wall_s") for r in rows]
        base = walls[xs.index(min(xs))]
        ys = [base / w for w in walls]
    else:
        ys = [_numeric(r, "cells_per_s") for r in rows]
    return xs, ys


def render(spec):
    """Build the figure without writing it; returns (fig, ax)."""
    header, rows = read_rows(spec.csv_paths)
    needed = [spec.x, spec.group]
    needed += ["wall_s"] if spec.speedup else ["cells_per_s"]
    check_columns(header, needed)
    series = split_series(rows, spec.group)

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    all_x = []
    for value, srows in series.items():
        xs, ys = _series_xy(srows, spec)
        ax.plot(xs, ys, marker="o", label=str(value))
        all_x.extend(xs)
    if spec.speedup:
        x0 = min(all_x)
        ideal_x = sorted(set(all_x))
        ax.plot(ideal_x, [x / x0 for x in ideal_x], linestyle="--",
                color="gray", label="Ideal")
    if spec.log2:
        ax.set_xscale("log", base=2)
        ax.set_yscale("log", base=2)
    ax.set_xlabel(f"# {spec.x}")
    ax.set_ylabel("Speedup" if spec.speedup else
                  "Processed cells per second")
    ax.legend()
    fig.tight_layout()
    return fig, ax


def _metadata_for(path):
    # the vector backends stamp creation dates unless told not to; PNG
    # carries none by default but the explicit None keeps that pinned
    if path.endswith(".svg"):
        return {"Date": None}
    if path.endswith(".pdf"):
        return {"CreationDate": None}
    return {"Software": "plotviz"}


def _save(fig, spec):
    fig.savefig(spec.out, dpi=120, metadata=_metadata_for(spec.out))
    plt.close(fig)
    return spec.out


def plot_scaling(spec):
    """One line per grouping value; optional log2 axes and speedup mode
    with an ideal reference line. Writes spec.out, returns the path."""
    fig, _ax = render(spec)
    return _save(fig, spec)


def plot_toggle_compare(spec):
    """plot_scaling restricted to exactly two series (a toggle)."""
    header, rows = read_rows(spec.csv_paths)
    check_columns(header, [spec.group])
    values = list(split_series(rows, spec.group))
    if len(values) != 2:
        raise PlotvizError(
            f"toggle comparison needs exactly 2 values of {spec.group!r}, "
            f"found {len(values)}: {', '.join(map(repr, values))}")
    fig, _ax = render(spec)
    return _save(fig, spec)
