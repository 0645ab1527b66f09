"""Draw one figure with one curve per run log.

Output is SVG only and is a pure function of the input tables: style is
pinned, element ids are salted with a constant, text stays text, and the
date field is stripped, so rerunning on the same CSVs reproduces the
file byte for byte.
"""

from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .schema import CSV_COLUMNS, X_AXES, PlotError, load_table

__all__ = ["PlotSpec", "render", "X_LABELS"]

X_LABELS = {
    "payload_words_total": "cumulative payload (words)",
    "t": "outer round (rounds)",
    "wall_seconds": "wall clock (seconds)",
}

# everything that could differ between hosts or sessions is pinned here
_STYLE = {
    "figure.figsize": (6.4, 4.2),
    "figure.dpi": 100,
    "font.family": "DejaVu Sans",
    "font.size": 10.0,
    "svg.fonttype": "none",
    "svg.hashsalt": "gossipplot",
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.8,
}

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


@dataclass(frozen=True)
class PlotSpec:
    """What to draw: which files, which columns, which scales, where to.

    inputs pairs each CSV path with its legend label; labels must be
    unique.  x must be one of the cumulative axes, y any schema column.
    """

    inputs: tuple = field(default_factory=tuple)  # ((path, label), ...)
    x: str = "t"
    y: str = "value_surrogate"
    logx: bool = False
    logy: bool = False
    out: str = "plot.svg"

    def validate(self) -> None:
        problems = []
        if not self.inputs:
            problems.append("no input files given")
        if self.x not in X_AXES:
            problems.append(f"x axis {self.x!r} not supported; choose one of {', '.join(X_AXES)}")
        if self.y not in CSV_COLUMNS:
            problems.append(f"y column {self.y!r} is not in the run-log schema")
        labels = [label for _, label in self.inputs]
        dupes = sorted({l for l in labels if labels.count(l) > 1})
        if dupes:
            problems.append(f"duplicate labels {dupes}; each curve needs its own")
        if not str(self.out).endswith(".svg"):
            problems.append(f"output {self.out!r} must end in .svg (vector output only)")
        if problems:
            raise PlotError("; ".join(problems))


def _series(table: dict, path: str, x: str, y: str):
    """Paired (x, y) values with empty cells dropped."""
    xs, ys = [], []
    for xv, yv in zip(table[x], table[y]):
        if xv is None or yv is None:
            continue
        xs.append(xv)
        ys.append(yv)
    if not ys:
        raise PlotError(f"{path}: column {y!r} has no values to plot")
    return xs, ys


def render(spec: PlotSpec) -> str:
    """Write the figure described by ``spec`` and return its path."""
    spec.validate()
    curves = []
    for path, label in spec.inputs:
        table = load_table(path)
        curves.append((label, *_series(table, str(path), spec.x, spec.y)))

    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for k, (label, xs, ys) in enumerate(curves):
            ax.plot(xs, ys, label=label, color=_COLORS[k % len(_COLORS)])
        if spec.logx:
            ax.set_xscale("log")
        if spec.logy:
            ax.set_yscale("log")
        ax.set_xlabel(X_LABELS[spec.x])
        ax.set_ylabel(spec.y)
        ax.legend()
        fig.tight_layout()
        try:
            fig.savefig(spec.out, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return str(spec.out)
