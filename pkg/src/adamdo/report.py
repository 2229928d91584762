"""Figure rendering for recorded traces.

Renders the three standard trajectory views (stationary gap, loss, consensus
error) as PNG files next to the delimited output, and an aligned comparison
table when several traces share one epoch grid.  matplotlib is imported
lazily and pinned to the Agg backend, so the library import itself stays
plot-free and everything works headless.
"""
from __future__ import annotations

import os

from .harness import MetricRow, RunComparison, compare_runs, read_trace

__all__ = [
    "render_figures",
    "report_run",
    "report_compare",
    "write_comparison_csv",
]

_FIGURES = (
    ("stationary_gap", "stationary gap", True),
    ("loss", "global loss", False),
    ("consensus_err", "consensus error", True),
)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _dedupe(labels: list[str]) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for lab in labels:
        seen[lab] = seen.get(lab, 0) + 1
        out.append(lab if seen[lab] == 1 else f"{lab}-{seen[lab]}")
    return out


def render_figures(
    named_traces: list[tuple[str, list[MetricRow]]],
    out_dir: str,
    *,
    prefix: str = "",
) -> list[str]:
    """Render the standard figures, one line per named trace; returns paths."""
    plt = _pyplot()
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for column, ylabel, logscale in _FIGURES:
        fig, ax = plt.subplots(figsize=(7.0, 4.5))
        for label, rows in named_traces:
            epochs = [r.epoch for r in rows]
            values = [getattr(r, column) for r in rows]
            ax.plot(epochs, values, label=label)
        if logscale:
            ax.set_yscale("log")
        ax.set_xlabel("epochs (sample passes)")
        ax.set_ylabel(ylabel)
        ax.grid(True, which="both", alpha=0.3)
        if len(named_traces) > 1:
            ax.legend()
        fig.tight_layout()
        path = os.path.join(out_dir, f"{prefix}{column}.png")
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written


def report_run(trace_path: str, out_dir: str | None = None) -> list[str]:
    """Render one trace's figures alongside it (or into ``out_dir``)."""
    rows, _ = read_trace(trace_path)
    if not rows:
        raise ValueError(f"{trace_path}: empty trace, nothing to plot")
    target = out_dir if out_dir is not None else (os.path.dirname(trace_path) or ".")
    return render_figures([(_stem(trace_path), rows)], target)


def write_comparison_csv(comparison: RunComparison, path: str) -> str:
    """Write the column-wise comparison table over the shared epoch grid."""
    labels = _dedupe([_stem(p) for p, _, _, _ in comparison.entries])
    header = ["epoch"]
    for lab in labels:
        header += [f"{lab}_gap", f"{lab}_loss"]
    lines = [",".join(header)]
    length = len(comparison.entries[0][3])
    for k in range(length):
        cells = [f"{comparison.entries[0][3][k].epoch:.17g}"]
        for _, _, _, rows in comparison.entries:
            cells += [f"{rows[k].stationary_gap:.17g}", f"{rows[k].loss:.17g}"]
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def report_compare(
    trace_paths: list[str], out_dir: str | None = None
) -> tuple[list[str], RunComparison]:
    """Overlay several traces into the standard figures and write the aligned
    ``comparison.csv``.  Returns (paths, ranking)."""
    comparison = compare_runs(trace_paths)
    target = out_dir if out_dir is not None else (os.path.dirname(trace_paths[0]) or ".")
    labels = _dedupe([_stem(p) for p, _, _, _ in comparison.entries])
    named = [(lab, rows) for lab, (_, _, _, rows) in zip(labels, comparison.entries)]
    written = render_figures(named, target, prefix="compare_")
    written.append(write_comparison_csv(comparison, os.path.join(target, "comparison.csv")))
    return written, comparison
