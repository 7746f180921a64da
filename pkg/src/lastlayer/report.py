"""Rendering of aggregated results as CSV or Markdown tables.

Layout: one row per method, one column per noise level, each cell showing
"mean (std)" in percent with two decimals.  Markdown mode bolds the best cell
per column and every cell within one standard deviation of it (measured with
the best cell's std).
"""

from __future__ import annotations

import io

from .errors import AggregationError
from .metrics import SummaryRow


def _cell(mean: float, std: float) -> str:
    return f"{100.0 * mean:.2f} ({100.0 * std:.2f})"


def _pivot(rows, methods=None, noise_levels=None):
    if not rows:
        raise AggregationError("no summary rows to report")
    by_key = {(r.method, r.noise_level): r for r in rows}
    if methods is None:
        methods = sorted({r.method for r in rows})
    if noise_levels is None:
        noise_levels = sorted({r.noise_level for r in rows})
    return by_key, list(methods), list(noise_levels)


def render_csv(rows: list[SummaryRow], methods=None, noise_levels=None) -> str:
    by_key, methods, noise_levels = _pivot(rows, methods, noise_levels)
    out = io.StringIO()
    out.write("method," + ",".join(repr(float(p)) for p in noise_levels) + "\n")
    for m in methods:
        cells = []
        for p in noise_levels:
            r = by_key.get((m, p))
            cells.append("" if r is None else _cell(r.mean, r.std))
        out.write(m + "," + ",".join(f'"{c}"' if c else "" for c in cells) + "\n")
    return out.getvalue()


def render_markdown(rows: list[SummaryRow], methods=None, noise_levels=None) -> str:
    by_key, methods, noise_levels = _pivot(rows, methods, noise_levels)

    # best per column, then bold anything within one std of the best
    bold = set()
    for p in noise_levels:
        col = [(m, by_key[(m, p)]) for m in methods if (m, p) in by_key]
        if not col:
            continue
        best_m, best = max(col, key=lambda item: item[1].mean)
        for m, r in col:
            if r.mean >= best.mean - best.std:
                bold.add((m, p))
        bold.add((best_m, p))

    header = "| Method | " + " | ".join(f"{100.0 * p:g}%" for p in noise_levels) + " |"
    sep = "|" + "---|" * (len(noise_levels) + 1)
    lines = [header, sep]
    for m in methods:
        cells = []
        for p in noise_levels:
            r = by_key.get((m, p))
            if r is None:
                cells.append("")
            else:
                text = _cell(r.mean, r.std)
                cells.append(f"**{text}**" if (m, p) in bold else text)
        lines.append("| " + m + " | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def render(rows: list[SummaryRow], fmt: str, methods=None, noise_levels=None) -> str:
    if fmt == "csv":
        return render_csv(rows, methods, noise_levels)
    if fmt == "markdown":
        return render_markdown(rows, methods, noise_levels)
    raise AggregationError(f"unknown report format {fmt!r}")
