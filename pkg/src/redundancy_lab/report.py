"""Markdown / CSV / SVG rendering of a ``FullReport``.

Markdown tables show percentages rounded half-up to two decimals from the
full-precision value.  CSV files keep full precision (``repr`` floats) and start
with the ``# redundancy-lab v1`` tag so they can be read back with
``ingest.read_report_csv``.
"""

from __future__ import annotations

import csv
import io
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .core import EncoderSubset
from .ingest import FORMAT_TAG
from .metrics import OVERALL, CurReport, FullReport

RULE_DESCRIPTIONS = {
    "size-mean": "mean score over all size-n' subsets vs. mean over size-(n'-1) subsets lacking the encoder",
    "per-subset-mean": "mean over size-n' subsets S containing the encoder of cur(S, S minus the encoder)",
    "mean-of-scores": "cur of the mean score over those S vs. the mean over the matching S minus the encoder",
}


def half_up(value: float, places: int = 2) -> str:
    """Exact binary value rounded half-up (so 0.125 -> 0.13, 2.675 -> 2.67)."""
    q = Decimal(1).scaleb(-places)
    out = Decimal(value).quantize(q, rounding=ROUND_HALF_UP)
    if out == 0:
        out = abs(out)
    return str(out)


def pct(fraction: float, places: int = 2) -> str:
    """A fraction shown as a percentage, e.g. 0.0138 -> '1.38'; the x100 is done exactly."""
    out = (Decimal(fraction) * 100).quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP)
    if out == 0:
        out = abs(out)
    return str(out)


def signed_pct(fraction: float, places: int = 1) -> str:
    text = pct(fraction, places)
    return text if text.startswith("-") else "+" + text


def _masked(subset: EncoderSubset, names) -> str:
    return subset.complement().label(names, sep=";")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    buf.write(FORMAT_TAG + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _md_table(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(str(c) for c in row) + " |" for row in rows]
    return "\n".join(lines) + "\n"


def _cur_rows(report: CurReport):
    for row in report.rows:
        cells = ["" if v is None else pct(v, 2) for v in row.curs]
        yield [row.category, row.size, *cells, "" if row.ig is None else pct(row.ig, 2)]


def _max_gap(a: CurReport, b: CurReport) -> float | None:
    gaps = [
        abs(x - y)
        for ra, rb in zip(a.rows, b.rows)
        for x, y in zip(ra.curs, rb.curs)
        if x is not None and y is not None and ra.size < len(a.encoders)
    ]
    return max(gaps) if gaps else None


def cur_ig_markdown(rep: FullReport) -> str:
    agg = rep.aggregates
    header = ["Category", "n'", *agg.encoder_names, "Avg Δ_gap"]
    out = [
        "# Conditional utilization rate (CUR) and information gap\n",
        f"Model: {agg.model_name}. CUR rule: {rep.cur.rule} ({RULE_DESCRIPTIONS[rep.cur.rule]}).",
        "Values are percentages; n' is the number of active encoders in the context.\n",
    ]
    if rep.cur.rows:
        out.append(_md_table(header, _cur_rows(rep.cur)))
    else:
        out.append("No CUR rows: the information gap needs at least two encoders.\n")
    if rep.cur.notes:
        out.append("Gaps in coverage:\n")
        out += [f"- {note}" for note in rep.cur.notes]
        out.append("")
    if rep.alternative_cur and rep.cur.rows:
        out.append("## Other aggregation rules for n' below the full size\n")
        out.append("At full size every rule reduces to the single-ablation CUR; below it they differ.\n")
        for rule, alt in rep.alternative_cur.items():
            gap = _max_gap(rep.cur, alt)
            diff = "n/a" if gap is None else pct(gap, 2)
            out.append(f"### {rule}\n")
            out.append(f"{RULE_DESCRIPTIONS[rule]}. Largest difference from {rep.cur.rule}: {diff} points.\n")
            out.append(_md_table(header, _cur_rows(alt)))
    return "\n".join(out)


def cur_ig_csv(rep: FullReport) -> str:
    names = rep.aggregates.encoder_names
    rows = []
    for report in (rep.cur, *rep.alternative_cur.values()):
        for row in report.rows:
            pcts = [None if v is None else v * 100 for v in row.curs]
            rows.append([report.rule, row.category, row.size, *pcts, None if row.ig is None else row.ig * 100])
    return _csv(["rule", "category", "size", *names, "ig"], rows)


def degradation_markdown(rep: FullReport) -> str:
    agg = rep.aggregates
    deg = rep.degradation
    columns = agg.columns
    out = [
        "# Score degradation by number of masked encoders\n",
        f"Model: {agg.model_name}. Cells: mean score over all subsets with k encoders masked "
        "(change relative to the full set).\n",
    ]
    rows = []
    for k in range(agg.n + 1):
        cells = []
        for c in columns:
            try:
                r = deg.row(c, k)
            except KeyError:
                cells.append("")
                continue
            rel = r.rel_mean
            cells.append(half_up(r.mean) if k == 0 or rel is None else f"{half_up(r.mean)} ({signed_pct(rel)}%)")
        rows.append([k, *cells])
    out.append(_md_table(["# masked", *columns], rows))
    out.append("## Max / min / mean per column\n")
    rows = [
        [r.category, r.n_masked, f"{r.count}/{r.expected}", half_up(r.max), half_up(r.min), half_up(r.mean)]
        for r in deg.rows
    ]
    out.append(_md_table(["Column", "# masked", "subsets", "max", "min", "mean"], rows))
    if not deg.complete:
        out.append("Coverage is incomplete: rows with fewer subsets than expected are marked in the subsets column.\n")
    return "\n".join(out)


def degradation_csv(rep: FullReport) -> str:
    names = rep.aggregates.encoder_names
    rows = [
        [r.category, r.n_masked, r.count, r.expected, r.max, r.min, r.mean,
         r.rel_mean, r.rel_max, r.rel_min, _masked(r.argmax, names), _masked(r.argmin, names)]
        for r in rep.degradation.rows
    ]
    return _csv(["category", "n_masked", "count", "expected", "max", "min", "mean",
                 "rel_mean", "rel_max", "rel_min", "argmax_masked", "argmin_masked"], rows)


def extremes_csv(rep: FullReport) -> str:
    names = rep.aggregates.encoder_names
    rows = [
        [e.category, e.encoder,
         e.max_with, _masked(e.argmax_with, names), e.min_with, _masked(e.argmin_with, names),
         e.max_without, _masked(e.argmax_without, names), e.min_without, _masked(e.argmin_without, names)]
        for e in rep.extremes
    ]
    return _csv(["category", "encoder", "max_with", "max_with_masked", "min_with", "min_with_masked",
                 "max_without", "max_without_masked", "min_without", "min_without_masked"], rows)


def distribution_csv(rep: FullReport) -> str:
    agg = rep.aggregates
    rows = []
    for c in agg.columns:
        for k in range(agg.n + 1):
            for s in agg.subsets(c, agg.n - k):
                rows.append([c, k, _masked(s, agg.encoder_names), agg.score(s, c)])
    return _csv(["category", "n_masked", "masked", "score"], rows)


def distribution_svg(rep: FullReport, column: str = OVERALL) -> str:
    """Box plot of ``column`` scores per number of masked encoders."""
    agg = rep.aggregates
    groups = []
    for k in range(agg.n + 1):
        vals = [agg.score(s, column) for s in agg.subsets(column, agg.n - k)]
        groups.append((k, vals))
    values = [v for _, vals in groups for v in vals]
    lo, hi = (min(values), max(values)) if values else (0.0, 1.0)
    if hi - lo < 1e-9:
        lo, hi = lo - 1, hi + 1
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    width, height, left, right, top, bottom = 80 * len(groups) + 80, 320, 60, 20, 30, 40
    plot_h = height - top - bottom
    step = (width - left - right) / max(len(groups), 1)

    def y(v: float) -> str:
        return f"{top + (hi - v) / (hi - lo) * plot_h:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle">{_xml(agg.model_name)}: {_xml(column)} score '
        "by number of masked encoders</text>",
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{width - right}" y2="{top + plot_h}" stroke="black"/>',
    ]
    for t in np.linspace(lo, hi, 5):
        parts.append(f'<text x="{left - 5}" y="{y(t)}" text-anchor="end">{t:.1f}</text>')
    for j, (k, vals) in enumerate(groups):
        cx = left + step * (j + 0.5)
        parts.append(f'<text x="{cx:.2f}" y="{height - 15}" text-anchor="middle">{k}</text>')
        if not vals:
            continue
        q1, med, q3 = np.percentile(vals, [25, 50, 75])
        half = min(20.0, step / 3)
        parts.append(f'<line x1="{cx:.2f}" y1="{y(max(vals))}" x2="{cx:.2f}" y2="{y(min(vals))}" stroke="black"/>')
        parts.append(f'<rect x="{cx - half:.2f}" y="{y(q3)}" width="{2 * half:.2f}" '
                     f'height="{float(y(q1)) - float(y(q3)):.2f}" fill="#9ecae1" stroke="black"/>')
        parts.append(f'<line x1="{cx - half:.2f}" y1="{y(med)}" x2="{cx + half:.2f}" y2="{y(med)}" '
                     'stroke="black" stroke-width="2"/>')
        for v in vals:
            parts.append(f'<circle cx="{cx:.2f}" cy="{y(v)}" r="2" fill="#3182bd"/>')
    parts.append(f'<text x="{width / 2:.1f}" y="{height - 2}" text-anchor="middle">encoders masked</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _xml(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def summary_markdown(rep: FullReport) -> str:
    agg = rep.aggregates
    out = ["# Summary\n", f"Model: {agg.model_name}. Encoders: {', '.join(agg.encoder_names)}.\n"]
    cov = rep.coverage
    out.append(f"Coverage: {cov.get('present_subsets')}/{cov.get('expected_subsets')} subsets present.")
    if cov.get("missing_masked"):
        out.append("Missing (masked encoders): " + ", ".join(cov["missing_masked"]))
    out.append("")
    r = rep.redundancy
    if r is None:
        out.append("Redundancy check: not run (needs the full set and at least one proper subset).")
    else:
        mode = f"relative, epsilon={r.epsilon}" if r.relative else f"absolute, epsilon={r.epsilon}"
        out.append(f"Redundancy flag ({r.category}, {mode}): {'RAISED' if r.raised else 'not raised'}.")
        out.append(f"Full set: {half_up(r.baseline)}. Best proper subset: {half_up(r.best_score)} "
                   f"(masked: {_masked(r.witness, agg.encoder_names)}; {signed_pct(-r.relative_drop, 2)}%).")
    return "\n".join(out) + "\n"


def render(rep: FullReport, fmt: str = "all") -> dict[str, str]:
    """File name -> content for the report set."""
    files: dict[str, str] = {}
    if fmt in ("md", "all"):
        files["cur_ig.md"] = cur_ig_markdown(rep)
        files["degradation.md"] = degradation_markdown(rep)
        files["summary.md"] = summary_markdown(rep)
    if fmt in ("csv", "all"):
        files["cur_ig.csv"] = cur_ig_csv(rep)
        files["degradation.csv"] = degradation_csv(rep)
    files["extremes.csv"] = extremes_csv(rep)
    files["distribution.csv"] = distribution_csv(rep)
    files["distribution.svg"] = distribution_svg(rep)
    return files

