"""Straight-line recomputation of the report numbers from raw (bits, category) scores.

Deliberately shares no code with ``metrics``: plain ints for subsets, plain
loops, ``math.fsum`` for means.  Used by the self-test and the test suite to
cross-check the engine on small tables.
"""

from __future__ import annotations

import math

from .core import CATEGORIES, ScoreTable, make_encoders, subset_enumerate
from .metrics import FullReport


def _mean(values):
    values = list(values)
    return math.fsum(values) / len(values)


def _popcount(bits: int) -> int:
    return bin(bits).count("1")


def raw_scores(table: ScoreTable) -> tuple[int, list[str], dict[tuple[int, str], float]]:
    """Per-category table -> (n, columns incl. Overall, {(bits, column): score})."""
    if table.granularity != "per-category":
        raise ValueError("oracle works on per-category tables")
    n = table.n
    cats = list(table.benchmarks)
    raw = {(s.bits, c): v for (s, c), v in table.entries.items()}
    for bits in range(1 << n):
        if all((bits, c) in raw for c in cats):
            raw[(bits, "Overall")] = _mean(raw[(bits, c)] for c in cats)
    return n, cats + ["Overall"], raw


def oracle_cur(n, raw, i, size, column, rule):
    if rule == "size-mean":
        level = [raw[(b, column)] for b in range(1 << n) if _popcount(b) == size]
        lacking = [raw[(b, column)] for b in range(1 << n) if _popcount(b) == size - 1 and not b >> i & 1]
        a, b = _mean(level), _mean(lacking)
        return (a - b) / a
    pairs = []
    for bits in range(1 << n):
        if _popcount(bits) == size and bits >> i & 1:
            pairs.append((raw[(bits, column)], raw[(bits & ~(1 << i), column)]))
    if rule == "per-subset-mean":
        return _mean((a - b) / a for a, b in pairs)
    a = _mean(p[0] for p in pairs)
    b = _mean(p[1] for p in pairs)
    return (a - b) / a


def oracle_report(table: ScoreTable, rule: str) -> dict:
    """All numbers for a complete per-category table, keyed by plain tuples."""
    n, columns, raw = raw_scores(table)
    cats = columns[:-1]
    out: dict = {"cur": {}, "ig": {}, "degradation": {}, "extremes": {}}
    for c in cats:
        for size in range(n, 1, -1):
            values = [oracle_cur(n, raw, i, size, c, rule) for i in range(n)]
            for i, v in enumerate(values):
                out["cur"][(c, size, i)] = v
            out["ig"][(c, size)] = max(values) - min(values)
    for c in columns:
        base = raw[((1 << n) - 1, c)]
        for k in range(n + 1):
            vals = [raw[(b, c)] for b in range(1 << n) if _popcount(b) == n - k]
            m = _mean(vals)
            out["degradation"][(c, k)] = (max(vals), min(vals), m, (m - base) / base)
        if n < 2:
            continue
        for i in range(n):
            with_i = [raw[(b, c)] for b in range(1, 1 << n) if b >> i & 1]
            without = [raw[(b, c)] for b in range(1, 1 << n) if not b >> i & 1]
            out["extremes"][(c, i)] = (max(with_i), min(with_i), max(without), min(without))
    return out


def compare(report: FullReport, table: ScoreTable) -> list[str]:
    """Exact (bitwise) comparison of an engine report against the oracle; returns mismatches."""
    expect = oracle_report(table, report.cur.rule)
    names = list(report.cur.encoders)
    bad = []
    for row in report.cur.rows:
        for i, v in enumerate(row.curs):
            want = expect["cur"][(row.category, row.size, i)]
            if v != want:
                bad.append(f"CUR {row.category} n'={row.size} {names[i]}: {v!r} != {want!r}")
        if row.ig != expect["ig"][(row.category, row.size)]:
            bad.append(f"IG {row.category} n'={row.size}: {row.ig!r} != {expect['ig'][(row.category, row.size)]!r}")
    for d in report.degradation.rows:
        got = (d.max, d.min, d.mean, d.rel_mean)
        want = expect["degradation"][(d.category, d.n_masked)]
        if got != want:
            bad.append(f"degradation {d.category} k={d.n_masked}: {got} != {want}")
    if len(report.degradation.rows) != len(expect["degradation"]):
        bad.append("degradation row count differs")
    for e in report.extremes:
        got = (e.max_with, e.min_with, e.max_without, e.min_without)
        want = expect["extremes"][(e.category, names.index(e.encoder))]
        if got != want:
            bad.append(f"extremes {e.category} {e.encoder}: {got} != {want}")
    if len(report.extremes) != len(expect["extremes"]):
        bad.append("extremes count differs")
    return bad


def random_table(n: int, rng, low: float = 1.0, high: float = 100.0, categories=None) -> ScoreTable:
    """A complete per-category table with uniform random scores."""
    cats = list(categories or CATEGORIES)
    entries = {(s, c): float(rng.uniform(low, high)) for s in subset_enumerate(n) for c in cats}
    return ScoreTable("random", make_encoders([f"E{i}" for i in range(n)]), entries, "per-category", tuple(cats))

