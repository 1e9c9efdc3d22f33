"""Category aggregation, conditional utilization rate (CUR), information gap (IG),
degradation summaries and conditional max/min analyses over encoder subsets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import fmean
from typing import Iterable, Sequence

from .core import (
    CoverageError,
    EncoderId,
    EncoderSubset,
    NumericalError,
    PreconditionError,
    ScoreTable,
    subset_enumerate,
)
from .ingest import CategoryScheme

OVERALL = "Overall"

SIZE_MEAN = "size-mean"
PER_SUBSET_MEAN = "per-subset-mean"
MEAN_OF_SCORES = "mean-of-scores"
CUR_RULES = (SIZE_MEAN, PER_SUBSET_MEAN, MEAN_OF_SCORES)
DEFAULT_CUR_RULE = SIZE_MEAN


class UndefinedCurError(NumericalError):
    pass


@dataclass(frozen=True)
class Aggregates:
    """Per-(subset, category) scores plus an ``Overall`` column per subset."""

    model_name: str
    encoders: tuple[EncoderId, ...]
    categories: tuple[str, ...]
    scores: dict[tuple[EncoderSubset, str], float]

    @property
    def n(self) -> int:
        return len(self.encoders)

    @property
    def encoder_names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.encoders)

    @property
    def columns(self) -> tuple[str, ...]:
        return self.categories + (OVERALL,)

    def has(self, subset: EncoderSubset, category: str) -> bool:
        return (subset, category) in self.scores

    def score(self, subset: EncoderSubset, category: str) -> float:
        try:
            return self.scores[(subset, category)]
        except KeyError:
            raise CoverageError(f"no aggregated score for subset {subset} in {category!r}") from None

    def subsets(self, category: str, size: int | None = None) -> list[EncoderSubset]:
        """Present subsets for ``category`` in enumeration order, optionally of one size."""
        return [
            s
            for s in subset_enumerate(self.n)
            if (s, category) in self.scores and (size is None or len(s) == size)
        ]

    def _check_column(self, category: str) -> None:
        if category not in self.columns:
            raise PreconditionError(f"unknown category {category!r}; have {self.columns}")


def aggregate_scores(table: ScoreTable, scheme: CategoryScheme | None = None) -> Aggregates:
    """Normalize-then-average benchmarks into categories; overall is the mean of categories.

    Per-category tables pass through unchanged.  The input table is not modified.
    """
    cat_scores: dict[tuple[EncoderSubset, str], float] = {}
    if table.granularity == "per-category":
        categories = tuple(table.benchmarks)
        cat_scores.update(table.entries)
    else:
        if scheme is None:
            raise PreconditionError("per-benchmark tables need a category scheme")
        for bench in table.benchmarks:
            scheme.category_of(bench)
        categories = tuple(
            c for c in scheme.categories if any(scheme.mapping[b] == c for b in table.benchmarks)
        )
        buckets: dict[tuple[EncoderSubset, str], list[float]] = {}
        for (subset, bench), raw in table.entries.items():
            key = (subset, scheme.category_of(bench))
            buckets.setdefault(key, []).append(raw / scheme.divisor_of(bench))
        cat_scores = {k: fmean(v) for k, v in buckets.items()}

    scores = dict(cat_scores)
    for subset in table.subsets():
        row = [cat_scores.get((subset, c)) for c in categories]
        missing = [c for c, v in zip(categories, row) if v is None]
        if missing:
            raise CoverageError(f"subset {subset} has no benchmarks in categories {missing}")
        scores[(subset, OVERALL)] = fmean(row)  # type: ignore[arg-type]
    return Aggregates(table.model_name, table.encoders, categories, scores)


def cur(full_score: float, ablated_score: float) -> float:
    """Relative performance change when one encoder is removed: (full - ablated) / full."""
    if not full_score > 0:
        raise UndefinedCurError(f"CUR undefined for non-positive full score {full_score}")
    return (full_score - ablated_score) / full_score


def _index(agg: Aggregates, encoder: int | EncoderId | str) -> int:
    if isinstance(encoder, EncoderId):
        return encoder.index
    if isinstance(encoder, str):
        try:
            return agg.encoder_names.index(encoder)
        except ValueError:
            raise PreconditionError(f"unknown encoder {encoder!r}") from None
    if not 0 <= encoder < agg.n:
        raise PreconditionError(f"encoder index {encoder} outside [0, {agg.n})")
    return encoder


def cur_at_size(
    agg: Aggregates,
    encoder: int | EncoderId | str,
    size: int,
    category: str,
    rule: str = DEFAULT_CUR_RULE,
) -> float:
    """CUR of one encoder in contexts of ``size`` active encoders.

    ``size-mean``
        Mean score over all size-``size`` subsets against the mean score over
        size-``size - 1`` subsets lacking the encoder, relative to the former.
    ``per-subset-mean``
        Mean over size-``size`` subsets S containing the encoder of cur(S, S - {i}).
    ``mean-of-scores``
        cur of the mean score over those S against the mean over the matching S - {i}.

    All three reduce to the single-ablation CUR when ``size`` equals the encoder count.
    """
    i = _index(agg, encoder)
    agg._check_column(category)
    if not 1 <= size <= agg.n:
        raise PreconditionError(f"subset size {size} outside [1, {agg.n}]")
    if rule == SIZE_MEAN:
        # both pools must be complete: a mean over part of a level is not the level mean
        level = agg.subsets(category, size)
        lacking = [s for s in agg.subsets(category, size - 1) if i not in s]
        if len(level) != math.comb(agg.n, size) or len(lacking) != math.comb(agg.n - 1, size - 1):
            raise CoverageError(
                f"size-{size} subsets or size-{size - 1} subsets lacking encoder {i} incomplete in {category!r}"
            )
        return cur(
            fmean(agg.score(s, category) for s in level),
            fmean(agg.score(s, category) for s in lacking),
        )
    pairs = [
        (agg.score(s, category), agg.score(s.without(i), category))
        for s in agg.subsets(category, size)
        if i in s and agg.has(s.without(i), category)
    ]
    if not pairs:
        raise CoverageError(f"no size-{size} subset containing encoder {i} with its ablation in {category!r}")
    if rule == PER_SUBSET_MEAN:
        return fmean(cur(a, b) for a, b in pairs)
    if rule == MEAN_OF_SCORES:
        return cur(fmean(a for a, _ in pairs), fmean(b for _, b in pairs))
    raise PreconditionError(f"unknown CUR rule {rule!r}; choose from {CUR_RULES}")


def information_gap(curs: Iterable[float]) -> float:
    values = list(curs)
    if not values:
        raise PreconditionError("information gap of an empty CUR list")
    return max(values) - min(values)


@dataclass(frozen=True)
class CurRow:
    category: str
    size: int
    curs: tuple[float | None, ...]
    ig: float | None


@dataclass(frozen=True)
class CurReport:
    encoders: tuple[str, ...]
    rule: str
    rows: tuple[CurRow, ...]
    notes: tuple[str, ...] = ()

    def row(self, category: str, size: int) -> CurRow:
        for r in self.rows:
            if r.category == category and r.size == size:
                return r
        raise KeyError((category, size))

    def value(self, category: str, size: int, encoder: str) -> float | None:
        return self.row(category, size).curs[self.encoders.index(encoder)]


def cur_report(
    agg: Aggregates,
    rule: str = DEFAULT_CUR_RULE,
    sizes: Sequence[int] | None = None,
    categories: Sequence[str] | None = None,
) -> CurReport:
    """CUR per (category, context size, encoder) and IG per row; sizes default to n..2."""
    if rule not in CUR_RULES:
        raise PreconditionError(f"unknown CUR rule {rule!r}; choose from {CUR_RULES}")
    if sizes is None:
        sizes = range(agg.n, 1, -1)
    rows = []
    notes = []
    for category in categories or agg.categories:
        for size in sizes:
            values: list[float | None] = []
            for i in range(agg.n):
                try:
                    values.append(cur_at_size(agg, i, size, category, rule))
                except CoverageError as exc:
                    values.append(None)
                    notes.append(str(exc))
            present = [v for v in values if v is not None]
            ig = information_gap(present) if len(present) >= 2 else None
            rows.append(CurRow(category, size, tuple(values), ig))
    return CurReport(agg.encoder_names, rule, tuple(rows), tuple(notes))


@dataclass(frozen=True)
class DegradationRow:
    category: str
    n_masked: int
    count: int
    expected: int
    max: float
    min: float
    mean: float
    argmax: EncoderSubset
    argmin: EncoderSubset
    baseline: float | None

    def relative(self, value: float) -> float | None:
        if self.baseline is None:
            return None
        if not self.baseline > 0:
            raise UndefinedCurError(f"relative change undefined for baseline {self.baseline}")
        return (value - self.baseline) / self.baseline

    @property
    def rel_mean(self) -> float | None:
        return self.relative(self.mean)

    @property
    def rel_max(self) -> float | None:
        return self.relative(self.max)

    @property
    def rel_min(self) -> float | None:
        return self.relative(self.min)

    @property
    def complete(self) -> bool:
        return self.count == self.expected


@dataclass(frozen=True)
class DegradationSummary:
    rows: tuple[DegradationRow, ...]
    complete: bool

    def row(self, category: str, n_masked: int) -> DegradationRow:
        for r in self.rows:
            if r.category == category and r.n_masked == n_masked:
                return r
        raise KeyError((category, n_masked))


def degradation_summary(agg: Aggregates) -> DegradationSummary:
    """Max/min/mean score per number of masked encoders, with change relative to the full set."""
    full = EncoderSubset.full(agg.n)
    rows = []
    complete = True
    for category in agg.columns:
        baseline = agg.scores.get((full, category))
        for k in range(agg.n + 1):
            present = agg.subsets(category, agg.n - k)
            expected = math.comb(agg.n, k)
            complete &= len(present) == expected and baseline is not None
            if not present:
                continue
            vals = [agg.score(s, category) for s in present]
            hi = max(range(len(vals)), key=lambda j: (vals[j], -j))
            lo = min(range(len(vals)), key=lambda j: (vals[j], j))
            rows.append(
                DegradationRow(
                    category, k, len(present), expected,
                    vals[hi], vals[lo], fmean(vals), present[hi], present[lo], baseline,
                )
            )
    return DegradationSummary(tuple(rows), complete)


@dataclass(frozen=True)
class ConditionalExtremes:
    category: str
    encoder: str
    max_with: float
    argmax_with: EncoderSubset
    min_with: float
    argmin_with: EncoderSubset
    max_without: float
    argmax_without: EncoderSubset
    min_without: float
    argmin_without: EncoderSubset


def _extreme(agg: Aggregates, pool: list[EncoderSubset], category: str, pick) -> tuple[float, EncoderSubset]:
    best = pool[0]
    best_val = agg.score(best, category)
    for s in pool[1:]:
        v = agg.score(s, category)
        if pick(v, best_val):
            best, best_val = s, v
    return best_val, best


def conditional_extremes(agg: Aggregates, encoder: int | EncoderId | str, category: str) -> ConditionalExtremes:
    """Best and worst scores over nonempty subsets that include vs. exclude the encoder.

    Ties resolve to the first subset in enumeration order.
    """
    i = _index(agg, encoder)
    agg._check_column(category)
    if agg.n < 2:
        raise CoverageError("conditional extremes need at least two encoders")
    present = [s for s in agg.subsets(category) if len(s) > 0]
    with_i = [s for s in present if i in s]
    without_i = [s for s in present if i not in s]
    if not with_i or not without_i:
        raise CoverageError(f"empty with/without pool for encoder {i} in {category!r}")
    gt = lambda a, b: a > b  # noqa: E731
    lt = lambda a, b: a < b  # noqa: E731
    mw, smw = _extreme(agg, with_i, category, gt)
    nw, snw = _extreme(agg, with_i, category, lt)
    mo, smo = _extreme(agg, without_i, category, gt)
    no, sno = _extreme(agg, without_i, category, lt)
    return ConditionalExtremes(category, agg.encoder_names[i], mw, smw, nw, snw, mo, smo, no, sno)


def all_conditional_extremes(agg: Aggregates) -> list[ConditionalExtremes]:
    if agg.n < 2:
        return []
    return [conditional_extremes(agg, i, c) for c in agg.columns for i in range(agg.n)]


@dataclass(frozen=True)
class RedundancyResult:
    raised: bool
    category: str
    baseline: float
    best_score: float
    witness: EncoderSubset
    epsilon: float
    relative: bool

    @property
    def relative_drop(self) -> float:
        return (self.baseline - self.best_score) / self.baseline


def redundancy_check(
    agg: Aggregates,
    category: str = OVERALL,
    epsilon: float = 0.0,
    relative: bool = False,
) -> RedundancyResult:
    """Flag redundancy when some proper subset scores at least ``baseline - epsilon``.

    With ``relative=True`` the threshold is ``baseline * (1 - epsilon)``.
    """
    agg._check_column(category)
    if epsilon < 0:
        raise PreconditionError("epsilon must be nonnegative")
    full = EncoderSubset.full(agg.n)
    baseline = agg.score(full, category)
    proper = [s for s in agg.subsets(category) if s != full]
    if not proper:
        raise CoverageError("no proper subsets to compare with the full set")
    best_val, best = _extreme(agg, proper, category, lambda a, b: a > b)
    threshold = baseline * (1 - epsilon) if relative else baseline - epsilon
    return RedundancyResult(best_val >= threshold, category, baseline, best_val, best, epsilon, relative)


@dataclass
class FullReport:
    aggregates: Aggregates
    cur: CurReport
    degradation: DegradationSummary
    extremes: list[ConditionalExtremes]
    redundancy: RedundancyResult | None
    coverage: dict[str, object] = field(default_factory=dict)
    alternative_cur: dict[str, CurReport] = field(default_factory=dict)
