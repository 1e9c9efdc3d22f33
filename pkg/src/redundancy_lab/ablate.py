"""Exhaustive encoder-masking runs and the bundled analysis report."""

from __future__ import annotations

from .core import MAX_ENCODERS, BoundsError, ScoreTable, make_encoders, subset_enumerate
from .ingest import CategoryScheme
from .metrics import (
    CUR_RULES,
    DEFAULT_CUR_RULE,
    OVERALL,
    FullReport,
    aggregate_scores,
    all_conditional_extremes,
    cur_report,
    degradation_summary,
    redundancy_check,
)
from .simkit import MultiEncoderModel, SimWorld
from .train import evaluate


def world_category_scheme(world: SimWorld) -> CategoryScheme:
    """Each task is a benchmark filed under its own category, divisor 1."""
    return CategoryScheme({t.name: t.category for t in world.tasks})


def run_ablation(
    model: MultiEncoderModel,
    world: SimWorld,
    n_samples: int,
    seed: int,
    model_name: str = "sim",
) -> ScoreTable:
    """Evaluate every encoder subset; scores are accuracies in percent.

    All subsets share one evaluation stream (same latents and encoder noise), so
    score differences between subsets come from the masking alone.
    """
    if model.n > MAX_ENCODERS:
        raise BoundsError(f"at most {MAX_ENCODERS} encoders, got {model.n}")
    entries = {}
    for subset in subset_enumerate(model.n):
        for task, acc in evaluate(model, world, subset, n_samples, seed).items():
            entries[(subset, task)] = 100.0 * acc
    encoders = make_encoders([e.name for e in model.encoders])
    return ScoreTable(model_name, encoders, entries, "per-benchmark", tuple(t.name for t in world.tasks))


def full_report(
    table: ScoreTable,
    scheme: CategoryScheme | None = None,
    rule: str = DEFAULT_CUR_RULE,
    epsilon: float = 0.0,
    relative: bool = False,
) -> FullReport:
    """Every metric for one table, plus the CUR tables under the other aggregation rules.

    Missing subsets do not abort the report: affected cells are left empty and
    listed in ``coverage`` and the CUR notes.
    """
    agg = aggregate_scores(table, scheme)
    coverage = dict(table.coverage())
    coverage["missing_masked"] = [s.complement().label(table.encoder_names, sep=";") for s in table.missing_subsets()]
    report = cur_report(agg, rule)
    alternatives = {r: cur_report(agg, r) for r in CUR_RULES if r != rule}
    full = [s for s in agg.subsets(OVERALL) if len(s) == agg.n]
    redundancy = redundancy_check(agg, OVERALL, epsilon, relative) if full and len(agg.subsets(OVERALL)) > 1 else None
    return FullReport(
        aggregates=agg,
        cur=report,
        degradation=degradation_summary(agg),
        extremes=all_conditional_extremes(agg),
        redundancy=redundancy,
        coverage=coverage,
        alternative_cur=alternatives,
    )
