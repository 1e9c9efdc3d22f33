import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from redundancy_lab import ablate, oracle
from redundancy_lab.core import (
    CoverageError,
    EncoderSubset,
    PreconditionError,
    ScoreTable,
    make_encoders,
    subset_enumerate,
)
from redundancy_lab.ingest import CategoryScheme
from redundancy_lab.metrics import (
    CUR_RULES,
    MEAN_OF_SCORES,
    OVERALL,
    PER_SUBSET_MEAN,
    SIZE_MEAN,
    UndefinedCurError,
    aggregate_scores,
    conditional_extremes,
    cur,
    cur_at_size,
    cur_report,
    degradation_summary,
    information_gap,
    redundancy_check,
)

masked_all_but = lambda n, *keep: EncoderSubset.from_indices(keep, n)  # noqa: E731


# -- aggregation ---------------------------------------------------------------

def test_eagle_overall_baseline(eagle_agg):
    overall = eagle_agg.score(EncoderSubset.full(5), OVERALL)
    assert overall == pytest.approx(64.925, abs=1e-12)
    assert round(overall + 1e-9, 2) == 64.93


def test_per_benchmark_normalization():
    enc = make_encoders(["a"])
    full = EncoderSubset.full(1)
    entries = {(full, "MME"): 1600.0, (full, "GQA"): 60.0, (full, "DocVQA"): 50.0}
    scheme = CategoryScheme({"MME": "General", "GQA": "General", "DocVQA": "OCR & Chart"}, {"MME": 20.0})
    agg = aggregate_scores(ScoreTable("m", enc, entries, "per-benchmark"), scheme)
    assert agg.score(full, "General") == 70.0  # (80 + 60) / 2
    assert agg.score(full, "OCR & Chart") == 50.0
    assert agg.score(full, OVERALL) == 60.0
    assert agg.categories == ("General", "OCR & Chart")


def test_single_benchmark_category():
    enc = make_encoders(["a"])
    full = EncoderSubset.full(1)
    table = ScoreTable("m", enc, {(full, "GQA"): 61.5}, "per-benchmark")
    agg = aggregate_scores(table, CategoryScheme({"GQA": "General"}))
    assert agg.score(full, "General") == 61.5


def test_aggregate_errors():
    enc = make_encoders(["a"])
    full = EncoderSubset.full(1)
    table = ScoreTable("m", enc, {(full, "GQA"): 61.5}, "per-benchmark")
    with pytest.raises(PreconditionError):
        aggregate_scores(table)
    with pytest.raises(PreconditionError):
        aggregate_scores(table, CategoryScheme({"MMB": "General"}))


def test_aggregate_leaves_input_unchanged(eagle):
    before = dict(eagle.entries)
    aggregate_scores(eagle)
    assert eagle.entries == before


# -- CUR / IG -------------------------------------------------------------------

def test_cur_examples():
    assert cur(70.77, 69.79) == pytest.approx(0.013848, abs=1e-6)
    assert cur(56.65, 65.80) == pytest.approx(-0.161518, abs=1e-6)
    for x in (0.5, 3.0, 99.0):
        assert cur(x, x) == 0.0


@pytest.mark.parametrize("full", [0.0, -1.0])
def test_cur_guard(full):
    with pytest.raises(UndefinedCurError):
        cur(full, 1.0)


def test_cur_at_size_full_examples(eagle_agg, cambrian_agg):
    assert cur_at_size(eagle_agg, "EVA", 5, "General") == pytest.approx(0.1008, abs=1e-4)
    assert cur_at_size(cambrian_agg, "ConvNext", 4, "OCR & Chart") == pytest.approx(0.7498, abs=1e-4)


def test_cur_at_full_size_equals_single_ablation(eagle_agg):
    full = EncoderSubset.full(5)
    for c in eagle_agg.categories:
        for i in range(5):
            want = cur(eagle_agg.score(full, c), eagle_agg.score(full.without(i), c))
            for rule in CUR_RULES:
                assert cur_at_size(eagle_agg, i, 5, c, rule) == want


def test_per_subset_mean_example(eagle_agg):
    # mean of the four cur(S, S - CLIP) over size-4 subsets containing CLIP
    assert cur_at_size(eagle_agg, "CLIP", 4, "General", PER_SUBSET_MEAN) == pytest.approx(0.0383, abs=5e-5)
    assert cur_at_size(eagle_agg, "CLIP", 4, "General", MEAN_OF_SCORES) == pytest.approx(0.0375, abs=1e-4)


def test_size_mean_by_hand(eagle_agg):
    c = "General"
    level = [eagle_agg.score(s, c) for s in subset_enumerate(5) if len(s) == 4]
    lacking = [eagle_agg.score(s, c) for s in subset_enumerate(5) if len(s) == 3 and 0 not in s]
    a, b = sum(level) / 5, sum(lacking) / 4
    assert cur_at_size(eagle_agg, 0, 4, c, SIZE_MEAN) == pytest.approx((a - b) / a, rel=1e-12)
    assert cur_at_size(eagle_agg, 0, 4, c, SIZE_MEAN) * 100 == pytest.approx(4.1, abs=0.02)


def test_cur_at_size_errors(eagle_agg):
    with pytest.raises(PreconditionError):
        cur_at_size(eagle_agg, "Foo", 5, "General")
    with pytest.raises(PreconditionError):
        cur_at_size(eagle_agg, 7, 5, "General")
    with pytest.raises(PreconditionError):
        cur_at_size(eagle_agg, 0, 6, "General")
    with pytest.raises(PreconditionError):
        cur_at_size(eagle_agg, 0, 5, "Audio")
    with pytest.raises(PreconditionError):
        cur_at_size(eagle_agg, 0, 4, "General", rule="median")


def test_information_gap_examples():
    assert information_gap([1.39, 1.94, 0.19, 10.08, 0.58]) == pytest.approx(9.89)
    assert information_gap([4.1, 6.5, 0.92, 13.53, 2.18]) == pytest.approx(12.61)
    assert information_gap([0.3]) == 0.0
    with pytest.raises(PreconditionError):
        information_gap([])


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=16))
def test_information_gap_nonnegative(values):
    gap = information_gap(values)
    assert gap >= 0
    assert (gap == 0) == (len(set(values)) == 1)


def test_cur_report_shape(eagle_agg):
    rep = cur_report(eagle_agg)
    assert len(rep.rows) == 4 * 4  # categories x sizes 5..2
    assert [r.size for r in rep.rows[:4]] == [5, 4, 3, 2]
    assert rep.value("OCR & Chart", 5, "ConvNext") == pytest.approx(0.3027, abs=1e-4)
    assert rep.row("General", 5).ig == pytest.approx(0.099053, abs=1e-6)


# -- degradation -----------------------------------------------------------------

def test_degradation_examples(eagle_agg, cambrian_agg):
    row = degradation_summary(eagle_agg).row("General", 1)
    assert row.mean == pytest.approx(68.77, abs=0.05)
    assert row.rel_mean * 100 == pytest.approx(-2.8, abs=0.05)
    row = degradation_summary(cambrian_agg).row(OVERALL, 1)
    assert (row.max, row.min) == (pytest.approx(65.275), pytest.approx(47.85))
    assert row.mean == pytest.approx(59.10, abs=0.005)
    assert row.count == row.expected == 4


def test_degradation_k0(eagle_agg):
    deg = degradation_summary(eagle_agg)
    for c in eagle_agg.columns:
        r = deg.row(c, 0)
        assert r.max == r.min == r.mean == r.baseline
        assert r.rel_mean == 0.0
    assert deg.complete


def test_degradation_mean_is_plain_mean(cambrian_agg):
    deg = degradation_summary(cambrian_agg)
    for c in cambrian_agg.columns:
        for k in range(5):
            vals = [cambrian_agg.score(s, c) for s in subset_enumerate(4) if len(s) == 4 - k]
            assert deg.row(c, k).mean == math.fsum(vals) / len(vals)


# -- conditional extremes ----------------------------------------------------------

def test_extremes_eagle_convnext_ocr(eagle_agg):
    e = conditional_extremes(eagle_agg, "ConvNext", "OCR & Chart")
    assert e.max_with == 66.60
    assert e.max_without == 46.44
    assert 1 not in e.argmax_without


def test_extremes_cambrian_siglip_vision(cambrian_agg):
    e = conditional_extremes(cambrian_agg, "SigLIP", "Vision-Centric")
    assert e.max_without == 65.80
    assert e.max_with == 63.24
    assert e.max_without > e.max_with


def test_extremes_single_encoder():
    enc = make_encoders(["a"])
    entries = {(s, "General"): 10.0 * (1 + s.bits) for s in subset_enumerate(1)}
    agg = aggregate_scores(ScoreTable("m", enc, entries))
    with pytest.raises(CoverageError):
        conditional_extremes(agg, 0, "General")


def test_extremes_tie_goes_to_first_subset():
    enc = make_encoders(["a", "b"])
    entries = {(s, "General"): 5.0 for s in subset_enumerate(2)}
    agg = aggregate_scores(ScoreTable("m", enc, entries))
    e = conditional_extremes(agg, 0, "General")
    assert e.argmax_with.bits == 0b01 and e.argmin_with.bits == 0b01
    assert e.argmax_without.bits == 0b10


# -- redundancy --------------------------------------------------------------------

def test_redundancy_cambrian(cambrian_agg):
    r = redundancy_check(cambrian_agg)
    assert r.raised
    assert len(r.witness) == 3 and 3 not in r.witness
    assert r.best_score == pytest.approx(65.275)
    assert r.baseline == pytest.approx(63.0175)


def test_redundancy_eagle_depends_on_tolerance(eagle_agg):
    assert not redundancy_check(eagle_agg).raised
    assert redundancy_check(eagle_agg, epsilon=0.24).raised
    assert redundancy_check(eagle_agg, epsilon=0.04, relative=True).raised
    with pytest.raises(PreconditionError):
        redundancy_check(eagle_agg, epsilon=-1)


# -- properties --------------------------------------------------------------------

def tables(max_n=4):
    def build(args):
        n, seed, cats = args
        return oracle.random_table(n, np.random.default_rng(seed), categories=cats)

    cats = st.sampled_from([("General",), ("General", "OCR & Chart"), ("General", "Knowledge", "OCR & Chart", "Vision-Centric")])
    return st.tuples(st.integers(1, max_n), st.integers(0, 2**32 - 1), cats).map(build)


def _numbers(rep):
    curs = [v for r in rep.cur.rows for v in r.curs]
    igs = [r.ig for r in rep.cur.rows]
    rels = [r.rel_mean for r in rep.degradation.rows]
    return curs, igs, rels


@settings(max_examples=40, deadline=None)
@given(tables(), st.integers(-20, 20), st.sampled_from(CUR_RULES))
def test_scale_invariance_power_of_two(table, exp, rule):
    a = ablate.full_report(table, rule=rule)
    b = ablate.full_report(table.scaled(2.0 ** exp), rule=rule)
    assert _numbers(a) == _numbers(b)


@settings(max_examples=40, deadline=None)
@given(tables(), st.floats(1e-3, 1e3), st.sampled_from(CUR_RULES))
def test_scale_invariance_any_factor(table, c, rule):
    a = ablate.full_report(table, rule=rule)
    b = ablate.full_report(table.scaled(c), rule=rule)
    for xs, ys in zip(_numbers(a), _numbers(b)):
        assert ys == pytest.approx(xs, rel=1e-9, abs=1e-12)


def permuted(table: ScoreTable, perm: list[int]) -> ScoreTable:
    """New table where old encoder i becomes encoder perm[i]."""
    n = table.n
    names = [""] * n
    for i, e in enumerate(table.encoder_names):
        names[perm[i]] = e
    entries = {}
    for (s, c), v in table.entries.items():
        entries[(EncoderSubset.from_indices([perm[i] for i in s], n), c)] = v
    return ScoreTable(table.model_name, make_encoders(names), entries, table.granularity, table.benchmarks)


@settings(max_examples=40, deadline=None)
@given(tables(), st.randoms(use_true_random=False), st.sampled_from(CUR_RULES))
def test_permutation_equivariance(table, rnd, rule):
    perm = list(range(table.n))
    rnd.shuffle(perm)
    a = ablate.full_report(table, rule=rule).cur
    b = ablate.full_report(permuted(table, perm), rule=rule).cur
    for ra, rb in zip(a.rows, b.rows):
        for i in range(table.n):
            assert rb.curs[perm[i]] == pytest.approx(ra.curs[i], rel=1e-12, abs=1e-15)
        assert rb.ig == pytest.approx(ra.ig, rel=1e-12, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(tables(), st.sampled_from(CUR_RULES))
def test_oracle_equivalence_exact(table, rule):
    assert oracle.compare(ablate.full_report(table, rule=rule), table) == []


def test_constant_table_all_zero_and_flag_raised():
    enc = make_encoders(["a", "b", "c"])
    entries = {(s, c): 42.0 for s in subset_enumerate(3) for c in ("General", "Knowledge")}
    rep = ablate.full_report(ScoreTable("m", enc, entries))
    assert all(v == 0 for r in rep.cur.rows for v in r.curs)
    assert all(r.ig == 0 for r in rep.cur.rows)
    assert rep.redundancy.raised


def test_missing_subsets_give_partial_report(eagle):
    drop = EncoderSubset.from_indices([0, 1, 2], 5)  # EVA and Pix2Struct masked
    entries = {k: v for k, v in eagle.entries.items() if k[0] != drop}
    table = ScoreTable(eagle.model_name, eagle.encoders, entries)
    rep = ablate.full_report(table)
    assert not rep.coverage["complete"]
    assert rep.coverage["missing_masked"] == ["EVA;Pix2Struct"]
    assert not rep.degradation.complete
    # size-mean pools that include the missing subset become gaps; n'=5 is intact
    assert all(v is not None for v in rep.cur.row("General", 5).curs)
    assert rep.cur.row("General", 3).curs == (None,) * 5
    assert None not in rep.cur.row("General", 4).curs[:3]
    assert rep.cur.row("General", 4).curs[3:] == (None, None)
    assert None not in rep.alternative_cur[PER_SUBSET_MEAN].row("General", 3).curs
    assert rep.cur.notes
    assert rep.degradation.row("General", 2).count == 9
