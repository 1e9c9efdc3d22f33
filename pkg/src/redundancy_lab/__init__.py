"""Encoder-masking analysis for models that fuse several vision encoders.

Score tables over all 2^n encoder subsets go in; conditional utilization rates,
information gaps, degradation summaries and a redundancy flag come out.  A small
numpy simulator provides models whose true encoder redundancy is known.
"""

from .ablate import full_report, run_ablation, world_category_scheme
from .core import (
    CATEGORIES,
    BoundsError,
    CoverageError,
    EncoderId,
    EncoderSubset,
    NumericalError,
    PreconditionError,
    RedundancyLabError,
    ScoreTable,
    subset_enumerate,
    subset_without,
)
from .ingest import (
    CategoryScheme,
    default_category_scheme,
    load_cambrian_fixture,
    load_category_scheme,
    load_eagle_fixture,
    load_score_table,
    write_score_table,
)
from .metrics import (
    OVERALL,
    aggregate_scores,
    conditional_extremes,
    cur,
    cur_at_size,
    cur_report,
    degradation_summary,
    information_gap,
    redundancy_check,
)

__version__ = "0.1.0"
