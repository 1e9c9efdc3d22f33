"""Domain types shared by the analytics engine and the simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

MAX_ENCODERS = 16

CATEGORIES = ("General", "Knowledge", "OCR & Chart", "Vision-Centric")


class RedundancyLabError(Exception):
    """Base class for all errors raised by this package."""


class BoundsError(RedundancyLabError, ValueError):
    pass


class PreconditionError(RedundancyLabError, ValueError):
    pass


class CoverageError(RedundancyLabError):
    """Raised when a table does not contain the subsets a computation needs."""


class NumericalError(RedundancyLabError, ArithmeticError):
    pass


def canonical_category(name: str) -> str:
    """Map loose spellings ("OCR&Chart", "chart & ocr", ...) onto a canonical category name."""
    key = "".join(ch for ch in name.lower() if ch.isalnum())
    for cat in CATEGORIES:
        if key == "".join(ch for ch in cat.lower() if ch.isalnum()):
            return cat
    if key in ("chartocr", "ocr", "ocrchart"):
        return "OCR & Chart"
    if key in ("visioncentric", "vision"):
        return "Vision-Centric"
    raise PreconditionError(f"unknown category {name!r}; expected one of {CATEGORIES}")


@dataclass(frozen=True)
class EncoderId:
    index: int
    name: str


def make_encoders(names: Sequence[str]) -> tuple[EncoderId, ...]:
    if len(set(names)) != len(names):
        raise PreconditionError(f"duplicate encoder names in {list(names)}")
    if not 1 <= len(names) <= MAX_ENCODERS:
        raise BoundsError(f"encoder count {len(names)} outside [1, {MAX_ENCODERS}]")
    return tuple(EncoderId(i, name) for i, name in enumerate(names))


@dataclass(frozen=True, order=True)
class EncoderSubset:
    """Set of ACTIVE encoders, stored as a bitmask (bit i set means encoder i is active)."""

    bits: int
    n: int

    def __post_init__(self) -> None:
        if not 1 <= self.n <= MAX_ENCODERS:
            raise BoundsError(f"n={self.n} outside [1, {MAX_ENCODERS}]")
        if not 0 <= self.bits < (1 << self.n):
            raise BoundsError(f"bits={self.bits} outside [0, 2^{self.n})")

    @classmethod
    def full(cls, n: int) -> EncoderSubset:
        return cls((1 << n) - 1, n)

    @classmethod
    def empty(cls, n: int) -> EncoderSubset:
        return cls(0, n)

    @classmethod
    def from_indices(cls, indices: Iterable[int], n: int) -> EncoderSubset:
        bits = 0
        for i in indices:
            if not 0 <= i < n:
                raise BoundsError(f"encoder index {i} outside [0, {n})")
            bits |= 1 << i
        return cls(bits, n)

    def __len__(self) -> int:
        return self.bits.bit_count()

    def __contains__(self, i: object) -> bool:
        if isinstance(i, EncoderId):
            i = i.index
        return isinstance(i, int) and 0 <= i < self.n and bool(self.bits >> i & 1)

    def __iter__(self) -> Iterator[int]:
        return (i for i in range(self.n) if self.bits >> i & 1)

    @property
    def size(self) -> int:
        return len(self)

    @property
    def n_masked(self) -> int:
        return self.n - len(self)

    def complement(self) -> EncoderSubset:
        return EncoderSubset(~self.bits & ((1 << self.n) - 1), self.n)

    def with_(self, i: int | EncoderId) -> EncoderSubset:
        idx = i.index if isinstance(i, EncoderId) else i
        if not 0 <= idx < self.n:
            raise BoundsError(f"encoder index {idx} outside [0, {self.n})")
        return EncoderSubset(self.bits | (1 << idx), self.n)

    def without(self, i: int | EncoderId) -> EncoderSubset:
        return subset_without(self, i)

    def label(self, names: Sequence[str], sep: str = "+") -> str:
        return sep.join(names[i] for i in self) or "-"

    def __str__(self) -> str:
        # most significant bit first, as in the usual binary notation
        return format(self.bits, f"0{self.n}b")


def subset_enumerate(n: int) -> list[EncoderSubset]:
    """All 2^n subsets of n encoders in ascending bitmask order."""
    if not isinstance(n, int) or not 1 <= n <= MAX_ENCODERS:
        raise BoundsError(f"n={n!r} outside [1, {MAX_ENCODERS}]")
    return [EncoderSubset(bits, n) for bits in range(1 << n)]


def subset_without(s: EncoderSubset, i: int | EncoderId) -> EncoderSubset:
    idx = i.index if isinstance(i, EncoderId) else i
    if idx not in s:
        raise PreconditionError(f"encoder {idx} is not active in subset {s}")
    return EncoderSubset(s.bits & ~(1 << idx), s.n)


@dataclass(frozen=True)
class ScoreTable:
    """Raw scores keyed by (active subset, benchmark or category name).

    ``granularity`` is ``"per-benchmark"`` or ``"per-category"``.
    """

    model_name: str
    encoders: tuple[EncoderId, ...]
    entries: Mapping[tuple[EncoderSubset, str], float]
    granularity: str = "per-category"
    benchmarks: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.granularity not in ("per-benchmark", "per-category"):
            raise PreconditionError(f"unknown granularity {self.granularity!r}")
        n = self.n
        seen: list[str] = list(self.benchmarks)
        for (subset, bench), score in self.entries.items():
            if subset.n != n:
                raise PreconditionError(f"subset {subset} uses n={subset.n}, table has n={n}")
            if not math.isfinite(score):
                raise PreconditionError(f"non-finite score for ({subset}, {bench})")
            if bench not in seen:
                seen.append(bench)
        object.__setattr__(self, "benchmarks", tuple(seen))
        object.__setattr__(self, "entries", dict(self.entries))

    @property
    def n(self) -> int:
        return len(self.encoders)

    @property
    def encoder_names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.encoders)

    def subsets(self) -> list[EncoderSubset]:
        present = {s for s, _ in self.entries}
        return sorted(present)

    def score(self, subset: EncoderSubset, bench: str) -> float:
        try:
            return self.entries[(subset, bench)]
        except KeyError:
            raise CoverageError(f"no score for subset {subset} on {bench!r}") from None

    def missing_subsets(self) -> list[EncoderSubset]:
        present = {s for s, _ in self.entries}
        return [s for s in subset_enumerate(self.n) if s not in present]

    @property
    def is_complete(self) -> bool:
        return not self.missing_subsets() and all(
            (s, b) in self.entries for s in subset_enumerate(self.n) for b in self.benchmarks
        )

    def coverage(self) -> dict[str, object]:
        missing = self.missing_subsets()
        return {
            "expected_subsets": 1 << self.n,
            "present_subsets": (1 << self.n) - len(missing),
            "missing_subsets": [str(s) for s in missing],
            "complete": self.is_complete,
        }

    def scaled(self, factor: float) -> ScoreTable:
        return ScoreTable(
            self.model_name,
            self.encoders,
            {k: v * factor for k, v in self.entries.items()},
            self.granularity,
            self.benchmarks,
        )
