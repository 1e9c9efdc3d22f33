"""Score-table and category-scheme files.

Both formats are comma-separated text with a header row, preceded by the
version line ``# redundancy-lab v1``.  Further ``# key: value`` comment lines
directly after the version line are directives (``encoders``, ``granularity``).

Score table columns: ``model, masked_encoders, benchmark, score``.  Masked
encoders are semicolon-joined names, or ``-`` when nothing is masked.

Category scheme columns: ``benchmark, category, divisor``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .core import (
    CATEGORIES,
    EncoderSubset,
    PreconditionError,
    RedundancyLabError,
    ScoreTable,
    canonical_category,
    make_encoders,
)

FORMAT_TAG = "# redundancy-lab v1"
SCORE_HEADER = ("model", "masked_encoders", "benchmark", "score")
SCHEME_HEADER = ("benchmark", "category", "divisor")
NONE_MASKED = "-"

EAGLE_ENCODERS = ("CLIP", "ConvNext", "SAM", "EVA", "Pix2Struct")
CAMBRIAN_ENCODERS = ("CLIP", "ConvNext", "DINO", "SigLIP")

# SHA-256 of format_score_table() for the bundled tables; guards against edits.
FIXTURE_DIGESTS = {
    "eagle_x5_7b.csv": "4d3c70f6762b075df7c7b63493188106bc053dc87c14d9a89bd61acc94503957",
    "cambrian1_8b.csv": "83f0884a68a9aac97ab2397d0802a02f517fc352cc29b99678bd0707a78a4504",
}


class IngestError(RedundancyLabError):
    """Malformed or inconsistent input file."""


class UnknownEncoderError(IngestError):
    pass


class DuplicateKeyError(IngestError):
    pass


@dataclass(frozen=True)
class RawScoreRecord:
    model: str
    masked_encoders: tuple[str, ...]
    benchmark_or_category: str
    score: float


@dataclass(frozen=True)
class CategoryScheme:
    mapping: Mapping[str, str]
    divisor: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for bench, d in self.divisor.items():
            if not (math.isfinite(d) and d > 0):
                raise PreconditionError(f"divisor for {bench!r} must be positive, got {d}")
        divisor = {b: float(self.divisor.get(b, 1.0)) for b in self.mapping}
        divisor.update(self.divisor)
        object.__setattr__(self, "mapping", dict(self.mapping))
        object.__setattr__(self, "divisor", divisor)

    def category_of(self, benchmark: str) -> str:
        try:
            return self.mapping[benchmark]
        except KeyError:
            raise PreconditionError(f"benchmark {benchmark!r} has no category") from None

    def divisor_of(self, benchmark: str) -> float:
        return self.divisor.get(benchmark, 1.0)

    @property
    def categories(self) -> tuple[str, ...]:
        present = set(self.mapping.values())
        ordered = [c for c in CATEGORIES if c in present]
        return tuple(ordered + sorted(present - set(ordered)))


_DEFAULT_BENCHMARKS = {
    "General": ("GQA", "MMB", "MME", "SEED-I"),
    "Knowledge": ("AI2D", "MathVista", "SQA-I", "MMMU"),
    "OCR & Chart": ("DocVQA", "ChartQA", "OCRBench", "TextVQA"),
    "Vision-Centric": ("CV-Bench", "MMVP", "RealWorldQA"),
}


def default_category_scheme() -> CategoryScheme:
    """The 15-benchmark, four-category scheme; MME is divided by 20 and OCRBench by 10."""
    mapping = {b: cat for cat, benches in _DEFAULT_BENCHMARKS.items() for b in benches}
    return CategoryScheme(mapping, {"MME": 20.0, "OCRBench": 10.0})


def _read_text(path: str | Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise IngestError(f"file not found: {path}") from None
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from None


def _split_preamble(text: str, path: str | Path) -> tuple[dict[str, str], list[str]]:
    lines = text.splitlines()
    if not any(line.strip() for line in lines):
        raise IngestError(f"{path}: empty file")
    if lines[0].strip() != FORMAT_TAG:
        raise IngestError(f"{path}: first line must be {FORMAT_TAG!r}")
    directives: dict[str, str] = {}
    body = []
    for line in lines[1:]:
        stripped = line.strip()
        if stripped.startswith("#"):
            key, sep, value = stripped[1:].partition(":")
            if sep:
                directives[key.strip().lower()] = value.strip()
            continue
        if stripped:
            body.append(line)
    return directives, body


def _rows(body: list[str], header: Sequence[str], path: str | Path) -> list[tuple[int, list[str]]]:
    if not body:
        raise IngestError(f"{path}: missing header row")
    reader = csv.reader(body)
    got = [h.strip() for h in next(reader)]
    if tuple(got) != tuple(header):
        raise IngestError(f"{path}: header {got} != expected {list(header)}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != len(header):
            raise IngestError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
        rows.append((lineno, [c.strip() for c in row]))
    if not rows:
        raise IngestError(f"{path}: no data rows")
    return rows


def _parse_float(text: str, where: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise IngestError(f"{where}: cannot parse number {text!r}") from None
    if not math.isfinite(value):
        raise IngestError(f"{where}: non-finite value {text!r}")
    return value


def read_score_records(path: str | Path) -> tuple[dict[str, str], list[RawScoreRecord]]:
    directives, body = _split_preamble(_read_text(path), path)
    records = []
    for lineno, (model, masked, bench, score) in _rows(body, SCORE_HEADER, path):
        names = () if masked in ("", NONE_MASKED) else tuple(m.strip() for m in masked.split(";"))
        if not bench:
            raise IngestError(f"{path}: row {lineno} has an empty benchmark")
        records.append(RawScoreRecord(model, names, bench, _parse_float(score, f"{path}: row {lineno}")))
    return directives, records


def table_from_records(
    records: Iterable[RawScoreRecord],
    encoder_order: Sequence[str],
    granularity: str = "per-category",
) -> ScoreTable:
    encoders = make_encoders(list(encoder_order))
    index = {e.name: e.index for e in encoders}
    n = len(encoders)
    entries: dict[tuple[EncoderSubset, str], float] = {}
    models = []
    for rec in records:
        masked_bits = 0
        for name in rec.masked_encoders:
            if name not in index:
                raise UnknownEncoderError(f"unknown encoder {name!r}; declared {list(encoder_order)}")
            masked_bits |= 1 << index[name]
        active = EncoderSubset(masked_bits, n).complement()
        key = (active, rec.benchmark_or_category)
        if key in entries:
            raise DuplicateKeyError(f"duplicate entry for masked={list(rec.masked_encoders)}, {key[1]!r}")
        entries[key] = rec.score
        if rec.model not in models:
            models.append(rec.model)
    if len(models) > 1:
        raise IngestError(f"table mixes several models: {models}")
    if not entries:
        raise IngestError("no records")
    return ScoreTable(models[0], encoders, entries, granularity)


def load_score_table(
    path: str | Path,
    encoder_order: Sequence[str] | None = None,
    granularity: str | None = None,
) -> ScoreTable:
    """Read a score table; the masked-encoder column is complemented into ACTIVE subsets.

    ``encoder_order`` and ``granularity`` fall back to the file's directives.  Without
    either, encoders are taken in order of first appearance and granularity is
    inferred from whether every benchmark name is a category name.
    """
    directives, records = read_score_records(path)
    if encoder_order is None:
        if "encoders" in directives:
            encoder_order = [e.strip() for e in directives["encoders"].split(";") if e.strip()]
        else:
            encoder_order = []
            for rec in records:
                for name in rec.masked_encoders:
                    if name not in encoder_order:
                        encoder_order.append(name)
            if not encoder_order:
                raise IngestError(f"{path}: no encoder names (add a '# encoders: a;b' line)")
    if granularity is None:
        granularity = directives.get("granularity") or _infer_granularity(records)
    return table_from_records(records, encoder_order, granularity)


def _infer_granularity(records: Sequence[RawScoreRecord]) -> str:
    for rec in records:
        try:
            canonical_category(rec.benchmark_or_category)
        except PreconditionError:
            return "per-benchmark"
    return "per-category"


def format_score_table(table: ScoreTable) -> str:
    buf = io.StringIO()
    buf.write(FORMAT_TAG + "\n")
    buf.write(f"# encoders: {';'.join(table.encoder_names)}\n")
    buf.write(f"# granularity: {table.granularity}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCORE_HEADER)
    names = table.encoder_names
    order = sorted(table.subsets(), key=lambda s: (s.n_masked, -s.bits))
    for subset in order:
        masked = subset.complement().label(names, sep=";")
        for bench in table.benchmarks:
            if (subset, bench) in table.entries:
                writer.writerow([table.model_name, masked, bench, repr(table.entries[(subset, bench)])])
    return buf.getvalue()


def table_digest(table: ScoreTable) -> str:
    return hashlib.sha256(format_score_table(table).encode("utf-8")).hexdigest()


def write_score_table(table: ScoreTable, path: str | Path) -> None:
    Path(path).write_text(format_score_table(table), encoding="utf-8")


def load_category_scheme(path: str | Path) -> CategoryScheme:
    """Read a category scheme; benchmarks not listed keep divisor 1."""
    _, body = _split_preamble(_read_text(path), path)
    mapping: dict[str, str] = {}
    divisor: dict[str, float] = {}
    for lineno, (bench, category, div) in _rows(body, SCHEME_HEADER, path):
        where = f"{path}: row {lineno}"
        try:
            cat = canonical_category(category)
        except PreconditionError as exc:
            raise IngestError(f"{where}: {exc}") from None
        if bench in mapping and mapping[bench] != cat:
            raise IngestError(f"{where}: benchmark {bench!r} assigned to {mapping[bench]!r} and {cat!r}")
        value = _parse_float(div, where) if div else 1.0
        if value <= 0:
            raise IngestError(f"{where}: divisor must be positive, got {value}")
        mapping[bench] = cat
        divisor[bench] = value
    return CategoryScheme(mapping, divisor)


def format_category_scheme(scheme: CategoryScheme) -> str:
    buf = io.StringIO()
    buf.write(FORMAT_TAG + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCHEME_HEADER)
    for bench, cat in scheme.mapping.items():
        writer.writerow([bench, cat, repr(scheme.divisor_of(bench))])
    return buf.getvalue()


def write_category_scheme(scheme: CategoryScheme, path: str | Path) -> None:
    Path(path).write_text(format_category_scheme(scheme), encoding="utf-8")


def fixture_path(name: str) -> Path:
    """Path of a bundled data file (``eagle_x5_7b.csv``, ``cambrian1_8b.csv``, ...)."""
    return Path(str(resources.files("redundancy_lab") / "data" / name))


def load_eagle_fixture() -> ScoreTable:
    return load_score_table(fixture_path("eagle_x5_7b.csv"))


def load_cambrian_fixture() -> ScoreTable:
    return load_score_table(fixture_path("cambrian1_8b.csv"))


def read_report_csv(path: str | Path) -> tuple[list[str], list[dict[str, str]]]:
    """Read any CSV emitted by the report writer: tag line, header, equal-width rows."""
    _, body = _split_preamble(_read_text(path), path)
    if not body:
        raise IngestError(f"{path}: missing header row")
    reader = csv.reader(body)
    header = next(reader)
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != len(header):
            raise IngestError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
        rows.append(dict(zip(header, row)))
    return header, rows
