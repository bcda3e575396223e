"""Load, validate, split, and summarize publication corpora.

A corpus file is line-delimited JSON with a one-line header that carries
the schema version, e.g.::

    {"format": "sciatlas-corpus", "version": 1}
    {"id": "p1", "title": "...", "abstract": "...", "venue": "Nature", "year": 2021}

Records that fail validation are quarantined into a load report rather
than dropped silently; duplicate ids abort the load.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterator, Mapping

from ._util import atomic_write_text

if TYPE_CHECKING:  # pragma: no cover - import only for annotations
    from .extraction import ExtractionSet

CORPUS_FORMAT = "sciatlas-corpus"
CORPUS_VERSION = 1
RECORD_FIELDS = ("id", "title", "abstract", "venue", "year")
COMMUNITIES = ("science", "ai")


class CorpusError(Exception):
    """Unrecoverable corpus problem (unreadable file, bad header, duplicate id)."""


@dataclass(frozen=True)
class Publication:
    """One corpus record; `community` is derived from the venue map."""

    id: str
    title: str
    abstract: str
    venue: str
    year: int
    community: str

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "abstract": self.abstract,
            "venue": self.venue,
            "year": self.year,
        }


@dataclass(frozen=True)
class RejectedRecord:
    line_no: int
    reason: str
    record_id: str | None = None


@dataclass
class LoadReport:
    path: str
    n_loaded: int = 0
    rejected: list[RejectedRecord] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [f"# load report for {self.path}: {self.n_loaded} loaded, "
                 f"{len(self.rejected)} rejected"]
        for rec in self.rejected:
            ident = rec.record_id if rec.record_id is not None else "?"
            lines.append(f"line {rec.line_no}\tid={ident}\t{rec.reason}")
        return "\n".join(lines) + "\n"


class Corpus:
    """Immutable, id-indexed collection of publications."""

    def __init__(self, records: list[Publication] | tuple[Publication, ...]):
        self._records = tuple(records)
        self._by_id = {}
        for rec in self._records:
            if rec.id in self._by_id:
                raise CorpusError(f"duplicate publication id: {rec.id!r}")
            self._by_id[rec.id] = rec

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[Publication]:
        return iter(self._records)

    def __contains__(self, pub_id: str) -> bool:
        return pub_id in self._by_id

    def __getitem__(self, pub_id: str) -> Publication:
        return self._by_id[pub_id]

    def get(self, pub_id: str) -> Publication | None:
        return self._by_id.get(pub_id)

    def ids(self) -> list[str]:
        return [rec.id for rec in self._records]

    def __eq__(self, other) -> bool:
        return isinstance(other, Corpus) and self._records == other._records


@dataclass(frozen=True)
class CorpusSplit:
    """Disjoint train/test id sets determined solely by publication year."""

    train: frozenset
    test: frozenset


def load_venue_map(path: str | Path) -> dict[str, str]:
    """Read a `venue -> community` JSON mapping and validate communities."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CorpusError(f"cannot read venue map {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CorpusError(f"venue map {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise CorpusError(f"venue map {path} must be a JSON object")
    for venue, community in raw.items():
        if community not in COMMUNITIES:
            raise CorpusError(
                f"venue map {path}: venue {venue!r} has unknown community "
                f"{community!r} (expected one of {COMMUNITIES})"
            )
    return dict(raw)


def _validate_record(raw: dict, venue_map: Mapping[str, str]) -> tuple[Publication | None, str | None]:
    if not isinstance(raw, dict):
        return None, "record is not an object"
    for key in RECORD_FIELDS:
        if key not in raw:
            return None, f"missing field {key!r}"
    for key in ("id", "title", "abstract", "venue"):
        if not isinstance(raw[key], str):
            return None, f"field {key!r} is not a string"
    if not raw["id"]:
        return None, "empty id"
    if not raw["title"].strip():
        return None, "empty title"
    if not raw["abstract"].strip():
        return None, "empty abstract"
    year = raw["year"]
    if isinstance(year, bool) or not isinstance(year, int):
        return None, "field 'year' is not an integer"
    if not 1900 <= year <= 2100:
        return None, f"year {year} outside [1900, 2100]"
    venue = raw["venue"].strip()
    if venue not in venue_map:
        return None, f"venue {venue!r} not in venue map"
    pub = Publication(
        id=raw["id"],
        title=raw["title"],
        abstract=raw["abstract"],
        venue=venue,
        year=year,
        community=venue_map[venue],
    )
    return pub, None


def load_corpus(path: str | Path, venue_map: Mapping[str, str]) -> tuple[Corpus, LoadReport]:
    """Load all valid records; invalid ones land in the report.

    Duplicate ids are fatal (they would silently shadow each other
    downstream); every other problem quarantines just that line.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc}") from exc

    lines = text.splitlines()
    if not lines:
        raise CorpusError(f"corpus {path} is empty (missing header line)")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorpusError(f"corpus {path}: header line is not valid JSON: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != CORPUS_FORMAT:
        raise CorpusError(f"corpus {path}: first line is not a {CORPUS_FORMAT} header")
    if header.get("version") != CORPUS_VERSION:
        raise CorpusError(
            f"corpus {path}: unsupported schema version {header.get('version')!r}"
        )

    report = LoadReport(path=str(path))
    records: list[Publication] = []
    seen: set[str] = set()
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError:
            report.rejected.append(RejectedRecord(line_no, "malformed JSON"))
            continue
        pub, reason = _validate_record(raw, venue_map)
        if pub is None:
            rec_id = raw.get("id") if isinstance(raw, dict) else None
            report.rejected.append(RejectedRecord(line_no, reason, rec_id))
            continue
        if pub.id in seen:
            raise CorpusError(f"duplicate publication id {pub.id!r} at line {line_no}")
        seen.add(pub.id)
        records.append(pub)
    report.n_loaded = len(records)
    return Corpus(records), report


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write header + one JSON record per line (inverse of load_corpus)."""
    lines = [json.dumps({"format": CORPUS_FORMAT, "version": CORPUS_VERSION})]
    lines.extend(
        json.dumps(rec.to_record(), ensure_ascii=False, sort_keys=True) for rec in corpus
    )
    atomic_write_text(path, "\n".join(lines) + "\n")


def split_by_year(corpus: Corpus, last_train_year: int) -> CorpusSplit:
    """Partition ids: year <= last_train_year goes to train, the rest to test."""
    if len(corpus) == 0:
        raise CorpusError("cannot split an empty corpus")
    train = frozenset(rec.id for rec in corpus if rec.year <= last_train_year)
    test = frozenset(rec.id for rec in corpus if rec.year > last_train_year)
    return CorpusSplit(train=train, test=test)


@dataclass
class StatsReport:
    """Corpus-level totals: publications, extractions per aspect, AI4Science."""

    n_publications: int
    n_problem_extractions: int
    n_method_extractions: int
    n_ai4science: int
    per_venue: dict
    per_community: dict

    def to_text(self) -> str:
        lines = [
            f"publications\t{self.n_publications}",
            f"problem_extractions\t{self.n_problem_extractions}",
            f"method_extractions\t{self.n_method_extractions}",
            f"ai4science\t{self.n_ai4science}",
        ]
        for venue in sorted(self.per_venue):
            lines.append(f"venue:{venue}\t{self.per_venue[venue]}")
        for community in sorted(self.per_community):
            lines.append(f"community:{community}\t{self.per_community[community]}")
        return "\n".join(lines) + "\n"


def corpus_stats(corpus: Corpus, extractions: "ExtractionSet") -> StatsReport:
    """Totals over the corpus; requires an extraction for every record."""
    missing = [rec.id for rec in corpus if rec.id not in extractions]
    if missing:
        shown = ", ".join(missing[:10])
        more = "" if len(missing) <= 10 else f" (+{len(missing) - 10} more)"
        raise CorpusError(f"extractions missing for ids: {shown}{more}")
    n_problem = 0
    n_method = 0
    n_ai4sci = 0
    per_venue: Counter = Counter()
    per_community: Counter = Counter()
    for rec in corpus:
        ext = extractions[rec.id]
        per_venue[rec.venue] += 1
        per_community[rec.community] += 1
        if ext.has_problem:
            n_problem += 1
        if ext.has_method:
            n_method += 1
        if ext.ai4science:
            n_ai4sci += 1
    return StatsReport(
        n_publications=len(corpus),
        n_problem_extractions=n_problem,
        n_method_extractions=n_method,
        n_ai4science=n_ai4sci,
        per_venue=dict(per_venue),
        per_community=dict(per_community),
    )
