"""Record ingestion: parsing, stopwords, bigrams and query-id remapping.

Tokens are opaque symbols. The search logs ship pre-hashed token ids, so no
lowercasing, stemming or decoding is applied anywhere in the package.
"""

from __future__ import annotations

import io
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import IO, Iterable, Sequence

# str.split() treats \x1f as whitespace, so it can never appear inside a token.
BIGRAM_SEP = "\x1f"

TRAIN_COLUMNS = ("qid", "query", "title", "content", "click", "rank_position", "freq_bucket")
ANNOTATION_COLUMNS = ("qid", "query", "title", "content", "relevance", "freq_bucket")
SCHEMAS = {"train": TRAIN_COLUMNS, "annotation": ANNOTATION_COLUMNS}


class ParseError(ValueError):
    """A record line could not be parsed."""

    def __init__(self, message: str, line_no: int | None = None, field: str | None = None):
        self.line_no = line_no
        self.field = field
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class QueryDocRecord:
    qid: str
    query: tuple[str, ...]
    title: tuple[str, ...]
    content: tuple[str, ...]
    click: int | None = None
    relevance: int | None = None
    freq_bucket: int | None = None
    rank_position: int | None = None

    @property
    def text(self) -> tuple[str, ...]:
        """Title followed by content, positions running through the boundary."""
        return self.title + self.content

    @property
    def label(self) -> int | None:
        return self.relevance if self.relevance is not None else self.click


@dataclass(frozen=True)
class StopwordSet:
    terms: frozenset[str]
    size: int = 50

    def __contains__(self, token: str) -> bool:
        return token in self.terms

    def __len__(self) -> int:
        return len(self.terms)

    @classmethod
    def empty(cls) -> StopwordSet:
        return cls(frozenset(), 0)


@dataclass(frozen=True)
class QidRemap:
    mapping: dict[tuple[str, tuple[str, ...]], int]

    def __len__(self) -> int:
        return len(self.mapping)

    def lookup(self, qid: str, query: Sequence[str]) -> int:
        return self.mapping[(qid, tuple(query))]


def tokenize(field: str) -> tuple[str, ...]:
    return tuple(field.split())


def _parse_int(value: str, name: str, line_no: int, allowed: range | None = None) -> int | None:
    if value == "":
        return None
    try:
        parsed = int(value)
    except ValueError:
        raise ParseError(f"invalid {name} value {value!r}", line_no, name) from None
    if allowed is not None and parsed not in allowed:
        raise ParseError(f"invalid {name} value {value!r}", line_no, name)
    return parsed


_FIELD_RANGES = {
    "click": range(0, 2),
    "relevance": range(0, 5),
    "freq_bucket": range(0, 1 << 62),
    "rank_position": range(1, 1 << 62),
}


def parse_line(line: str, schema: str, line_no: int = 1) -> QueryDocRecord | None:
    """Parse one tab-separated line; returns None for blank lines."""
    columns = SCHEMAS[schema]
    line = line.rstrip("\r\n")
    if not line.strip():
        return None
    parts = line.split("\t")
    if len(parts) != len(columns):
        raise ParseError(f"expected {len(columns)} columns for {schema} schema, got {len(parts)}", line_no)
    raw = dict(zip(columns, parts))
    qid = raw["qid"].strip()
    if not qid:
        raise ParseError("empty qid", line_no, "qid")
    query = tokenize(raw["query"])
    if not query:
        raise ParseError("empty query", line_no, "query")
    numeric = {
        name: _parse_int(raw[name].strip(), name, line_no, _FIELD_RANGES[name])
        for name in columns[4:]
    }
    return QueryDocRecord(
        qid=qid,
        query=query,
        title=tokenize(raw["title"]),
        content=tokenize(raw["content"]),
        **numeric,
    )


def parse_records(source: IO[str] | IO[bytes] | Iterable[str | bytes], schema: str = "train") -> list[QueryDocRecord]:
    """Parse a stream of tab-separated record lines.

    `schema` is ``"train"`` (click-labelled log records) or ``"annotation"``
    (graded relevance). Blank lines are skipped; empty fields become None.
    """
    if schema not in SCHEMAS:
        raise ValueError(f"unknown schema {schema!r}; expected one of {sorted(SCHEMAS)}")
    records = []
    for line_no, line in enumerate(source, start=1):
        if isinstance(line, bytes):
            try:
                line = line.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ParseError(f"invalid UTF-8: {exc}", line_no) from None
        record = parse_line(line, schema, line_no)
        if record is not None:
            records.append(record)
    return records


def read_records(path: str | Path, schema: str = "train") -> list[QueryDocRecord]:
    with open(path, "rb") as fh:
        return parse_records(fh, schema)


def format_record(record: QueryDocRecord, schema: str = "train") -> str:
    def opt(value: int | None) -> str:
        return "" if value is None else str(value)

    fields = {
        "qid": record.qid,
        "query": " ".join(record.query),
        "title": " ".join(record.title),
        "content": " ".join(record.content),
        "click": opt(record.click),
        "relevance": opt(record.relevance),
        "freq_bucket": opt(record.freq_bucket),
        "rank_position": opt(record.rank_position),
    }
    return "\t".join(fields[c] for c in SCHEMAS[schema])


def write_records(records: Iterable[QueryDocRecord], sink: IO[str], schema: str = "train") -> None:
    for record in records:
        sink.write(format_record(record, schema) + "\n")


def derive_stopwords(records: Iterable[QueryDocRecord], k: int = 50) -> StopwordSet:
    """Top-`k` tokens of title+content by collection frequency.

    Ties are broken by the lexicographic order of the token surface form, so
    the result does not depend on record order.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    counts: Counter[str] = Counter()
    for record in records:
        counts.update(record.title)
        counts.update(record.content)
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return StopwordSet(frozenset(token for token, _ in ranked[:k]), k)


def save_stopwords(stops: StopwordSet, sink: IO[str]) -> None:
    for token in sorted(stops.terms):
        sink.write(token + "\n")


def load_stopwords(source: IO[str] | Iterable[str]) -> StopwordSet:
    terms = frozenset(line.strip() for line in source if line.strip())
    return StopwordSet(terms, len(terms))


def read_stopwords(path: str | Path) -> StopwordSet:
    with open(path, encoding="utf-8") as fh:
        return load_stopwords(fh)


def filter_stopwords(tokens: Sequence[str], stops: StopwordSet | frozenset[str] | set[str]) -> tuple[str, ...]:
    terms = stops.terms if isinstance(stops, StopwordSet) else stops
    return tuple(t for t in tokens if t not in terms)


def bigrams(tokens: Sequence[str]) -> tuple[str, ...]:
    return tuple(a + BIGRAM_SEP + b for a, b in zip(tokens, tokens[1:]))


def remap_qids(records: Sequence[QueryDocRecord]) -> tuple[list[QueryDocRecord], QidRemap]:
    """Give every distinct (qid, query text) pair its own dense integer id.

    Ids are assigned in order of first appearance starting at 0 and are
    written back into the records as decimal strings.
    """
    mapping: dict[tuple[str, tuple[str, ...]], int] = {}
    out = []
    for record in records:
        key = (record.qid, record.query)
        new_id = mapping.setdefault(key, len(mapping))
        out.append(replace(record, qid=str(new_id)))
    return out, QidRemap(mapping)


def doc_indices(records: Sequence[QueryDocRecord]) -> list[int]:
    """0-based position of each record within its qid group, in input order."""
    seen: Counter[str] = Counter()
    out = []
    for record in records:
        out.append(seen[record.qid])
        seen[record.qid] += 1
    return out


def records_from_text(text: str, schema: str = "train") -> list[QueryDocRecord]:
    return parse_records(io.StringIO(text), schema)
