"""Collection statistics over the field views used by the lexical scorers."""

from __future__ import annotations

import enum
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Sequence

from .corpus import QueryDocRecord, StopwordSet, bigrams, filter_stopwords

STATS_MAGIC = "ltrkit-collection-stats"
STATS_VERSION = 1


class FieldView(str, enum.Enum):
    CONCAT = "concat"
    TITLE = "title"
    CONTENT = "content"
    CONCAT_BIGRAM = "concat_bigram"
    CONCAT_NONSTOP = "concat_nonstop"


def view_tokens(record: QueryDocRecord, view: FieldView, stops: StopwordSet) -> tuple[str, ...]:
    """Document token sequence a record contributes to `view`."""
    if view is FieldView.CONCAT:
        return record.text
    if view is FieldView.TITLE:
        return record.title
    if view is FieldView.CONTENT:
        return record.content
    if view is FieldView.CONCAT_BIGRAM:
        return bigrams(record.text)
    if view is FieldView.CONCAT_NONSTOP:
        return filter_stopwords(record.text, stops)
    raise ValueError(f"unknown view {view!r}")


def query_tokens(query: Sequence[str], view: FieldView, stops: StopwordSet) -> tuple[str, ...]:
    """Query transformed the same way the view transforms documents."""
    if view is FieldView.CONCAT_BIGRAM:
        return bigrams(query)
    if view is FieldView.CONCAT_NONSTOP:
        return filter_stopwords(query, stops)
    return tuple(query)


class StatsFormatError(ValueError):
    """Raised when a serialized statistics payload is unreadable."""

    def __init__(self, section: str, message: str):
        self.section = section
        super().__init__(f"stats file, section {section!r}: {message}")


@dataclass
class ViewStats:
    df: dict[str, int] = field(default_factory=dict)
    cf: dict[str, int] = field(default_factory=dict)
    total_tokens: int = 0


@dataclass(frozen=True)
class CollectionStats:
    n_docs: int
    views: dict[FieldView, ViewStats]
    stopwords: StopwordSet

    def df(self, term: str, view: FieldView = FieldView.CONCAT) -> int:
        return self.views[view].df.get(term, 0)

    def cf(self, term: str, view: FieldView = FieldView.CONCAT) -> int:
        return self.views[view].cf.get(term, 0)

    def total_tokens(self, view: FieldView = FieldView.CONCAT) -> int:
        return self.views[view].total_tokens

    def avgdl(self, view: FieldView = FieldView.CONCAT) -> float:
        return self.views[view].total_tokens / self.n_docs if self.n_docs else 0.0


def _count_view(records: Iterable[QueryDocRecord], view: FieldView, stops: StopwordSet) -> ViewStats:
    df: Counter[str] = Counter()
    cf: Counter[str] = Counter()
    total = 0
    for record in records:
        tokens = view_tokens(record, view, stops)
        total += len(tokens)
        cf.update(tokens)
        df.update(set(tokens))
    return ViewStats(dict(df), dict(cf), total)


def build_stats(records: Sequence[QueryDocRecord], stops: StopwordSet | None = None) -> CollectionStats:
    """Count df, cf and token totals per view. Each record is one document."""
    if not records:
        raise ValueError("cannot build statistics over an empty corpus")
    stops = stops if stops is not None else StopwordSet.empty()
    views = {view: _count_view(records, view, stops) for view in FieldView}
    return CollectionStats(len(records), views, stops)


def merge_stats(a: CollectionStats, b: CollectionStats) -> CollectionStats:
    """Combine statistics of two disjoint document sets built with the same stopwords."""
    if a.stopwords.terms != b.stopwords.terms:
        raise ValueError("cannot merge statistics built with different stopword sets")
    views = {}
    for view in FieldView:
        va, vb = a.views[view], b.views[view]
        df = Counter(va.df)
        df.update(vb.df)
        cf = Counter(va.cf)
        cf.update(vb.cf)
        views[view] = ViewStats(dict(df), dict(cf), va.total_tokens + vb.total_tokens)
    return CollectionStats(a.n_docs + b.n_docs, views, a.stopwords)


def _stats_to_payload(stats: CollectionStats) -> dict:
    return {
        "magic": STATS_MAGIC,
        "version": STATS_VERSION,
        "n_docs": stats.n_docs,
        "stopwords": {"size": stats.stopwords.size, "terms": sorted(stats.stopwords.terms)},
        "views": {
            view.value: {
                "total_tokens": vs.total_tokens,
                # [term, df, cf] triples sorted by term keep the file stable.
                "terms": [[t, vs.df[t], vs.cf[t]] for t in sorted(vs.cf)],
            }
            for view, vs in stats.views.items()
        },
    }


def save_stats(stats: CollectionStats, sink: IO[str]) -> None:
    json.dump(_stats_to_payload(stats), sink, ensure_ascii=True, separators=(",", ":"))
    sink.write("\n")


def dumps_stats(stats: CollectionStats) -> str:
    return json.dumps(_stats_to_payload(stats), ensure_ascii=True, separators=(",", ":")) + "\n"


def _require_int(value, section: str, name: str, minimum: int = 0) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise StatsFormatError(section, f"{name} must be an integer >= {minimum}")
    return value


def loads_stats(text: str) -> CollectionStats:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise StatsFormatError("header", f"not a complete stats document ({exc})") from None
    if not isinstance(payload, dict) or payload.get("magic") != STATS_MAGIC:
        raise StatsFormatError("header", "missing magic header")
    if payload.get("version") != STATS_VERSION:
        raise StatsFormatError("header", f"unsupported version {payload.get('version')!r}")
    n_docs = _require_int(payload.get("n_docs"), "n_docs", "n_docs")

    sw = payload.get("stopwords")
    if not isinstance(sw, dict) or not isinstance(sw.get("terms"), list):
        raise StatsFormatError("stopwords", "malformed stopword section")
    stops = StopwordSet(frozenset(sw["terms"]), _require_int(sw.get("size"), "stopwords", "size"))

    raw_views = payload.get("views")
    if not isinstance(raw_views, dict):
        raise StatsFormatError("views", "missing views section")
    views = {}
    for view in FieldView:
        section = f"views.{view.value}"
        raw = raw_views.get(view.value)
        if not isinstance(raw, dict) or not isinstance(raw.get("terms"), list):
            raise StatsFormatError(section, "missing or malformed view")
        vs = ViewStats(total_tokens=_require_int(raw.get("total_tokens"), section, "total_tokens"))
        for entry in raw["terms"]:
            if not (isinstance(entry, list) and len(entry) == 3 and isinstance(entry[0], str)):
                raise StatsFormatError(section, f"malformed term entry {entry!r}")
            term, df, cf = entry
            df = _require_int(df, section, "df", 1)
            cf = _require_int(cf, section, "cf", df)
            if df > n_docs:
                raise StatsFormatError(section, f"df of {term!r} exceeds n_docs")
            vs.df[term] = df
            vs.cf[term] = cf
        views[view] = vs
    return CollectionStats(n_docs, views, stops)


def load_stats(source: IO[str]) -> CollectionStats:
    return loads_stats(source.read())


def read_stats(path: str | Path) -> CollectionStats:
    with open(path, encoding="utf-8") as fh:
        return load_stats(fh)
