"""The 24 learning-to-rank features for a query-document pair.

Feature ids follow the conventional numbering 1..24 used on the command line
(``--features 2-13,15-20``). Slot 1 is filled by a pluggable click-trained
scorer; every other slot is a pure function of the record and the collection
statistics.
"""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

from .corpus import QueryDocRecord, StopwordSet, bigrams, filter_stopwords
from .stats import CollectionStats, FieldView

N_FEATURES = 24
MISSING = float("nan")


class FeatureId(enum.IntEnum):
    CROSS_ENCODER = 1
    BM25 = 2
    QUERY_LENGTH = 3
    TITLE_LENGTH = 4
    CONTENT_LENGTH = 5
    QUERY_FREQ = 6
    QL = 7
    PROX_1 = 8
    PROX_2 = 9
    PROX_3 = 10
    PROX_4 = 11
    PROX_1_NONSTOP = 12
    PROX_2_NONSTOP = 13
    PROX_3_NONSTOP = 14
    PROX_4_NONSTOP = 15
    TF_IDF = 16
    TF = 17
    IDF = 18
    BM25_TITLE = 19
    BM25_CONTENT = 20
    BM25_BIGRAM = 21
    QL_BIGRAM = 22
    BM25_NONSTOP = 23
    QL_NONSTOP = 24

    @property
    def label(self) -> str:
        return FEATURE_NAMES[self]


FEATURE_NAMES = {
    FeatureId.CROSS_ENCODER: "cross_encoder",
    FeatureId.BM25: "bm25",
    FeatureId.QUERY_LENGTH: "query_length",
    FeatureId.TITLE_LENGTH: "title_length",
    FeatureId.CONTENT_LENGTH: "content_length",
    FeatureId.QUERY_FREQ: "query_freq",
    FeatureId.QL: "ql",
    FeatureId.PROX_1: "prox-1",
    FeatureId.PROX_2: "prox-2",
    FeatureId.PROX_3: "prox-3",
    FeatureId.PROX_4: "prox-4",
    FeatureId.PROX_1_NONSTOP: "prox-1-nonstop",
    FeatureId.PROX_2_NONSTOP: "prox-2-nonstop",
    FeatureId.PROX_3_NONSTOP: "prox-3-nonstop",
    FeatureId.PROX_4_NONSTOP: "prox-4-nonstop",
    FeatureId.TF_IDF: "tf-idf",
    FeatureId.TF: "tf",
    FeatureId.IDF: "idf",
    FeatureId.BM25_TITLE: "bm25_title",
    FeatureId.BM25_CONTENT: "bm25_content",
    FeatureId.BM25_BIGRAM: "bm25-bigram",
    FeatureId.QL_BIGRAM: "ql-bigram",
    FeatureId.BM25_NONSTOP: "bm25-nonstop",
    FeatureId.QL_NONSTOP: "ql-nonstop",
}

ALL_FEATURES = frozenset(FeatureId)
LEXICAL_FEATURES = ALL_FEATURES - {FeatureId.CROSS_ENCODER}


class FeatureError(ValueError):
    def __init__(self, message: str, feature: FeatureId | None = None):
        self.feature = feature
        if feature is not None:
            message = f"feature {int(feature)} ({feature.label}): {message}"
        super().__init__(message)


def parse_feature_spec(spec: str) -> frozenset[FeatureId]:
    """Parse ``"2-13,15-20"`` style selections into a set of feature ids."""
    ids: set[FeatureId] = set()
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            start = int(lo)
            stop = int(hi) if sep else start
        except ValueError:
            raise ValueError(f"bad feature range {part!r}") from None
        if start > stop:
            raise ValueError(f"bad feature range {part!r}")
        for fid in range(start, stop + 1):
            if fid < 1 or fid > N_FEATURES:
                raise ValueError(f"feature id {fid} out of range 1..{N_FEATURES}")
            ids.add(FeatureId(fid))
    if not ids:
        raise ValueError("empty feature selection")
    return frozenset(ids)


def format_feature_spec(ids: Iterable[int]) -> str:
    """Canonical compact range form, the inverse of `parse_feature_spec`."""
    ordered = sorted(set(int(i) for i in ids))
    parts = []
    i = 0
    while i < len(ordered):
        j = i
        while j + 1 < len(ordered) and ordered[j + 1] == ordered[j] + 1:
            j += 1
        parts.append(str(ordered[i]) if i == j else f"{ordered[i]}-{ordered[j]}")
        i = j + 1
    return ",".join(parts)


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.6
    b: float = 0.87

    def __post_init__(self):
        if not self.k1 > 0:
            raise ValueError("k1 must be > 0")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must lie in [0, 1]")


# ---------------------------------------------------------------------------
# lexical scorers


def bm25(
    query: Sequence[str],
    doc: Sequence[str],
    stats: CollectionStats,
    view: FieldView = FieldView.CONCAT,
    params: Bm25Params = Bm25Params(),
) -> float:
    avgdl = stats.avgdl(view)
    if avgdl == 0:
        raise FeatureError(f"empty collection view {view.value!r}")
    n = stats.n_docs
    tf = Counter(doc)
    norm = params.k1 * (1.0 - params.b + params.b * len(doc) / avgdl)
    score = 0.0
    for term in dict.fromkeys(query):
        df = stats.df(term, view)
        f = tf.get(term, 0)
        if df == 0 or f == 0:
            continue
        idf = math.log((n - df + 0.5) / (df + 0.5) + 1.0)
        score += idf * f * (params.k1 + 1.0) / (f + norm)
    return score


def query_likelihood(
    query: Sequence[str],
    doc: Sequence[str],
    stats: CollectionStats,
    view: FieldView = FieldView.CONCAT,
    mu: float = 2000.0,
) -> float:
    """Dirichlet-smoothed log likelihood, summed over query term occurrences.

    Terms unseen in the collection use a background probability of
    1 / (2 * total_tokens) so the score stays finite.
    """
    if mu <= 0:
        raise ValueError("mu must be > 0")
    total = stats.total_tokens(view)
    if total == 0:
        raise FeatureError(f"empty collection view {view.value!r}")
    tf = Counter(doc)
    denom = len(doc) + mu
    floor = math.log(mu * (1.0 / (2 * total)) / denom)
    score = 0.0
    for term in query:
        cf = stats.cf(term, view)
        if cf == 0:
            score += floor
        else:
            score += math.log((tf.get(term, 0) + mu * cf / total) / denom)
    return score


def tf_score(query: Sequence[str], doc: Sequence[str]) -> float:
    counts = Counter(doc)
    return sum(math.log1p(counts.get(t, 0)) for t in dict.fromkeys(query))


def idf_score(query: Sequence[str], stats: CollectionStats) -> float:
    n = stats.n_docs
    total = 0.0
    for term in dict.fromkeys(query):
        df = stats.df(term, FieldView.CONCAT)
        total += math.log(n / df) if df > 0 else math.log(2 * n)
    return total


def tf_idf(query: Sequence[str], doc: Sequence[str], stats: CollectionStats) -> float:
    counts = Counter(doc)
    n = stats.n_docs
    total = 0.0
    for term in dict.fromkeys(query):
        df = stats.df(term, FieldView.CONCAT)
        if df > 0:
            total += math.log1p(counts.get(term, 0)) * math.log(n / df)
    return total


# ---------------------------------------------------------------------------
# proximity


def _positions(query: Sequence[str], doc: Sequence[str]) -> dict[str, list[int]]:
    """1-based positions of each distinct query term that occurs in `doc`."""
    wanted = set(query)
    pos: dict[str, list[int]] = {}
    for i, token in enumerate(doc, start=1):
        if token in wanted:
            pos.setdefault(token, []).append(i)
    return pos


def _min_gap(a: list[int], b: list[int]) -> int:
    # both lists sorted ascending; linear merge
    i = j = 0
    best = abs(a[0] - b[0])
    while i < len(a) and j < len(b):
        d = a[i] - b[j]
        if abs(d) < best:
            best = abs(d)
        if d < 0:
            i += 1
        else:
            j += 1
    return best


def _pair_gaps(query: Sequence[str], doc: Sequence[str]) -> list[int]:
    pos = _positions(query, doc)
    terms = [t for t in dict.fromkeys(query) if t in pos]
    return [_min_gap(pos[a], pos[b]) for a, b in combinations(terms, 2)]


def prox_1(query: Sequence[str], doc: Sequence[str]) -> float:
    """Mean over co-occurring query term pairs of their closest distance."""
    gaps = _pair_gaps(query, doc)
    if not gaps:
        return float(len(doc))
    return sum(gaps) / len(gaps)


def prox_2(query: Sequence[str], doc: Sequence[str]) -> float:
    """Mean 1-based position of query term occurrences; |doc|+1 if none."""
    pos = _positions(query, doc)
    hits = [p for plist in pos.values() for p in plist]
    if not hits:
        return float(len(doc) + 1)
    return sum(hits) / len(hits)


def pairs_within(query: Sequence[str], doc: Sequence[str], window: int) -> int:
    return sum(1 for gap in _pair_gaps(query, doc) if gap <= window)


def prox_3(query: Sequence[str], doc: Sequence[str]) -> float:
    return float(pairs_within(query, doc, 5))


def prox_4(query: Sequence[str], doc: Sequence[str]) -> float:
    return float(pairs_within(query, doc, 10))


def nonstop(fn: Callable[..., float]) -> Callable[..., float]:
    """Lift a proximity feature to its stopword-filtered variant.

    Both query and document are filtered and positions re-indexed.
    """

    def wrapped(query: Sequence[str], doc: Sequence[str], stops: StopwordSet) -> float:
        return fn(filter_stopwords(query, stops), filter_stopwords(doc, stops))

    wrapped.__name__ = f"{fn.__name__}_nonstop"
    wrapped.__doc__ = f"{fn.__name__} after stopword filtering."
    return wrapped


prox_1_nonstop = nonstop(prox_1)
prox_2_nonstop = nonstop(prox_2)
prox_3_nonstop = nonstop(prox_3)
prox_4_nonstop = nonstop(prox_4)


def bm25_nonstop(query, doc, stats: CollectionStats, params: Bm25Params = Bm25Params()) -> float:
    stops = stats.stopwords
    return bm25(filter_stopwords(query, stops), filter_stopwords(doc, stops), stats, FieldView.CONCAT_NONSTOP, params)


def ql_nonstop(query, doc, stats: CollectionStats, mu: float = 2000.0) -> float:
    stops = stats.stopwords
    return query_likelihood(
        filter_stopwords(query, stops), filter_stopwords(doc, stops), stats, FieldView.CONCAT_NONSTOP, mu
    )


def length_features(record: QueryDocRecord) -> tuple[int, int, int]:
    return len(record.query), len(record.title), len(record.content)


def query_freq(record: QueryDocRecord) -> int:
    return -1 if record.freq_bucket is None else record.freq_bucket


# ---------------------------------------------------------------------------
# vectors and extraction


@dataclass(frozen=True)
class FeatureVector:
    """Fixed 24-slot vector; slot i holds feature id i+1, NaN when unpopulated."""

    values: np.ndarray
    mask: frozenset[FeatureId]

    def __post_init__(self):
        if self.values.shape != (N_FEATURES,):
            raise ValueError(f"expected {N_FEATURES} slots, got shape {self.values.shape}")

    def __getitem__(self, fid: int) -> float:
        fid = FeatureId(fid)
        if fid not in self.mask:
            raise FeatureError("slot not populated", fid)
        return float(self.values[fid - 1])

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return self.mask == other.mask and np.array_equal(self.values, other.values, equal_nan=True)

    __hash__ = None

    @classmethod
    def from_mapping(cls, values: Mapping[int, float]) -> FeatureVector:
        arr = np.full(N_FEATURES, MISSING)
        for fid, v in values.items():
            arr[FeatureId(fid) - 1] = v
        return cls(arr, frozenset(FeatureId(f) for f in values))

    def to_dict(self) -> dict[FeatureId, float]:
        return {fid: float(self.values[fid - 1]) for fid in sorted(self.mask)}

    def restrict(self, ids: Iterable[int]) -> FeatureVector:
        keep = frozenset(FeatureId(i) for i in ids) & self.mask
        arr = np.full(N_FEATURES, MISSING)
        for fid in keep:
            arr[fid - 1] = self.values[fid - 1]
        return FeatureVector(arr, keep)


class ClickScoreSource(Protocol):
    """Anything that can fill slot 1 for a record.

    `required` names the lexical features the source reads from the vector it
    is handed; extraction computes them even if they are not enabled.
    """

    required: frozenset[FeatureId]

    def __call__(self, vector: FeatureVector, qid: str, doc_index: int) -> float: ...


@dataclass(frozen=True)
class ExtractConfig:
    bm25: Bm25Params = Bm25Params()
    mu: float = 2000.0
    enabled: frozenset[FeatureId] = LEXICAL_FEATURES
    click_scorer: ClickScoreSource | None = field(default=None, compare=False)


def _lexical_value(fid: FeatureId, record: QueryDocRecord, stats: CollectionStats, cfg: ExtractConfig) -> float:
    q, text = record.query, record.text
    stops = stats.stopwords
    if fid is FeatureId.BM25:
        return bm25(q, text, stats, FieldView.CONCAT, cfg.bm25)
    if fid is FeatureId.QUERY_LENGTH:
        return float(len(record.query))
    if fid is FeatureId.TITLE_LENGTH:
        return float(len(record.title))
    if fid is FeatureId.CONTENT_LENGTH:
        return float(len(record.content))
    if fid is FeatureId.QUERY_FREQ:
        return float(query_freq(record))
    if fid is FeatureId.QL:
        return query_likelihood(q, text, stats, FieldView.CONCAT, cfg.mu)
    if fid is FeatureId.PROX_1:
        return prox_1(q, text)
    if fid is FeatureId.PROX_2:
        return prox_2(q, text)
    if fid is FeatureId.PROX_3:
        return prox_3(q, text)
    if fid is FeatureId.PROX_4:
        return prox_4(q, text)
    if fid is FeatureId.PROX_1_NONSTOP:
        return prox_1_nonstop(q, text, stops)
    if fid is FeatureId.PROX_2_NONSTOP:
        return prox_2_nonstop(q, text, stops)
    if fid is FeatureId.PROX_3_NONSTOP:
        return prox_3_nonstop(q, text, stops)
    if fid is FeatureId.PROX_4_NONSTOP:
        return prox_4_nonstop(q, text, stops)
    if fid is FeatureId.TF_IDF:
        return tf_idf(q, text, stats)
    if fid is FeatureId.TF:
        return tf_score(q, text)
    if fid is FeatureId.IDF:
        return idf_score(q, stats)
    if fid is FeatureId.BM25_TITLE:
        return bm25(q, record.title, stats, FieldView.TITLE, cfg.bm25)
    if fid is FeatureId.BM25_CONTENT:
        return bm25(q, record.content, stats, FieldView.CONTENT, cfg.bm25)
    if fid is FeatureId.BM25_BIGRAM:
        return bm25(bigrams(q), bigrams(text), stats, FieldView.CONCAT_BIGRAM, cfg.bm25)
    if fid is FeatureId.QL_BIGRAM:
        return query_likelihood(bigrams(q), bigrams(text), stats, FieldView.CONCAT_BIGRAM, cfg.mu)
    if fid is FeatureId.BM25_NONSTOP:
        return bm25_nonstop(q, text, stats, cfg.bm25)
    if fid is FeatureId.QL_NONSTOP:
        return ql_nonstop(q, text, stats, cfg.mu)
    raise FeatureError("no lexical definition", fid)


def extract(
    record: QueryDocRecord,
    stats: CollectionStats,
    config: ExtractConfig = ExtractConfig(),
    doc_index: int = 0,
) -> FeatureVector:
    enabled = frozenset(FeatureId(f) for f in config.enabled)
    scorer = config.click_scorer
    if FeatureId.CROSS_ENCODER in enabled and scorer is None:
        raise FeatureError("enabled but no click scorer configured", FeatureId.CROSS_ENCODER)
    needed = enabled - {FeatureId.CROSS_ENCODER}
    if FeatureId.CROSS_ENCODER in enabled:
        needed |= frozenset(scorer.required) - {FeatureId.CROSS_ENCODER}

    values = np.full(N_FEATURES, MISSING)
    for fid in sorted(needed):
        try:
            v = _lexical_value(fid, record, stats, config)
        except FeatureError as exc:
            if exc.feature is not None:
                raise
            raise FeatureError(str(exc), fid) from None
        if not math.isfinite(v):
            raise FeatureError(f"non-finite value {v!r}", fid)
        values[fid - 1] = v

    if FeatureId.CROSS_ENCODER in enabled:
        base = FeatureVector(values.copy(), frozenset(needed))
        s = float(scorer(base, record.qid, doc_index))
        if not math.isfinite(s):
            raise FeatureError(f"click scorer returned {s!r}", FeatureId.CROSS_ENCODER)
        values[0] = s

    for fid in needed - enabled:
        values[fid - 1] = MISSING
    return FeatureVector(values, enabled)
