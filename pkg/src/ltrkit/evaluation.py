"""Per-query ranking, DCG and embedding-based validation subsampling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class DcgConfig:
    k: int = 10
    gain: str = "linear"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.gain not in ("linear", "exponential"):
            raise ValueError(f"unknown gain {self.gain!r}")

    def gain_of(self, rel: float) -> float:
        return float(rel) if self.gain == "linear" else 2.0 ** rel - 1.0


@dataclass(frozen=True)
class RankedEntry:
    doc_index: int
    score: float
    relevance: int


@dataclass(frozen=True)
class RankedList:
    qid: object
    entries: tuple[RankedEntry, ...]

    @property
    def grades(self) -> list[int]:
        return [e.relevance for e in self.entries]


def dcg_of_grades(grades: Sequence[float], config: DcgConfig = DcgConfig()) -> float:
    """DCG of relevance grades given in rank order."""
    total = 0.0
    for i, rel in enumerate(grades[: config.k], start=1):
        total += config.gain_of(rel) / math.log2(i + 1)
    return total


def dcg_at_k(ranked: RankedList, config: DcgConfig = DcgConfig()) -> float:
    return dcg_of_grades(ranked.grades, config)


def mean_dcg(lists: Sequence[RankedList], config: DcgConfig = DcgConfig()) -> float:
    if not lists:
        raise ValueError("mean DCG over zero queries is undefined")
    return sum(dcg_at_k(rl, config) for rl in lists) / len(lists)


def rank_per_query(
    scores: Iterable[tuple[object, int, float]],
    grades: Mapping[tuple[object, int], int],
) -> list[RankedList]:
    """Group (qid, doc index, score) triples by qid and sort by score.

    Higher score ranks first; equal scores keep their input order. Queries are
    returned in order of first appearance. Missing grades count as 0.
    """
    groups: dict[object, list[tuple[int, int, float]]] = {}
    seen = set()
    for order, (qid, doc, score) in enumerate(scores):
        key = (qid, doc)
        if key in seen:
            raise ValueError(f"duplicate (qid, doc index) pair {key!r}")
        seen.add(key)
        groups.setdefault(qid, []).append((order, doc, float(score)))
    out = []
    for qid, items in groups.items():
        items.sort(key=lambda t: (-t[2], t[0]))
        entries = tuple(RankedEntry(doc, score, int(grades.get((qid, doc), 0))) for _, doc, score in items)
        out.append(RankedList(qid, entries))
    return out


class QueryGroups:
    """Row indices grouped by qid, in first-appearance order.

    Lets a caller evaluate many score vectors over one fixed validation set
    without regrouping each time.
    """

    def __init__(self, qids: Sequence, labels: Sequence[int]):
        index: dict[object, list[int]] = {}
        for i, q in enumerate(qids):
            index.setdefault(q.item() if hasattr(q, "item") else q, []).append(i)
        self.qids = list(index)
        self.rows = [np.asarray(r, dtype=np.int64) for r in index.values()]
        self.labels = np.asarray(labels)

    def __len__(self) -> int:
        return len(self.rows)

    def multi_doc(self) -> bool:
        return any(len(r) > 1 for r in self.rows)

    def mean_dcg(self, scores: np.ndarray, config: DcgConfig = DcgConfig()) -> float:
        if not self.rows:
            raise ValueError("mean DCG over zero queries is undefined")
        total = 0.0
        for rows in self.rows:
            # stable sort on -score keeps input order for ties
            order = np.argsort(-scores[rows], kind="stable")
            total += dcg_of_grades(self.labels[rows][order].tolist(), config)
        return total / len(self.rows)


def expected_random_dcg(grades: Sequence[float], config: DcgConfig = DcgConfig()) -> float:
    """Expected DCG of one query's documents under a uniformly random order."""
    n = len(grades)
    if n == 0:
        return 0.0
    mean_gain = sum(config.gain_of(g) for g in grades) / n
    return mean_gain * sum(1.0 / math.log2(i + 1) for i in range(1, min(config.k, n) + 1))


# ---------------------------------------------------------------------------
# validation subsampling


def _qid_sort_key(qid) -> tuple:
    s = str(qid)
    return (0, int(s), s) if s.lstrip("-").isdigit() else (1, 0, s)


def _unit_rows(ids: Sequence, matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1)
    for qid, norm in zip(ids, norms):
        if not norm > 0:
            raise ValueError(f"zero-norm embedding for qid {qid!r}")
    return matrix / norms[:, None]


def max_similarities(valid: Mapping[object, Sequence[float]], test: Mapping[object, Sequence[float]]) -> dict:
    """For each validation query, the highest cosine similarity to any test query."""
    if not test:
        raise ValueError("no test embeddings")
    vids = list(valid)
    tids = list(test)
    V = np.asarray([valid[q] for q in vids], dtype=np.float64)
    T = np.asarray([test[q] for q in tids], dtype=np.float64)
    if V.ndim != 2 or T.ndim != 2 or (len(V) and V.shape[1] != T.shape[1]):
        raise ValueError("embeddings must share one dimension")
    if not len(V):
        return {}
    sims = np.clip(_unit_rows(vids, V) @ _unit_rows(tids, T).T, -1.0, 1.0)
    return dict(zip(vids, sims.max(axis=1).tolist()))


def subsample_validation(
    valid: Mapping[object, Sequence[float]],
    test: Mapping[object, Sequence[float]],
    fraction: float = 0.2,
) -> set:
    """Keep the ceil(fraction * n) validation queries most similar to the test set.

    Similarity of a validation query is its maximum cosine similarity over all
    test queries; ties are broken by ascending qid.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    best = max_similarities(valid, test)
    n_keep = math.ceil(fraction * len(best))
    ranked = sorted(best, key=lambda q: (-best[q], _qid_sort_key(q)))
    return set(ranked[:n_keep])


def read_embeddings(source: IO[str] | Iterable[str]) -> dict[str, np.ndarray]:
    """Parse ``qid<TAB>v1 v2 ... vd`` lines."""
    out: dict[str, np.ndarray] = {}
    dim = None
    for line_no, line in enumerate(source, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        qid, sep, rest = line.partition("\t")
        if not sep:
            raise ValueError(f"line {line_no}: expected 'qid<TAB>vector'")
        try:
            vec = np.asarray([float(x) for x in rest.split()], dtype=np.float64)
        except ValueError:
            raise ValueError(f"line {line_no}: non-numeric embedding entry") from None
        if dim is None:
            dim = len(vec)
        if len(vec) != dim or dim == 0:
            raise ValueError(f"line {line_no}: embedding dimension {len(vec)} != {dim}")
        if not np.isfinite(vec).all():
            raise ValueError(f"line {line_no}: non-finite embedding entry")
        if qid in out:
            raise ValueError(f"line {line_no}: duplicate qid {qid!r}")
        out[qid] = vec
    return out


def load_embeddings(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        return read_embeddings(fh)


def read_scores(source: IO[str] | Iterable[str]) -> list[tuple[str, int, float]]:
    """Parse ``qid<TAB>doc_index<TAB>score`` lines."""
    out = []
    for line_no, line in enumerate(source, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"line {line_no}: expected 3 tab-separated columns")
        try:
            out.append((parts[0], int(parts[1]), float(parts[2])))
        except ValueError:
            raise ValueError(f"line {line_no}: malformed score row") from None
    return out


def format_scores(rows: Iterable[tuple[object, int, float]]) -> str:
    return "".join(f"{q}\t{int(d)}\t{float(s)!r}\n" for q, d, s in rows)
