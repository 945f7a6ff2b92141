"""LETOR / SVMlight-style feature files.

One line per query-document pair::

    <label> qid:<int> 1:<v1> 2:<v2> ... # doc=<index>

Feature ids are ascending, unpopulated slots are omitted and values are
rendered with ``repr`` (shortest round-trip decimal). A label of -1 marks a
row without a label (e.g. test records).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .features import MISSING, N_FEATURES, FeatureId, FeatureVector

NO_LABEL = -1


class FeatureFileError(ValueError):
    def __init__(self, message: str, line_no: int):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


@dataclass
class FeatureSet:
    """Feature matrix with per-row label, query id and within-query doc index."""

    X: np.ndarray
    labels: np.ndarray
    qids: np.ndarray
    doc_index: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64).reshape(-1, N_FEATURES)
        n = len(self.X)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(n)
        self.qids = np.asarray(self.qids, dtype=np.int64).reshape(n)
        self.doc_index = np.asarray(self.doc_index, dtype=np.int64).reshape(n)

    def __len__(self) -> int:
        return len(self.X)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureSet):
            return NotImplemented
        return (
            np.array_equal(self.X, other.X, equal_nan=True)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.qids, other.qids)
            and np.array_equal(self.doc_index, other.doc_index)
        )

    @classmethod
    def from_vectors(
        cls,
        vectors: Sequence[FeatureVector],
        labels: Sequence[int | None],
        qids: Sequence[int],
        doc_index: Sequence[int] | None = None,
    ) -> FeatureSet:
        X = np.vstack([v.values for v in vectors]) if vectors else np.empty((0, N_FEATURES))
        lab = [NO_LABEL if l is None else int(l) for l in labels]
        if doc_index is None:
            doc_index = _group_positions(qids)
        return cls(X, lab, qids, doc_index)

    def vector(self, i: int) -> FeatureVector:
        row = self.X[i].copy()
        mask = frozenset(FeatureId(j + 1) for j in np.flatnonzero(~np.isnan(row)))
        return FeatureVector(row, mask)

    def populated(self) -> frozenset[FeatureId]:
        """Feature ids present in every row."""
        if len(self) == 0:
            return frozenset()
        full = ~np.isnan(self.X).any(axis=0)
        return frozenset(FeatureId(j + 1) for j in np.flatnonzero(full))

    def masked(self, ids: Iterable[int]) -> FeatureSet:
        keep = sorted({int(i) for i in ids})
        X = np.full_like(self.X, MISSING)
        cols = [i - 1 for i in keep]
        X[:, cols] = self.X[:, cols]
        return FeatureSet(X, self.labels.copy(), self.qids.copy(), self.doc_index.copy())

    def subset(self, rows) -> FeatureSet:
        return FeatureSet(self.X[rows], self.labels[rows], self.qids[rows], self.doc_index[rows])

    def with_column(self, fid: int, values: Sequence[float]) -> FeatureSet:
        X = self.X.copy()
        X[:, int(fid) - 1] = values
        return FeatureSet(X, self.labels.copy(), self.qids.copy(), self.doc_index.copy())


def _group_positions(qids: Sequence[int]) -> list[int]:
    seen: dict[int, int] = {}
    out = []
    for q in qids:
        q = int(q)
        out.append(seen.get(q, 0))
        seen[q] = seen.get(q, 0) + 1
    return out


def format_row(label: int, qid: int, values: np.ndarray, doc_index: int) -> str:
    parts = [str(int(label)), f"qid:{int(qid)}"]
    for j, v in enumerate(values):
        if not math.isnan(v):
            parts.append(f"{j + 1}:{float(v)!r}")
    parts.append(f"# doc={int(doc_index)}")
    return " ".join(parts)


def write_feature_file(fs: FeatureSet, sink: IO[str]) -> None:
    for i in range(len(fs)):
        sink.write(format_row(fs.labels[i], fs.qids[i], fs.X[i], fs.doc_index[i]) + "\n")


def dumps_feature_file(fs: FeatureSet) -> str:
    return "".join(format_row(fs.labels[i], fs.qids[i], fs.X[i], fs.doc_index[i]) + "\n" for i in range(len(fs)))


def _parse_int(token: str, what: str, line_no: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise FeatureFileError(f"invalid {what} {token!r}", line_no) from None


def read_feature_file(source: IO[str] | Iterable[str]) -> FeatureSet:
    rows, labels, qids, docs = [], [], [], []
    for line_no, line in enumerate(source, start=1):
        body, _, comment = line.partition("#")
        tokens = body.split()
        if not tokens:
            continue
        if len(tokens) < 2 or not tokens[1].startswith("qid:"):
            raise FeatureFileError("expected '<label> qid:<int> ...'", line_no)
        label = _parse_int(tokens[0], "label", line_no)
        if label < NO_LABEL:
            raise FeatureFileError(f"invalid label {label}", line_no)
        qid = _parse_int(tokens[1][4:], "qid", line_no)
        row = np.full(N_FEATURES, MISSING)
        last = 0
        for tok in tokens[2:]:
            key, sep, val = tok.partition(":")
            if not sep:
                raise FeatureFileError(f"malformed feature {tok!r}", line_no)
            fid = _parse_int(key, "feature id", line_no)
            if not 1 <= fid <= N_FEATURES:
                raise FeatureFileError(f"feature id {fid} out of range 1..{N_FEATURES}", line_no)
            if fid <= last:
                raise FeatureFileError(f"feature ids not strictly ascending at {fid}", line_no)
            last = fid
            try:
                v = float(val)
            except ValueError:
                raise FeatureFileError(f"invalid value {val!r} for feature {fid}", line_no) from None
            if not math.isfinite(v):
                raise FeatureFileError(f"non-finite value for feature {fid}", line_no)
            row[fid - 1] = v
        doc = None
        for item in comment.split():
            if item.startswith("doc="):
                doc = _parse_int(item[4:], "doc index", line_no)
        rows.append(row)
        labels.append(label)
        qids.append(qid)
        docs.append(doc)
    fallback = _group_positions(qids)
    doc_index = [d if d is not None else f for d, f in zip(docs, fallback)]
    X = np.vstack(rows) if rows else np.empty((0, N_FEATURES))
    return FeatureSet(X, labels, qids, doc_index)


def load_feature_file(path: str | Path) -> FeatureSet:
    with open(path, encoding="utf-8") as fh:
        return read_feature_file(fh)
