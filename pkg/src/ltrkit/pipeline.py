"""Glue between records, statistics, extraction and feature files."""

from __future__ import annotations

import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

from .corpus import QueryDocRecord, doc_indices, remap_qids
from .featurefile import FeatureSet
from .features import ExtractConfig, extract
from .stats import CollectionStats


def prepare(records: Sequence[QueryDocRecord]) -> tuple[list[QueryDocRecord], list[int]]:
    """Remap query ids and number documents within each remapped query."""
    remapped, _ = remap_qids(records)
    return remapped, doc_indices(remapped)


def extract_feature_set(
    records: Sequence[QueryDocRecord],
    stats: CollectionStats,
    config: ExtractConfig = ExtractConfig(),
    threads: int = 1,
) -> FeatureSet:
    """Extract vectors for already-remapped records (see `prepare`)."""
    docs = doc_indices(records)

    def one(i: int):
        return extract(records[i], stats, config, docs[i])

    if threads > 1 and len(records) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vectors = list(pool.map(one, range(len(records))))
    else:
        vectors = [one(i) for i in range(len(records))]
    return FeatureSet.from_vectors(vectors, [r.label for r in records], [int(r.qid) for r in records], docs)


def grades_of(records: Sequence[QueryDocRecord]) -> dict[tuple[str, int], int]:
    """(remapped qid, doc index) -> relevance grade, for records that carry one."""
    docs = doc_indices(records)
    return {(r.qid, d): r.relevance for r, d in zip(records, docs) if r.relevance is not None}


def atomic_write(path: str | Path, text: str) -> None:
    """Write `text` to `path` via a temp file in the same directory and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
