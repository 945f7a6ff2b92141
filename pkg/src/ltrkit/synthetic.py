"""Deterministic synthetic search log used for the bundled demo corpus and tests.

Documents draw background tokens from a Zipfian vocabulary and receive query
terms in proportion to a hidden relevance grade; relevant documents also get
query terms placed close together. Clicks follow the grade with a position
bias, so every lexical feature carries some (noisy) signal.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import QueryDocRecord, format_record, remap_qids

SPLITS = {"train": "train", "dev": "annotation", "valid": "annotation", "test": "annotation"}


@dataclass(frozen=True)
class SynthConfig:
    vocab_size: int = 300
    n_queries: dict | None = None
    docs_per_query: tuple[int, int] = (8, 12)
    embedding_dim: int = 16
    seed: int = 7

    def queries(self) -> dict[str, int]:
        return self.n_queries or {"train": 40, "dev": 30, "valid": 15, "test": 15}


def _token(i: int) -> str:
    return f"w{i:03d}"


class _Generator:
    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        ranks = np.arange(1, cfg.vocab_size + 1)
        weights = 1.0 / ranks**1.05
        self.zipf = weights / weights.sum()
        self.directions = self.rng.normal(size=(cfg.vocab_size, cfg.embedding_dim))

    def background(self, n: int) -> list[str]:
        return [_token(i) for i in self.rng.choice(self.cfg.vocab_size, size=n, p=self.zipf)]

    def query_terms(self) -> list[int]:
        n = int(self.rng.integers(1, 5))
        # mostly mid/low-frequency terms, occasionally a very common one
        terms = list(self.rng.choice(np.arange(20, self.cfg.vocab_size), size=n, replace=False))
        if self.rng.random() < 0.25:
            terms.insert(int(self.rng.integers(0, n + 1)), int(self.rng.integers(0, 20)))
        return [int(t) for t in terms]

    def document(self, query: list[str], grade: int) -> tuple[list[str], list[str]]:
        rng = self.rng
        title = self.background(int(rng.integers(3, 9)))
        content = self.background(int(rng.integers(15, 50)))
        hits = int(rng.poisson(0.3 + 1.2 * grade))
        for _ in range(hits):
            term = query[int(rng.integers(0, len(query)))]
            if rng.random() < 0.3:
                title.insert(int(rng.integers(0, len(title) + 1)), term)
            else:
                content.insert(int(rng.integers(0, len(content) + 1)), term)
        if grade >= 2 and len(query) > 1 and rng.random() < grade / 4:
            # phrase-like block of the query near the start of the content
            at = int(rng.integers(0, max(1, len(content) // 3)))
            content[at:at] = list(query)
        return title, content

    def embedding(self, query_ids: list[int]) -> np.ndarray:
        vec = self.directions[query_ids].sum(axis=0)
        vec = vec + 0.3 * self.rng.normal(size=self.cfg.embedding_dim)
        return vec

    def split(self, name: str, n_queries: int, collide: bool):
        rng = self.rng
        records: list[QueryDocRecord] = []
        embeddings: dict[tuple[str, tuple[str, ...]], np.ndarray] = {}
        for qn in range(n_queries):
            ids = self.query_terms()
            query = [_token(i) for i in ids]
            qid = f"{name[0]}{qn}"
            if collide and qn % 7 == 6:
                # same raw qid reused by a different query, as in real annotation dumps
                qid = f"{name[0]}{qn - 1}"
            bucket = int(rng.integers(0, 10))
            n_docs = int(rng.integers(self.cfg.docs_per_query[0], self.cfg.docs_per_query[1] + 1))
            grades = rng.choice(5, size=n_docs, p=[0.35, 0.25, 0.2, 0.12, 0.08])
            order = rng.permutation(n_docs)
            for d in range(n_docs):
                g = int(grades[d])
                title, content = self.document(query, g)
                position = int(order[d]) + 1
                click = None
                relevance = None
                if SPLITS[name] == "train":
                    p_click = (0.05 + 0.2 * g) / position**0.5
                    click = int(rng.random() < min(p_click, 0.95))
                else:
                    relevance = g
                records.append(
                    QueryDocRecord(
                        qid=qid,
                        query=tuple(query),
                        title=tuple(title),
                        content=tuple(content),
                        click=click,
                        relevance=relevance,
                        freq_bucket=bucket,
                        rank_position=position if click is not None else None,
                    )
                )
            embeddings[(qid, tuple(query))] = self.embedding(ids)
        return records, embeddings


def generate(config: SynthConfig = SynthConfig()) -> dict:
    """Return ``{split: records}`` plus ``{split + "_emb": {remapped qid: vector}}``."""
    gen = _Generator(config)
    out = {}
    for name, n in config.queries().items():
        records, emb = gen.split(name, n, collide=SPLITS[name] == "annotation")
        out[name] = records
        if SPLITS[name] == "annotation":
            _, remap = remap_qids(records)
            out[f"{name}_emb"] = {str(remap.mapping[key]): vec for key, vec in emb.items()}
    return out


def _format_embedding(qid: str, vec: np.ndarray) -> str:
    return qid + "\t" + " ".join(repr(round(float(v), 6)) for v in vec)


def write_corpus(out_dir: str | Path, config: SynthConfig = SynthConfig()) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = generate(config)
    written = []
    for name, schema in SPLITS.items():
        path = out_dir / f"{name}.tsv"
        path.write_text("".join(format_record(r, schema) + "\n" for r in data[name]), encoding="utf-8")
        written.append(path)
        if f"{name}_emb" in data:
            path = out_dir / f"{name}_emb.tsv"
            emb = data[f"{name}_emb"]
            path.write_text("".join(_format_embedding(q, emb[q]) + "\n" for q in emb), encoding="utf-8")
            written.append(path)
    return written


def bundled_corpus_dir() -> Path:
    return Path(__file__).parent / "data"
