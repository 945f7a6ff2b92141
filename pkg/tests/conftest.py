import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ltrkit import corpus  # noqa: E402
from ltrkit.synthetic import bundled_corpus_dir  # noqa: E402

DATA = bundled_corpus_dir()


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def valid_records():
    records, _ = corpus.remap_qids(corpus.read_records(DATA / "valid.tsv", "annotation"))
    return records


@pytest.fixture(scope="session")
def train_records():
    return corpus.read_records(DATA / "train.tsv", "train")


def rec(query, title="", content="", qid="q", **kw):
    return corpus.QueryDocRecord(
        qid=qid,
        query=tuple(query.split()),
        title=tuple(title.split()),
        content=tuple(content.split()),
        **kw,
    )


def monotone_ranking_data(seed, n_queries=40, docs=10):
    """Relevance is a noisy monotone function of slots 2 and 16; other slots are noise."""
    rng = np.random.default_rng(seed)
    n = n_queries * docs
    X = np.full((n, 24), np.nan)
    X[:, 1:13] = rng.normal(size=(n, 12))
    X[:, 15] = rng.normal(size=n)
    signal = X[:, 1] + X[:, 15] + 0.5 * rng.normal(size=n)
    y = np.clip(np.round(signal + 0.5), 0, 4).astype(int)
    qids = np.repeat(np.arange(n_queries), docs)
    return X, y, qids


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.report_lines():
        terminalreporter.write_line(line)
