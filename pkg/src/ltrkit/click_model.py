"""Pointwise click scorer trained with binary cross-entropy.

The scorer is a logistic model over standardized lexical features. Its
output probability fills feature slot 1; scores produced elsewhere (e.g. by a
neural model) can be imported instead through `ExternalScores`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .features import N_FEATURES, FeatureError, FeatureId, FeatureVector

SCORER_FORMAT = "ltrkit-click-scorer"
SCORER_VERSION = 1
LOG_EPS = 1e-12
# sigmoid(30) < 1 in float64, keeping scores strictly inside (0, 1)
_LOGIT_CLIP = 30.0


def sigmoid(z):
    z = np.clip(z, -_LOGIT_CLIP, _LOGIT_CLIP)
    return 1.0 / (1.0 + np.exp(-z))


def bce_loss(scores: Sequence[float], clicks: Sequence[int]) -> float:
    """Summed binary cross-entropy of click probabilities against click labels."""
    s = np.asarray(scores, dtype=np.float64)
    c = np.asarray(clicks, dtype=np.float64)
    if s.shape != c.shape:
        raise ValueError(f"length mismatch: {s.shape} scores vs {c.shape} clicks")
    pos = np.log(np.maximum(s, LOG_EPS))
    neg = np.log(np.maximum(1.0 - s, LOG_EPS))
    return float(-np.sum(c * pos + (1.0 - c) * neg))


def mean_bce_and_grad(weights: np.ndarray, bias: float, Z: np.ndarray, clicks: np.ndarray):
    """Mean BCE of a logistic model on standardized inputs and its gradient.

    Returns ``(loss, grad_weights, grad_bias)``. The loss is computed as
    mean(softplus(z) - c*z), which equals the mean of the clamped BCE away
    from saturation and is smooth everywhere.
    """
    z = Z @ weights + bias
    loss = float(np.mean(np.logaddexp(0.0, z) - clicks * z))
    resid = 0.5 * (1.0 + np.tanh(0.5 * z)) - clicks
    n = len(clicks)
    return loss, Z.T @ resid / n, float(resid.sum() / n)


@dataclass(frozen=True)
class ClickTrainConfig:
    learning_rate: float = 1.0
    epochs: int = 200
    batch_size: int = 0  # 0 = full batch
    seed: int = 42

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0 or self.batch_size < 0:
            raise ValueError("epochs and batch_size must be >= 0")


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)
    learning_rates: list[float] = field(default_factory=list)
    stopped_epoch: int = 0


@dataclass
class ClickScorer:
    feature_ids: tuple[FeatureId, ...]
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray

    @property
    def required(self) -> frozenset[FeatureId]:
        return frozenset(self.feature_ids)

    def _columns(self) -> list[int]:
        return [f - 1 for f in self.feature_ids]

    def score_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64).reshape(-1, N_FEATURES)
        sub = X[:, self._columns()]
        bad = np.isnan(sub).any(axis=0)
        if bad.any():
            raise FeatureError("required by the click scorer but missing", self.feature_ids[int(np.argmax(bad))])
        return sigmoid(((sub - self.mean) / self.std) @ self.weights + self.bias)

    def score(self, vector: FeatureVector) -> float:
        for fid in self.feature_ids:
            if fid not in vector.mask:
                raise FeatureError("required by the click scorer but missing", fid)
        return float(self.score_matrix(vector.values[None, :])[0])

    def __call__(self, vector: FeatureVector, qid: str = "", doc_index: int = 0) -> float:
        return self.score(vector)


def score(scorer: ClickScorer, vector: FeatureVector) -> float:
    return scorer.score(vector)


def train_click_scorer(
    X: np.ndarray,
    clicks: Sequence[int],
    config: ClickTrainConfig = ClickTrainConfig(),
    features: Iterable[int] | None = None,
) -> tuple[ClickScorer, TrainLog]:
    """Fit a logistic click scorer by gradient descent on mean BCE.

    `X` is an (n, 24) slot matrix. Features default to every populated slot
    except 1; constant columns are dropped. An epoch whose loss rises is
    rolled back and the learning rate halved, so the logged loss sequence
    never increases.
    """
    X = np.asarray(X, dtype=np.float64).reshape(-1, N_FEATURES)
    c = np.asarray(clicks, dtype=np.float64)
    if len(c) != len(X):
        raise ValueError("click count does not match row count")
    if not np.isin(c, (0.0, 1.0)).all():
        raise ValueError("clicks must be 0 or 1")
    rate = float(c.mean()) if len(c) else 0.0
    if not 0.0 < rate < 1.0:
        raise ValueError("degenerate click distribution: need at least one click and one non-click")

    if features is None:
        populated = ~np.isnan(X).any(axis=0)
        ids = [FeatureId(j + 1) for j in np.flatnonzero(populated) if j != 0]
    else:
        ids = sorted(FeatureId(int(f)) for f in set(features))
    for fid in ids:
        if np.isnan(X[:, fid - 1]).any():
            raise FeatureError("missing in click training data", fid)
    mean = X[:, [f - 1 for f in ids]].mean(axis=0) if ids else np.empty(0)
    std = X[:, [f - 1 for f in ids]].std(axis=0) if ids else np.empty(0)
    keep = std > 0
    ids = [f for f, k in zip(ids, keep) if k]
    mean, std = mean[keep], std[keep]
    Z = (X[:, [f - 1 for f in ids]] - mean) / std if ids else np.zeros((len(X), 0))

    w = np.zeros(len(ids))
    b = math.log(rate / (1.0 - rate))
    lr = config.learning_rate
    loss, _, _ = mean_bce_and_grad(w, b, Z, c)
    log = TrainLog(losses=[loss], learning_rates=[lr])
    rng = np.random.default_rng(config.seed)
    n = len(c)
    full_batch = config.batch_size == 0 or config.batch_size >= n

    for epoch in range(config.epochs):
        w_prev, b_prev = w.copy(), b
        if full_batch:
            _, gw, gb = mean_bce_and_grad(w, b, Z, c)
            w, b = w - lr * gw, b - lr * gb
        else:
            order = rng.permutation(n)
            for start in range(0, n, config.batch_size):
                rows = order[start : start + config.batch_size]
                _, gw, gb = mean_bce_and_grad(w, b, Z[rows], c[rows])
                w, b = w - lr * gw, b - lr * gb
        new_loss, _, _ = mean_bce_and_grad(w, b, Z, c)
        if not new_loss <= loss:
            w, b = w_prev, b_prev
            lr /= 2.0
        else:
            loss = new_loss
        log.losses.append(loss)
        log.learning_rates.append(lr)
        log.stopped_epoch = epoch + 1

    return ClickScorer(tuple(ids), w, float(b), mean, std), log


# ---------------------------------------------------------------------------
# persistence and external scores


def scorer_to_json(scorer: ClickScorer) -> dict:
    return {
        "format": SCORER_FORMAT,
        "version": SCORER_VERSION,
        "features": [int(f) for f in scorer.feature_ids],
        "weights": [float(v) for v in scorer.weights],
        "bias": float(scorer.bias),
        "mean": [float(v) for v in scorer.mean],
        "std": [float(v) for v in scorer.std],
    }


def dumps_scorer(scorer: ClickScorer) -> str:
    return json.dumps(scorer_to_json(scorer), indent=1) + "\n"


def loads_scorer(text: str) -> ClickScorer:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"unreadable click scorer file: {exc}") from None
    if not isinstance(d, dict) or d.get("format") != SCORER_FORMAT:
        raise ValueError("not a click scorer file")
    if d.get("version") != SCORER_VERSION:
        raise ValueError(f"unsupported click scorer version {d.get('version')!r}")
    try:
        ids = tuple(FeatureId(int(f)) for f in d["features"])
        arrays = [np.asarray(d[k], dtype=np.float64) for k in ("weights", "mean", "std")]
        bias = float(d["bias"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed click scorer: {exc}") from None
    if any(len(a) != len(ids) for a in arrays) or (arrays[2] <= 0).any():
        raise ValueError("malformed click scorer: inconsistent weights/standardization")
    return ClickScorer(ids, arrays[0], bias, arrays[1], arrays[2])


def load_scorer(path: str | Path) -> ClickScorer:
    with open(path, encoding="utf-8") as fh:
        return loads_scorer(fh.read())


class ExternalScores:
    """Slot-1 values imported from a ``qid<TAB>doc_index<TAB>score`` file."""

    required: frozenset[FeatureId] = frozenset()

    def __init__(self, scores: dict[tuple[str, int], float]):
        self.scores = scores

    def __call__(self, vector: FeatureVector, qid: str, doc_index: int) -> float:
        try:
            return self.scores[(str(qid), int(doc_index))]
        except KeyError:
            raise FeatureError(f"no external score for qid {qid} doc {doc_index}", FeatureId.CROSS_ENCODER) from None

    @classmethod
    def read(cls, source: IO[str] | Iterable[str]) -> ExternalScores:
        scores = {}
        for line_no, line in enumerate(source, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"line {line_no}: expected qid, doc index and score")
            try:
                key = (parts[0], int(parts[1]))
                value = float(parts[2])
            except ValueError:
                raise ValueError(f"line {line_no}: malformed external score") from None
            if not math.isfinite(value):
                raise ValueError(f"line {line_no}: non-finite score")
            scores[key] = value
        return cls(scores)

    @classmethod
    def load(cls, path: str | Path) -> ExternalScores:
        with open(path, encoding="utf-8") as fh:
            return cls.read(fh)
