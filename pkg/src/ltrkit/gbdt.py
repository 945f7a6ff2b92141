"""Least-squares gradient-boosted regression trees with DCG-based truncation.

Trees are grown depth-first with exact greedy splits over sorted unique
feature values. Missing values (NaN) are routed to whichever side gave the
larger gain when the split was chosen (left on ties). Leaf values are the
mean residual of all training rows that reach the leaf, which keeps training
MSE non-increasing even when the tree structure was found on a row subsample.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .evaluation import DcgConfig, QueryGroups
from .features import N_FEATURES, FeatureId, FeatureVector

MODEL_FORMAT = "ltrkit-gbdt"
MODEL_VERSION = 1
MIN_GAIN = 1e-12


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 500
    max_depth: int = 6
    min_samples_leaf: int = 20
    shrinkage: float = 0.05
    feature_subsample: float = 0.9
    row_subsample: float = 0.9
    seed: int = 42
    patience: int = 50
    dcg: DcgConfig = DcgConfig()

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        for name in ("shrinkage", "feature_subsample", "row_subsample"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")


@dataclass(eq=False)
class Tree:
    """Flat array encoding; node 0 is the root, feature -1 marks a leaf.

    `feature` holds 0-based column indices (feature id - 1).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    missing_left: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        def walk(i: int) -> int:
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))

        return walk(0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf node index reached by each row."""
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            cur = node[idx]
            x = X[idx, self.feature[cur]]
            go_left = np.where(np.isnan(x), self.missing_left[cur], x <= self.threshold[cur])
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_json(self) -> dict:
        return {
            "feature": [int(f) + 1 if f >= 0 else 0 for f in self.feature],
            "threshold": [float(t) for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "missing_left": [bool(m) for m in self.missing_left],
            "value": [float(v) for v in self.value],
            "gain": [float(g) for g in self.gain],
            "n_samples": self.n_samples.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> Tree:
        try:
            feature = np.asarray([f - 1 if f > 0 else -1 for f in d["feature"]], dtype=np.int64)
            tree = cls(
                feature=feature,
                threshold=np.asarray(d["threshold"], dtype=np.float64),
                left=np.asarray(d["left"], dtype=np.int64),
                right=np.asarray(d["right"], dtype=np.int64),
                missing_left=np.asarray(d["missing_left"], dtype=bool),
                value=np.asarray(d["value"], dtype=np.float64),
                gain=np.asarray(d["gain"], dtype=np.float64),
                n_samples=np.asarray(d["n_samples"], dtype=np.int64),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"malformed tree: {exc}") from None
        n = tree.n_nodes
        arrays = (tree.threshold, tree.left, tree.right, tree.missing_left, tree.value, tree.gain, tree.n_samples)
        if n == 0 or any(len(a) != n for a in arrays):
            raise ModelFormatError("tree arrays have inconsistent lengths")
        internal = tree.feature >= 0
        children = np.concatenate([tree.left[internal], tree.right[internal]])
        if (children <= 0).any() or (children >= n).any() or (tree.feature >= N_FEATURES).any():
            raise ModelFormatError("tree references out-of-range nodes or features")
        if not np.isfinite(tree.value).all():
            raise ModelFormatError("non-finite leaf value")
        return tree


@dataclass
class FitHistory:
    train_mse: list[float] = field(default_factory=list)
    valid_dcg: list[float] = field(default_factory=list)
    best_n_trees: int = 0


@dataclass
class GbdtModel:
    trees: list[Tree]
    shrinkage: float
    base_score: float
    enabled: frozenset[FeatureId]
    history: FitHistory | None = field(default=None, compare=False, repr=False)

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64).reshape(-1, N_FEATURES)
        out = np.full(len(X), self.base_score)
        if self.trees:
            total = np.zeros(len(X))
            for tree in self.trees:
                total += tree.predict(X)
            out = out + self.shrinkage * total
        return out


def predict(model: GbdtModel, vector: FeatureVector) -> float:
    return float(model.predict_matrix(vector.values[None, :])[0])


def predict_batch(model: GbdtModel, X: np.ndarray) -> np.ndarray:
    return model.predict_matrix(X)


# ---------------------------------------------------------------------------
# tree growing


def _best_split_on_column(x: np.ndarray, r: np.ndarray, min_leaf: int):
    """Best (gain, threshold, missing_left) for one column, or None."""
    n = len(r)
    miss = np.isnan(x)
    n_miss = int(miss.sum())
    present = ~miss
    xs = x[present]
    if len(xs) < 2:
        return None
    order = np.argsort(xs, kind="stable")
    xs = xs[order]
    rs = r[present][order]
    cut = np.flatnonzero(xs[:-1] < xs[1:])
    if len(cut) == 0:
        return None
    s_miss = float(r[miss].sum()) if n_miss else 0.0
    total = float(r.sum())
    csum = np.cumsum(rs)
    parent = total * total / n
    best = None
    for missing_left in (True, False):
        n_left = cut + 1 + (n_miss if missing_left else 0)
        s_left = csum[cut] + (s_miss if missing_left else 0.0)
        n_right = n - n_left
        ok = (n_left >= min_leaf) & (n_right >= min_leaf)
        if not ok.any():
            continue
        s_right = total - s_left
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = s_left * s_left / n_left + s_right * s_right / n_right - parent
        gain = np.where(ok, gain, -np.inf)
        i = int(np.argmax(gain))
        g = float(gain[i])
        if best is None or g > best[0]:
            lo, hi = xs[cut[i]], xs[cut[i] + 1]
            thr = lo + (hi - lo) / 2.0
            if not lo <= thr < hi:
                thr = lo
            best = (g, float(thr), missing_left)
        if n_miss == 0:
            break
    return best


class _Grower:
    def __init__(self, X, r, cols, config: TrainConfig):
        self.X = X
        self.r = r
        self.cols = cols
        self.cfg = config
        self.nodes: list[list] = []

    def _new_node(self, rows) -> int:
        # feature, threshold, left, right, missing_left, value, gain, n
        self.nodes.append([-1, 0.0, -1, -1, True, float(self.r[rows].mean()), 0.0, len(rows)])
        return len(self.nodes) - 1

    def grow(self, rows: np.ndarray) -> int:
        root = self._new_node(rows)
        self._split(root, rows, 0)
        return root

    def _split(self, node: int, rows: np.ndarray, depth: int) -> None:
        if depth >= self.cfg.max_depth or len(rows) < 2 * self.cfg.min_samples_leaf:
            return
        r = self.r[rows]
        best = None
        for col in self.cols:
            found = _best_split_on_column(self.X[rows, col], r, self.cfg.min_samples_leaf)
            if found is not None and (best is None or found[0] > best[0]):
                best = (found[0], col, found[1], found[2])
        if best is None or not best[0] > MIN_GAIN:
            return
        gain, col, thr, missing_left = best
        x = self.X[rows, col]
        go_left = np.where(np.isnan(x), missing_left, x <= thr)
        left_rows, right_rows = rows[go_left], rows[~go_left]
        left = self._new_node(left_rows)
        right = self._new_node(right_rows)
        self.nodes[node][:5] = [col, thr, left, right, missing_left]
        self.nodes[node][6] = gain
        self._split(left, left_rows, depth + 1)
        self._split(right, right_rows, depth + 1)

    def tree(self) -> Tree:
        cols = list(zip(*self.nodes))
        return Tree(
            feature=np.asarray(cols[0], dtype=np.int64),
            threshold=np.asarray(cols[1], dtype=np.float64),
            left=np.asarray(cols[2], dtype=np.int64),
            right=np.asarray(cols[3], dtype=np.int64),
            missing_left=np.asarray(cols[4], dtype=bool),
            value=np.asarray(cols[5], dtype=np.float64),
            gain=np.asarray(cols[6], dtype=np.float64),
            n_samples=np.asarray(cols[7], dtype=np.int64),
        )


def _refit_leaves(tree: Tree, X: np.ndarray, r: np.ndarray) -> Tree:
    leaf = tree.apply(X)
    value = tree.value.copy()
    counts = np.bincount(leaf, minlength=tree.n_nodes)
    sums = np.bincount(leaf, weights=r, minlength=tree.n_nodes)
    reached = counts > 0
    value[reached] = sums[reached] / counts[reached]
    tree.value = value
    return tree


def _check_labels(labels: np.ndarray, what: str) -> None:
    if ((labels < 0) | (labels > 4)).any():
        raise ValueError(f"{what} labels must be graded relevance in 0..4")


def fit(
    X: np.ndarray,
    y: Sequence[int],
    config: TrainConfig = TrainConfig(),
    valid: tuple[np.ndarray, Sequence[int], Sequence] | None = None,
    features: Iterable[int] | None = None,
) -> GbdtModel:
    """Fit the ensemble on a (n, 24) matrix of feature slots.

    `valid` is ``(X_valid, labels_valid, qids_valid)``; when given, mean DCG is
    recorded after every tree and the returned model is truncated to the tree
    count with the highest validation DCG (earliest on ties), stopping after
    `config.patience` trees without improvement. `features` restricts the
    columns trees may split on; by default every column populated in at
    least one training row is used.
    """
    X = np.asarray(X, dtype=np.float64).reshape(-1, N_FEATURES)
    y = np.asarray(y, dtype=np.float64)
    if len(X) == 0:
        raise ValueError("empty training set")
    if len(y) != len(X):
        raise ValueError("label count does not match row count")
    _check_labels(y, "training")

    if features is None:
        enabled = frozenset(FeatureId(j + 1) for j in np.flatnonzero(~np.isnan(X).all(axis=0)))
    else:
        enabled = frozenset(FeatureId(int(f)) for f in features)
    cols = np.asarray(sorted(f - 1 for f in enabled), dtype=np.int64)

    groups = None
    if valid is not None:
        Xv = np.asarray(valid[0], dtype=np.float64).reshape(-1, N_FEATURES)
        yv = np.asarray(valid[1])
        _check_labels(yv, "validation")
        groups = QueryGroups(list(valid[2]), yv)
        if not groups.multi_doc():
            raise ValueError("DCG undefined: validation set has no query with more than one document")

    rng = np.random.default_rng(config.seed)
    base = float(y.mean())
    F = np.full(len(X), base)
    history = FitHistory(train_mse=[float(np.mean((y - F) ** 2))])
    trees: list[Tree] = []
    best_n, best_dcg = 0, -math.inf
    if groups is not None:
        Fv = np.full(len(Xv), base)
        best_dcg = groups.mean_dcg(Fv, config.dcg)
        history.valid_dcg.append(best_dcg)

    n = len(X)
    for t in range(config.n_trees):
        if config.row_subsample < 1.0:
            size = max(1, int(round(config.row_subsample * n)))
            rows = np.sort(rng.choice(n, size=size, replace=False))
        else:
            rows = np.arange(n)
        if config.feature_subsample < 1.0 and len(cols) > 1:
            size = max(1, int(round(config.feature_subsample * len(cols))))
            tree_cols = np.sort(rng.choice(cols, size=size, replace=False))
        else:
            tree_cols = cols

        residual = y - F
        grower = _Grower(X, residual, tree_cols, config)
        grower.grow(rows)
        tree = grower.tree()
        if tree.feature[0] < 0:
            break
        tree = _refit_leaves(tree, X, residual)
        trees.append(tree)
        F = F + config.shrinkage * tree.predict(X)
        history.train_mse.append(float(np.mean((y - F) ** 2)))

        if groups is None:
            best_n = len(trees)
            continue
        Fv = Fv + config.shrinkage * tree.predict(Xv)
        score = groups.mean_dcg(Fv, config.dcg)
        history.valid_dcg.append(score)
        if score > best_dcg:
            best_dcg, best_n = score, len(trees)
        elif len(trees) - best_n >= config.patience:
            break

    history.best_n_trees = best_n
    return GbdtModel(trees[:best_n], config.shrinkage, base, enabled, history)


def feature_importance(model: GbdtModel) -> dict[FeatureId, float]:
    """Share of total split gain attributed to each feature."""
    totals: dict[FeatureId, float] = {}
    for tree in model.trees:
        for f, g in zip(tree.feature, tree.gain):
            if f >= 0:
                fid = FeatureId(int(f) + 1)
                totals[fid] = totals.get(fid, 0.0) + float(g)
    grand = sum(totals.values())
    if grand <= 0:
        return {}
    return {fid: g / grand for fid, g in sorted(totals.items())}


# ---------------------------------------------------------------------------
# persistence


def model_to_json(model: GbdtModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "base_score": model.base_score,
        "shrinkage": model.shrinkage,
        "enabled": sorted(int(f) for f in model.enabled),
        "trees": [t.to_json() for t in model.trees],
    }


def dumps_model(model: GbdtModel) -> str:
    return json.dumps(model_to_json(model), separators=(",", ":")) + "\n"


def loads_model(text: str) -> GbdtModel:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"unreadable model file: {exc}") from None
    if not isinstance(d, dict) or d.get("format") != MODEL_FORMAT:
        raise ModelFormatError("not a gbdt model file")
    if d.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {d.get('version')!r}")
    try:
        base = float(d["base_score"])
        shrinkage = float(d["shrinkage"])
        enabled = frozenset(FeatureId(int(f)) for f in d["enabled"])
        trees = [Tree.from_json(t) for t in d["trees"]]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model: {exc}") from None
    if not (math.isfinite(base) and 0.0 < shrinkage <= 1.0):
        raise ModelFormatError("invalid base_score or shrinkage")
    return GbdtModel(trees, shrinkage, base, enabled)


def save_model(model: GbdtModel, sink: IO[str]) -> None:
    sink.write(dumps_model(model))


def load_model(source: IO[str] | str | Path) -> GbdtModel:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            return loads_model(fh.read())
    return loads_model(source.read())
