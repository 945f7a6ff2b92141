"""Feature-subset ablation: fit one ensemble per subset, report validation DCG."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

from .evaluation import QueryGroups
from .featurefile import FeatureSet
from .features import FeatureError, FeatureId, format_feature_spec, parse_feature_spec
from .gbdt import TrainConfig, fit

# Default ablation grid. The first two rows are the same single feature; they
# only differ when the two runs use files extracted with different BM25 params.
DEFAULT_SUBSETS = (
    "2",
    "2",
    "1-10",
    "2-15",
    "2-13,15",
    "2-8,12-13,15",
    "2-13,15-16,22",
    "2-13,15-20",
    "2-6,8-13,15-20",
)


@dataclass(frozen=True)
class AblationRow:
    spec: str
    n_features: int
    mean_dcg: float

    def to_tsv(self) -> str:
        return f"{self.spec}\t{self.n_features}\t{self.mean_dcg!r}"


def _as_ids(subset: str | Iterable[int]) -> frozenset[FeatureId]:
    if isinstance(subset, str):
        return parse_feature_spec(subset)
    return frozenset(FeatureId(int(i)) for i in subset)


def run_subset(train: FeatureSet, valid: FeatureSet, ids: frozenset[FeatureId], config: TrainConfig) -> AblationRow:
    for name, fs in (("training", train), ("validation", valid)):
        missing = ids - fs.populated()
        if missing:
            raise FeatureError(f"not populated in the {name} feature file", min(missing))
    model = fit(
        train.masked(ids).X,
        train.labels,
        config,
        valid=(valid.X, valid.labels, valid.qids),
        features=ids,
    )
    groups = QueryGroups(valid.qids, valid.labels)
    dcg = groups.mean_dcg(model.predict_matrix(valid.X), config.dcg)
    return AblationRow(format_feature_spec(ids), len(ids), dcg)


def ablate(
    train: FeatureSet,
    valid: FeatureSet,
    subsets: Sequence[str | Iterable[int]],
    config: TrainConfig = TrainConfig(),
    threads: int = 1,
) -> list[AblationRow]:
    """Rows sorted by mean DCG descending; equal DCGs keep input order."""
    id_sets = [_as_ids(s) for s in subsets]
    if threads > 1 and len(id_sets) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda ids: run_subset(train, valid, ids, config), id_sets))
    else:
        rows = [run_subset(train, valid, ids, config) for ids in id_sets]
    return sorted(rows, key=lambda r: -r.mean_dcg)


def format_ablation(rows: Iterable[AblationRow]) -> str:
    return "".join(row.to_tsv() + "\n" for row in rows)
