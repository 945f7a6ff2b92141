"""Command-line front end for the ranking pipeline.

Every command writes its artifacts atomically and derives all randomness
from ``--seed``, so repeated invocations produce byte-identical files.
"""

from __future__ import annotations

import argparse
import os
import sys
import traceback
from pathlib import Path

from . import ablation, click_model, corpus, evaluation, gbdt, pipeline, stats, synthetic
from .featurefile import FeatureSet, dumps_feature_file, load_feature_file
from .features import Bm25Params, ExtractConfig, format_feature_spec, parse_feature_spec

THREADS_ENV = "LTRKIT_THREADS"
DEFAULT_SEED = 42


def _default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _read_corpora(args) -> list[corpus.QueryDocRecord]:
    records = []
    for path in args.train or []:
        records.extend(corpus.read_records(path, "train"))
    for path in args.annotation or []:
        records.extend(corpus.read_records(path, "annotation"))
    if not records:
        raise ValueError("no input records; pass --train and/or --annotation")
    return records


def _dcg_config(args) -> evaluation.DcgConfig:
    return evaluation.DcgConfig(k=args.k, gain=args.gain)


def _train_config(args) -> gbdt.TrainConfig:
    return gbdt.TrainConfig(
        n_trees=args.n_trees,
        max_depth=args.max_depth,
        min_samples_leaf=args.min_samples_leaf,
        shrinkage=args.shrinkage,
        feature_subsample=args.feature_subsample,
        row_subsample=args.row_subsample,
        seed=args.seed,
        patience=args.patience,
        dcg=_dcg_config(args),
    )


def _read_qid_list(path) -> set[int]:
    with open(path, encoding="utf-8") as fh:
        return {int(line.strip()) for line in fh if line.strip()}


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> None:
    for path in synthetic.write_corpus(args.out_dir, synthetic.SynthConfig(seed=args.seed)):
        print(path)


def cmd_derive_stopwords(args) -> None:
    stops = corpus.derive_stopwords(_read_corpora(args), args.k)
    pipeline.atomic_write(args.out, "".join(t + "\n" for t in sorted(stops.terms)))
    print(f"{len(stops)} stopwords -> {args.out}")


def cmd_build_stats(args) -> None:
    stops = corpus.read_stopwords(args.stopwords) if args.stopwords else corpus.StopwordSet.empty()
    built = stats.build_stats(_read_corpora(args), stops)
    pipeline.atomic_write(args.out, stats.dumps_stats(built))
    print(f"{built.n_docs} documents -> {args.out}")


def cmd_extract(args) -> None:
    records, _ = pipeline.prepare(corpus.read_records(args.input, args.schema))
    enabled = parse_feature_spec(args.features)
    scorer = None
    if args.click_model and args.external_scores:
        raise ValueError("pass at most one of --click-model and --external-scores")
    if args.click_model:
        scorer = click_model.load_scorer(args.click_model)
    elif args.external_scores:
        scorer = click_model.ExternalScores.load(args.external_scores)
    config = ExtractConfig(Bm25Params(args.k1, args.b), args.mu, enabled, scorer)
    fs = pipeline.extract_feature_set(records, stats.read_stats(args.stats), config, args.threads)
    pipeline.atomic_write(args.out, dumps_feature_file(fs))
    if args.remap_out:
        _, remap = corpus.remap_qids(corpus.read_records(args.input, args.schema))
        lines = [f"{new}\t{old}\t{' '.join(q)}\n" for (old, q), new in remap.mapping.items()]
        pipeline.atomic_write(args.remap_out, "".join(lines))
    print(f"{len(fs)} rows, features {format_feature_spec(enabled)} -> {args.out}")


def cmd_train_click(args) -> None:
    fs = load_feature_file(args.train)
    features = parse_feature_spec(args.features) if args.features else None
    config = click_model.ClickTrainConfig(args.learning_rate, args.epochs, args.batch_size, args.seed)
    scorer, log = click_model.train_click_scorer(fs.X, fs.labels, config, features)
    pipeline.atomic_write(args.out, click_model.dumps_scorer(scorer))
    print(f"mean BCE {log.losses[0]:.6f} -> {log.losses[-1]:.6f} after {log.stopped_epoch} epochs -> {args.out}")


def _valid_split(args) -> FeatureSet:
    valid = load_feature_file(args.valid)
    if args.valid_qids:
        keep = _read_qid_list(args.valid_qids)
        valid = valid.subset([int(q) in keep for q in valid.qids])
    return valid


def cmd_train_gbdt(args) -> None:
    train = load_feature_file(args.train)
    valid = _valid_split(args)
    features = parse_feature_spec(args.features) if args.features else train.populated()
    model = gbdt.fit(
        train.X, train.labels, _train_config(args), valid=(valid.X, valid.labels, valid.qids), features=features
    )
    pipeline.atomic_write(args.out, gbdt.dumps_model(model))
    best = model.history.valid_dcg[model.history.best_n_trees]
    print(f"{len(model.trees)} trees, validation mean DCG@{args.k} {best:.6f} -> {args.out}")


def cmd_rank(args) -> None:
    model = gbdt.load_model(args.model)
    fs = load_feature_file(args.features)
    scores = model.predict_matrix(fs.X)
    rows = zip(fs.qids.tolist(), fs.doc_index.tolist(), scores.tolist())
    pipeline.atomic_write(args.out, evaluation.format_scores(rows))
    print(f"{len(fs)} scores -> {args.out}")


def cmd_evaluate(args) -> None:
    with open(args.scores, encoding="utf-8") as fh:
        scores = evaluation.read_scores(fh)
    records, _ = pipeline.prepare(corpus.read_records(args.annotation, "annotation"))
    lists = evaluation.rank_per_query(scores, pipeline.grades_of(records))
    value = evaluation.mean_dcg(lists, _dcg_config(args))
    line = f"mean_dcg@{args.k}\t{value!r}\n"
    if args.out:
        pipeline.atomic_write(args.out, line)
    sys.stdout.write(line)


def cmd_ablate(args) -> None:
    train = load_feature_file(args.train)
    valid = _valid_split(args)
    specs = [s.strip() for s in args.subsets.split(";") if s.strip()]
    rows = ablation.ablate(train, valid, specs, _train_config(args), args.threads)
    text = ablation.format_ablation(rows)
    pipeline.atomic_write(args.out, text)
    sys.stdout.write(text)


def cmd_subsample(args) -> None:
    valid = evaluation.load_embeddings(args.valid_embeddings)
    test = evaluation.load_embeddings(args.test_embeddings)
    kept = evaluation.subsample_validation(valid, test, args.fraction)
    ordered = sorted(kept, key=evaluation._qid_sort_key)
    pipeline.atomic_write(args.out, "".join(f"{q}\n" for q in ordered))
    print(f"kept {len(kept)} of {len(valid)} validation queries -> {args.out}")


# ---------------------------------------------------------------------------
# parser


def _add_corpus_inputs(p) -> None:
    p.add_argument("--train", action="append", metavar="TSV", help="click-log records (train schema); repeatable")
    p.add_argument("--annotation", action="append", metavar="TSV", help="annotated records; repeatable")


def _add_dcg(p) -> None:
    p.add_argument("--k", type=int, default=10, help="DCG cutoff")
    p.add_argument("--gain", choices=("linear", "exponential"), default="linear", help="DCG gain function")


def _add_gbdt(p) -> None:
    d = gbdt.TrainConfig()
    p.add_argument("--n-trees", type=int, default=d.n_trees)
    p.add_argument("--max-depth", type=int, default=d.max_depth)
    p.add_argument("--min-samples-leaf", type=int, default=d.min_samples_leaf)
    p.add_argument("--shrinkage", type=float, default=d.shrinkage)
    p.add_argument("--feature-subsample", type=float, default=d.feature_subsample)
    p.add_argument("--row-subsample", type=float, default=d.row_subsample)
    p.add_argument("--patience", type=int, default=d.patience, help="trees without validation DCG gain before stopping")
    p.add_argument("--valid-qids", metavar="FILE", help="restrict the validation split to these qids (see subsample)")
    _add_dcg(p)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="ltrkit", description=__doc__.splitlines()[0], formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, formatter_class=fmt)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="seed for all randomness")
        p.add_argument(
            "--threads",
            type=int,
            default=None,
            help=f"worker threads (results do not depend on it); env {THREADS_ENV}, else CPU count",
        )
        return p

    p = command("synth", cmd_synth, "write the synthetic demo corpus")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(seed=synthetic.SynthConfig().seed)

    p = command("derive-stopwords", cmd_derive_stopwords, "top-k title+content tokens by frequency")
    _add_corpus_inputs(p)
    p.add_argument("--k", type=int, default=50, help="stopword count")
    p.add_argument("--out", required=True)

    p = command("build-stats", cmd_build_stats, "collection statistics for all field views")
    _add_corpus_inputs(p)
    p.add_argument("--stopwords", help="stopword file (one token per line); empty set if omitted")
    p.add_argument("--out", required=True)

    p = command("extract", cmd_extract, "write a LETOR feature file for one record file")
    p.add_argument("--input", required=True, metavar="TSV")
    p.add_argument("--schema", choices=sorted(corpus.SCHEMAS), default="annotation")
    p.add_argument("--stats", required=True)
    p.add_argument("--features", default="2-24", help="feature ids, e.g. 2-13,15-20")
    p.add_argument("--k1", type=float, default=Bm25Params().k1, help="BM25 term saturation")
    p.add_argument("--b", type=float, default=Bm25Params().b, help="BM25 length normalization")
    p.add_argument("--mu", type=float, default=ExtractConfig().mu, help="Dirichlet prior for query likelihood")
    p.add_argument("--click-model", help="click scorer file providing feature 1")
    p.add_argument("--external-scores", help="qid/doc/score TSV providing feature 1")
    p.add_argument("--remap-out", help="also write the qid remapping table here")
    p.add_argument("--out", required=True)

    p = command("train-click", cmd_train_click, "fit the logistic click scorer on a click-labelled feature file")
    p.add_argument("--train", required=True, metavar="FEATURES")
    p.add_argument("--features", default=None, help="feature ids to use (default: all populated except 1)")
    p.add_argument("--learning-rate", type=float, default=click_model.ClickTrainConfig().learning_rate)
    p.add_argument("--epochs", type=int, default=click_model.ClickTrainConfig().epochs)
    p.add_argument("--batch-size", type=int, default=0, help="0 = full batch")
    p.add_argument("--out", required=True)

    p = command("train-gbdt", cmd_train_gbdt, "fit the boosted tree ensemble with DCG-based truncation")
    p.add_argument("--train", required=True, metavar="FEATURES")
    p.add_argument("--valid", required=True, metavar="FEATURES")
    p.add_argument("--features", default=None, help="feature ids to use (default: all populated)")
    _add_gbdt(p)
    p.add_argument("--out", required=True)

    p = command("rank", cmd_rank, "score a feature file with a fitted ensemble")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True, metavar="FEATURES")
    p.add_argument("--out", required=True)

    p = command("evaluate", cmd_evaluate, "mean DCG of a score file against an annotation file")
    p.add_argument("--scores", required=True)
    p.add_argument("--annotation", required=True, metavar="TSV")
    _add_dcg(p)
    p.add_argument("--out", default=None)

    p = command("ablate", cmd_ablate, "fit one ensemble per feature subset and tabulate validation DCG")
    p.add_argument("--train", required=True, metavar="FEATURES")
    p.add_argument("--valid", required=True, metavar="FEATURES")
    p.add_argument("--subsets", default=";".join(ablation.DEFAULT_SUBSETS), help="';'-separated feature specs")
    _add_gbdt(p)
    p.add_argument("--out", required=True)

    p = command("subsample", cmd_subsample, "keep validation queries most similar to the test queries")
    p.add_argument("--valid-embeddings", required=True)
    p.add_argument("--test-embeddings", required=True)
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--out", required=True)
    return parser


def _failing_module(exc: BaseException) -> str:
    pkg_dir = Path(__file__).parent
    name = "cli"
    for frame in traceback.extract_tb(exc.__traceback__):
        path = Path(frame.filename)
        if path.parent == pkg_dir and path.stem != "cli":
            name = path.stem
    return name


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is None:
        args.threads = _default_threads()
    try:
        args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"ltrkit {args.command}: error [{_failing_module(exc)}]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
