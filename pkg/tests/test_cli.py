import contextlib
import io
import os
import subprocess
import sys
from pathlib import Path

import pytest

from e2e import FAST_GBDT, run, run_pipeline
from ltrkit import corpus, evaluation, pipeline, synthetic
from ltrkit.cli import build_parser, main
from ltrkit.featurefile import load_feature_file
from ltrkit.features import FeatureId

SNAPSHOTS = Path(__file__).parent / "snapshots"
COMMANDS = sorted(build_parser()._subparsers._group_actions[0].choices)


def help_text(argv, monkeypatch):
    monkeypatch.setenv("COLUMNS", "100")
    out = io.StringIO()
    with contextlib.redirect_stdout(out), pytest.raises(SystemExit) as exit_:
        main(argv + ["--help"])
    assert exit_.value.code == 0
    return out.getvalue()


@pytest.mark.parametrize("command", [None] + COMMANDS)
def test_help_snapshot(command, monkeypatch):
    argv = [command] if command else []
    expected = (SNAPSHOTS / f"help_{command or 'ltrkit'}.txt").read_text()
    assert help_text(argv, monkeypatch) == expected


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ltrkit", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "build-stats" in proc.stdout


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("pipeline"))


def test_extract_feature_subset(artifacts, data_dir, tmp_path):
    out = tmp_path / "sub.letor"
    run("extract", "--input", data_dir / "valid.tsv", "--stats", artifacts["stats.json"],
        "--features", "2-13,15-20", "--out", out)
    fs = load_feature_file(out)
    assert len(fs.populated()) == 18
    assert FeatureId(14) not in fs.populated() and FeatureId(1) not in fs.populated()


def test_extract_threads_do_not_change_output(artifacts, data_dir, tmp_path):
    outs = []
    for threads in (1, 4):
        out = tmp_path / f"t{threads}.letor"
        run("extract", "--input", data_dir / "dev.tsv", "--stats", artifacts["stats.json"],
            "--click-model", artifacts["click.json"], "--features", "1-24", "--threads", threads, "--out", out)
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_evaluate_matches_module(artifacts, data_dir):
    records, _ = pipeline.prepare(corpus.read_records(data_dir / "test.tsv", "annotation"))
    scores = evaluation.read_scores(artifacts["scores.tsv"].read_text().splitlines())
    expected = evaluation.mean_dcg(evaluation.rank_per_query(scores, pipeline.grades_of(records)))
    assert artifacts["eval.tsv"].read_text() == f"mean_dcg@10\t{expected!r}\n"


def test_scores_cover_every_test_record(artifacts, data_dir):
    n = len(corpus.read_records(data_dir / "test.tsv", "annotation"))
    assert len(artifacts["scores.tsv"].read_text().splitlines()) == n


def test_ablate_command(artifacts, tmp_path):
    out = tmp_path / "ablation.tsv"
    text = run("ablate", "--train", artifacts["dev.letor"], "--valid", artifacts["valid.letor"],
               "--subsets", "2;2-6;1-24", *FAST_GBDT, "--out", out)
    rows = out.read_text().splitlines()
    assert text == out.read_text() and len(rows) == 3
    assert sorted(r.split("\t")[0] for r in rows) == ["1-24", "2", "2-6"]


def test_error_exit_and_no_partial_output(artifacts, data_dir, tmp_path, capsys):
    out = tmp_path / "never.letor"
    code = main(["extract", "--input", str(data_dir / "valid.tsv"), "--stats", str(artifacts["stats.json"]),
                 "--features", "1-3", "--out", str(out)])
    assert code == 1
    err = capsys.readouterr().err
    assert err.startswith("ltrkit extract: error [features]:")
    assert "feature 1" in err
    assert not out.exists() and os.listdir(tmp_path) == []


def test_missing_input_file(tmp_path, capsys):
    assert main(["build-stats", "--train", str(tmp_path / "nope.tsv"), "--out", str(tmp_path / "s.json")]) == 1
    assert "error [corpus]" in capsys.readouterr().err
    assert not (tmp_path / "s.json").exists()


def test_malformed_corpus_names_line(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("q\ta\tb\tc\t1\t\n\nq\ta\tb\tc\t9\t\n")
    assert main(["build-stats", "--annotation", str(bad), "--out", str(tmp_path / "s.json")]) == 1
    err = capsys.readouterr().err
    assert "line 3" in err and "relevance" in err


def test_bundled_corpus_matches_generator(tmp_path, data_dir):
    run("synth", "--out-dir", tmp_path)
    for name in sorted(os.listdir(data_dir)):
        if name.endswith(".tsv"):
            assert (tmp_path / name).read_bytes() == (data_dir / name).read_bytes(), name
    assert synthetic.bundled_corpus_dir() == data_dir
