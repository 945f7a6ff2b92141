import math
import random
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import rec
from ltrkit import features as F
from ltrkit.corpus import StopwordSet, derive_stopwords
from ltrkit.features import Bm25Params, ExtractConfig, FeatureError, FeatureId, FeatureVector
from ltrkit.stats import FieldView, build_stats

WORDS = [f"w{i}" for i in range(30)]
small_docs = st.lists(st.sampled_from(WORDS[:8]), max_size=30)
small_queries = st.lists(st.sampled_from(WORDS[:8]), min_size=1, max_size=5)


def synthetic(seed, n_docs=20, n_queries=5):
    rng = random.Random(seed)
    records = [
        rec(
            "w1",
            " ".join(rng.choices(WORDS, k=rng.randint(1, 5))),
            " ".join(rng.choices(WORDS, k=rng.randint(5, 25))),
            freq_bucket=rng.randint(0, 3),
        )
        for _ in range(n_docs)
    ]
    queries = [rng.sample(WORDS, rng.randint(1, 4)) + ["unseen"] * (i % 2) for i in range(n_queries)]
    return records, queries


class TestBm25:
    def test_no_match_is_zero(self):
        s = build_stats([rec("q", "a b"), rec("q", "c")])
        assert F.bm25(["z"], ["a", "b"], s) == 0.0

    def test_single_doc_closed_form(self):
        s = build_stats([rec("q", "a")])
        # N=1, df=1, tf=1, |d|=avgdl: idf = ln(0.5/1.5 + 1), tf part = 2.6/2.6
        assert F.bm25(["a"], ["a"], s, params=Bm25Params(1.6, 0.87)) == pytest.approx(math.log(4 / 3), abs=1e-15)

    @pytest.mark.parametrize("params", [Bm25Params(1.2, 0.75), Bm25Params(1.6, 0.87), Bm25Params(1.6, 0.86)])
    def test_matches_oracle(self, params):
        records, queries = synthetic(0)
        s = build_stats(records)
        brute = oracles.BruteCorpus([list(r.text) for r in records])
        for q in queries:
            for r in records:
                expected = oracles.bm25(q, list(r.text), brute, params.k1, params.b)
                assert abs(F.bm25(q, r.text, s, FieldView.CONCAT, params) - expected) <= 1e-9

    def test_defaults(self):
        assert Bm25Params() == Bm25Params(1.6, 0.87)

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            Bm25Params(0.0, 0.5)
        with pytest.raises(ValueError):
            Bm25Params(1.0, 1.5)

    def test_empty_view_errors(self):
        s = build_stats([rec("q", "", "a")])
        with pytest.raises(FeatureError, match="empty collection view"):
            F.bm25(["a"], [], s, FieldView.TITLE)

    @given(st.integers(1, 20))
    def test_monotone_in_tf(self, extra):
        records, _ = synthetic(1)
        s = build_stats(records)
        doc = list(records[0].text)
        base = F.bm25(["w3"], doc + ["w3"], s)
        more = F.bm25(["w3"], doc + ["w3"] * (1 + extra), s)
        assert more >= base


class TestQueryLikelihood:
    def test_saturated(self):
        s = build_stats([rec("q", "a")])
        assert F.query_likelihood(["a"], ["a"], s, mu=2000) == 0.0

    def test_unseen_term_floor(self):
        s = build_stats([rec("q", "a b")])
        v = F.query_likelihood(["zz", "zz"], ["a", "b"], s, mu=10)
        assert math.isfinite(v) and v < 0
        assert v == pytest.approx(2 * math.log(10 * (1 / 4) / 12))

    def test_matches_oracle(self):
        records, queries = synthetic(2)
        s = build_stats(records)
        brute = oracles.BruteCorpus([list(r.text) for r in records])
        for mu in (2000.0, 50.0):
            for q in queries:
                for r in records:
                    expected = oracles.ql(q, list(r.text), brute, mu)
                    assert abs(F.query_likelihood(q, r.text, s, FieldView.CONCAT, mu) - expected) <= 1e-9

    def test_empty_collection_errors(self):
        s = build_stats([rec("q")])
        with pytest.raises(FeatureError):
            F.query_likelihood(["a"], [], s)


class TestProximity:
    def test_prox1_single_pair(self):
        assert F.prox_1(["a", "b"], ["a", "x", "b"]) == 2.0

    def test_prox1_sentinel(self):
        assert F.prox_1(["a", "b"], ["c", "c"]) == 2.0

    def test_prox2(self):
        assert F.prox_2(["a"], ["a", "x", "a"]) == 2.0
        assert F.prox_2(["a"], ["x", "y", "z", "w"]) == 5.0

    def test_windows_inclusive(self):
        d5 = ["a", "x", "x", "x", "x", "b"]
        d6 = ["a", "x", "x", "x", "x", "x", "b"]
        assert (F.prox_3(["a", "b"], d5), F.prox_4(["a", "b"], d5)) == (1.0, 1.0)
        assert (F.prox_3(["a", "b"], d6), F.prox_4(["a", "b"], d6)) == (0.0, 1.0)

    def test_random_docs_match_exhaustive_oracle(self):
        rng = random.Random(4)
        for _ in range(300):
            doc = rng.choices(WORDS[:10], k=30)
            q = rng.sample(WORDS[:12], rng.choice([3, 4]))
            assert F.prox_1(q, doc) == oracles.prox1(q, doc)
            assert F.prox_2(q, doc) == oracles.prox2(q, doc)
            assert F.prox_3(q, doc) == oracles.prox_window(q, doc, 5)
            assert F.prox_4(q, doc) == oracles.prox_window(q, doc, 10)

    @given(small_queries, small_docs)
    def test_window_counts_bounded(self, q, doc):
        n_pairs = len(list(combinations(set(q), 2)))
        assert F.prox_3(q, doc) <= F.prox_4(q, doc) <= n_pairs

    @given(small_queries, small_docs)
    def test_empty_stopwords_identity(self, q, doc):
        empty = StopwordSet.empty()
        for base, lifted in [
            (F.prox_1, F.prox_1_nonstop),
            (F.prox_2, F.prox_2_nonstop),
            (F.prox_3, F.prox_3_nonstop),
            (F.prox_4, F.prox_4_nonstop),
        ]:
            assert lifted(q, doc, empty) == base(q, doc)


class TestNonstop:
    def test_query_all_stopwords(self):
        stops = StopwordSet(frozenset({"a", "b"}), 2)
        doc = ["a", "c", "b", "d"]
        assert F.prox_1_nonstop(["a", "b"], doc, stops) == 2.0  # |filtered doc|
        assert F.prox_2_nonstop(["a", "b"], doc, stops) == 3.0
        assert F.prox_3_nonstop(["a", "b"], doc, stops) == 0.0
        s = build_stats([rec("q", "a c b d")], stops)
        assert F.bm25_nonstop(["a", "b"], doc, s) == 0.0
        assert F.ql_nonstop(["a", "b"], doc, s) == 0.0

    def test_bm25_ql_empty_stops_equal_plain(self):
        records, queries = synthetic(5)
        s = build_stats(records)
        for q in queries:
            for r in records:
                assert F.bm25_nonstop(q, r.text, s) == F.bm25(q, r.text, s)
                assert F.ql_nonstop(q, r.text, s) == F.query_likelihood(q, r.text, s)

    @pytest.mark.parametrize("seed", [6, 7, 8])
    def test_matches_filter_then_score_oracle(self, seed):
        records, queries = synthetic(seed)
        stops = derive_stopwords(records, 5)
        s = build_stats(records, stops)
        filtered = [oracles.drop(list(r.text), stops.terms) for r in records]
        brute = oracles.BruteCorpus(filtered)
        for q in queries:
            fq = oracles.drop(q, stops.terms)
            for r, doc in zip(records, filtered):
                assert abs(F.bm25_nonstop(q, r.text, s) - oracles.bm25(fq, doc, brute, 1.6, 0.87)) <= 1e-9
                assert abs(F.ql_nonstop(q, r.text, s) - oracles.ql(fq, doc, brute, 2000.0)) <= 1e-9
                assert F.prox_1_nonstop(q, r.text, stops) == oracles.prox1(fq, doc)
                assert F.prox_2_nonstop(q, r.text, stops) == oracles.prox2(fq, doc)
                assert F.prox_3_nonstop(q, r.text, stops) == oracles.prox_window(fq, doc, 5)
                assert F.prox_4_nonstop(q, r.text, stops) == oracles.prox_window(fq, doc, 10)


class TestTfIdf:
    def test_absent_term_conventions(self):
        s = build_stats([rec("q", "a"), rec("q", "b")])
        assert F.tf_score(["zz"], ["a"]) == 0.0
        assert F.idf_score(["zz"], s) == pytest.approx(math.log(4))
        assert F.tf_idf(["zz"], ["a"], s) == 0.0

    def test_closed_form(self):
        records = [rec("q", "t x") for _ in range(5)] + [rec("q", "y") for _ in range(5)]
        s = build_stats(records)
        assert s.n_docs == 10 and s.df("t") == 5
        assert F.tf_idf(["t"], ["t", "t", "t"], s) == pytest.approx(math.log(4) * math.log(2), abs=1e-15)

    def test_matches_oracle(self):
        records, queries = synthetic(9)
        s = build_stats(records)
        brute = oracles.BruteCorpus([list(r.text) for r in records])
        for q in queries:
            assert abs(F.idf_score(q, s) - oracles.idf(q, brute)) <= 1e-9
            for r in records:
                assert abs(F.tf_score(q, r.text) - oracles.tf(q, list(r.text))) <= 1e-9
                assert abs(F.tf_idf(q, r.text, s) - oracles.tf_idf(q, list(r.text), brute)) <= 1e-9

    def test_idf_unchanged_when_corpus_duplicated(self):
        records, queries = synthetic(10)
        once, twice = build_stats(records), build_stats(records + records)
        for q in queries:
            known = [t for t in q if once.df(t) > 0]
            assert F.idf_score(known, twice) == pytest.approx(F.idf_score(known, once), abs=1e-12)


class TestLengthFeatures:
    def test_counts(self):
        r = rec("a b", "t", "")
        assert F.length_features(r) == (2, 1, 0)

    def test_freq_bucket(self):
        assert F.query_freq(rec("a", freq_bucket=3)) == 3
        assert F.query_freq(rec("a")) == -1


class TestFeatureSpec:
    def test_parse(self):
        ids = F.parse_feature_spec("2-13,15-20")
        assert len(ids) == 18 and FeatureId.PROX_3_NONSTOP not in ids

    def test_round_trip(self):
        for spec in ["2", "1-10", "2-6,8-13,15-20", "2-13,15-16,22"]:
            assert F.format_feature_spec(F.parse_feature_spec(spec)) == spec

    @pytest.mark.parametrize("bad", ["0", "25", "3-2", "a", ""])
    def test_reject(self, bad):
        with pytest.raises(ValueError):
            F.parse_feature_spec(bad)

    def test_names_follow_table(self):
        assert [FeatureId(i).label for i in (1, 2, 12, 21, 24)] == [
            "cross_encoder", "bm25", "prox-1-nonstop", "bm25-bigram", "ql-nonstop",
        ]
        assert len(FeatureId) == 24


class _ConstScorer:
    required = frozenset({FeatureId.BM25})

    def __call__(self, vector, qid, doc_index):
        return 1 / (1 + math.exp(-vector[FeatureId.BM25]))


@pytest.fixture(scope="module")
def corpus(valid_records):
    stops = derive_stopwords(valid_records, 50)
    return valid_records, build_stats(valid_records, stops)


class TestExtract:
    def test_only_enabled_slots(self, corpus):
        records, s = corpus
        v = F.extract(records[0], s, ExtractConfig(enabled=frozenset({3, 4, 5})))
        assert v.mask == {FeatureId(3), FeatureId(4), FeatureId(5)}
        assert np.isnan(np.delete(v.values, [2, 3, 4])).all()

    def test_best_subset_cardinality(self, corpus):
        records, s = corpus
        v = F.extract(records[0], s, ExtractConfig(enabled=F.parse_feature_spec("2-13,15-20")))
        assert len(v.mask) == 18

    def test_slot1_requires_scorer(self, corpus):
        records, s = corpus
        with pytest.raises(FeatureError) as err:
            F.extract(records[0], s, ExtractConfig(enabled=F.ALL_FEATURES))
        assert err.value.feature == FeatureId.CROSS_ENCODER

    def test_scorer_inputs_computed_but_not_emitted(self, corpus):
        records, s = corpus
        v = F.extract(records[0], s, ExtractConfig(enabled=frozenset({1, 3}), click_scorer=_ConstScorer()))
        assert v.mask == {FeatureId(1), FeatureId(3)}
        assert v[1] == pytest.approx(1 / (1 + math.exp(-F.bm25(records[0].query, records[0].text, s))))

    def test_every_slot_equals_standalone_operation(self, corpus):
        records, s = corpus
        stops = s.stopwords
        cfg = ExtractConfig(enabled=F.ALL_FEATURES, click_scorer=_ConstScorer())
        for r in records[:40]:
            v = F.extract(r, s, cfg)
            q, text = r.query, r.text
            expected = {
                1: _ConstScorer()(FeatureVector.from_mapping({2: F.bm25(q, text, s)}), r.qid, 0),
                2: F.bm25(q, text, s),
                3: len(r.query), 4: len(r.title), 5: len(r.content), 6: F.query_freq(r),
                7: F.query_likelihood(q, text, s),
                8: F.prox_1(q, text), 9: F.prox_2(q, text), 10: F.prox_3(q, text), 11: F.prox_4(q, text),
                12: F.prox_1_nonstop(q, text, stops), 13: F.prox_2_nonstop(q, text, stops),
                14: F.prox_3_nonstop(q, text, stops), 15: F.prox_4_nonstop(q, text, stops),
                16: F.tf_idf(q, text, s), 17: F.tf_score(q, text), 18: F.idf_score(q, s),
                19: F.bm25(q, r.title, s, FieldView.TITLE), 20: F.bm25(q, r.content, s, FieldView.CONTENT),
                21: F.bm25(F.bigrams(q), F.bigrams(text), s, FieldView.CONCAT_BIGRAM),
                22: F.query_likelihood(F.bigrams(q), F.bigrams(text), s, FieldView.CONCAT_BIGRAM),
                23: F.bm25_nonstop(q, text, s), 24: F.ql_nonstop(q, text, s),
            }
            assert v.to_dict() == {FeatureId(k): float(x) for k, x in expected.items()}

    def test_pure_and_finite(self, corpus):
        records, s = corpus
        cfg = ExtractConfig()
        for r in records:
            a, b = F.extract(r, s, cfg), F.extract(r, s, cfg)
            assert a == b
            assert np.isfinite(a.values[1:]).all()

    def test_prerequisite_error_names_feature(self):
        s = build_stats([rec("q", "", "a b")])
        with pytest.raises(FeatureError) as err:
            F.extract(rec("a", "", "a b"), s, ExtractConfig(enabled=frozenset({19})))
        assert err.value.feature == FeatureId.BM25_TITLE


@settings(max_examples=50)
@given(st.dictionaries(st.integers(1, 24), st.floats(-1e6, 1e6), min_size=1))
def test_vector_mapping_round_trip(values):
    v = FeatureVector.from_mapping(values)
    assert {int(k): x for k, x in v.to_dict().items()} == values
