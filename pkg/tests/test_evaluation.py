import json
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rankqa.corpus import read_qrels
from rankqa.evaluation import (DimensionMismatch, EmbeddingTable, EvalReport, NoJudgments, bleu_n, evaluate_qa,
                               evaluate_run, lcs_length, normalize_answer, qa_metrics, qa_tokens,
                               read_predictions, recall_at_n, reciprocal_rank_at_n, render_qa_table,
                               render_ranking_table, rouge_l, semantic_similarity, token_prf)
from rankqa.fullranker import read_run

from conftest import FIXTURES

PAIRS = json.loads((FIXTURES / "qa_metric_pairs.json").read_text(encoding="utf-8"))


def test_rr_examples():
    assert reciprocal_rank_at_n(["a", "b"], {"a"}, 10) == 1.0
    assert reciprocal_rank_at_n(["x", "y", "a"], {"a"}, 10) == pytest.approx(1 / 3)
    assert reciprocal_rank_at_n([f"x{i}" for i in range(10)] + ["a"], {"a"}, 10) == 0.0


def test_recall_examples():
    assert recall_at_n(["x", "a"], {"a"}, 10) == 1.0
    assert recall_at_n(["a", "x"], {"a", "b"}, 10) == 0.5
    assert recall_at_n(["x"], {"a"}, 10) == 0.0
    with pytest.raises(NoJudgments):
        recall_at_n(["a"], set(), 10)


def test_n_must_be_positive():
    with pytest.raises(ValueError):
        reciprocal_rank_at_n(["a"], {"a"}, 0)


def test_evaluate_run_example():
    run = {"q1": ["a", "x"], "q2": ["x", "y", "b"], "q3": ["x", "y"]}
    qrels = {"q1": {"a"}, "q2": {"b"}, "q3": {"c"}}
    report = evaluate_run(run, qrels, [10])
    assert report.aggregate["mrr@10"] == pytest.approx(4 / 9, rel=1e-12)
    assert report.aggregate["recall@10"] == pytest.approx(2 / 3, rel=1e-12)
    assert (report.evaluated, report.skipped) == (3, 0)


def test_evaluate_run_skips_unjudged():
    report = evaluate_run({"q1": ["a"], "zz": ["a"]}, {"q1": {"a"}}, [1])
    assert (report.evaluated, report.skipped) == (1, 1)
    assert "zz" not in report.per_query


def test_query_ids_count_missing_queries_as_misses():
    run = {"q1": ["a"]}
    qrels = {"q1": {"a"}, "q2": {"b"}, "q3": {"c"}}
    assert evaluate_run(run, qrels, [10]).evaluated == 1
    report = evaluate_run(run, qrels, [10], query_ids=["q2", "q1", "q9"])
    assert list(report.per_query) == ["q2", "q1"]
    assert report.aggregate["mrr@10"] == 0.5
    assert report.skipped == 1


def test_frozen_run_fixture():
    expected = json.loads((FIXTURES / "eval" / "expected_report.json").read_text())
    run = read_run(FIXTURES / "eval" / "run.txt")
    qrels = read_qrels(FIXTURES / "eval" / "qrels.txt")
    report = evaluate_run(run, qrels, expected["n_values"])
    assert report.evaluated == expected["evaluated"] and report.skipped == expected["skipped"]
    for qid, values in expected["per_query"].items():
        for name, value in values.items():
            assert report.per_query[qid][name] == pytest.approx(value, abs=1e-12)
    for name, value in expected["aggregate"].items():
        assert report.aggregate[name] == pytest.approx(value, rel=1e-12)


def random_run(rng):
    run, qrels = {}, {}
    for q in range(rng.randint(1, 20)):
        pool = [f"p{i}" for i in range(50)]
        run[f"q{q}"] = rng.sample(pool, rng.randint(0, 50))
        qrels[f"q{q}"] = set(rng.sample(pool, rng.randint(1, 4)))
    return run, qrels


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32))
def test_ranking_invariants(seed):
    run, qrels = random_run(random.Random(seed))
    ns = [1, 3, 5, 10, 20, 50, 100]
    report = evaluate_run(run, qrels, ns)
    for values in list(report.per_query.values()) + [report.aggregate]:
        for lo, hi in zip(ns, ns[1:]):
            assert values[f"recall@{lo}"] <= values[f"recall@{hi}"]
            assert values[f"mrr@{lo}"] <= values[f"mrr@{hi}"]
    for values in report.per_query.values():
        for n in ns:
            hit = 1.0 if values[f"recall@{n}"] > 0 else 0.0
            assert values[f"mrr@{n}"] <= hit
            assert 0 <= values[f"mrr@{n}"] <= 1 and 0 <= values[f"recall@{n}"] <= 1
    for name, mean in report.aggregate.items():
        expected = math.fsum(v[name] for v in report.per_query.values()) / len(report.per_query)
        assert mean == pytest.approx(expected, rel=1e-12)


def test_mrr_can_exceed_recall_with_several_relevant():
    # the first hit sets RR@1 = 1 while only one of three relevant passages is found
    report = evaluate_run({"q": ["a", "x"]}, {"q": {"a", "b", "c"}}, [1])
    assert report.aggregate["mrr@1"] == 1.0
    assert report.aggregate["recall@1"] == pytest.approx(1 / 3)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32))
def test_mrr_bounded_by_recall_with_single_relevant(seed):
    rng = random.Random(seed)
    pool = [f"p{i}" for i in range(50)]
    run = {f"q{q}": rng.sample(pool, rng.randint(0, 50)) for q in range(rng.randint(1, 20))}
    qrels = {qid: {rng.choice(pool)} for qid in run}
    agg = evaluate_run(run, qrels, [1, 5, 10, 100]).aggregate
    for n in (1, 5, 10, 100):
        assert agg[f"mrr@{n}"] <= agg[f"recall@{n}"]


def test_report_round_trip():
    report = evaluate_run({"q1": ["a"]}, {"q1": {"a"}}, [1, 10])
    back = EvalReport.from_dict(json.loads(report.to_json()))
    assert back == report
    assert list(report.aggregate) == ["mrr@1", "mrr@10", "recall@1", "recall@10"]


def test_normalization():
    assert normalize_answer("The  Cat, sat!  “quoted” an apple") == "cat sat quoted apple"
    assert qa_tokens("A.") == []


@pytest.mark.parametrize("index", range(len(PAIRS)))
def test_metric_fixture(index):
    row = PAIRS[index]
    pred, refs = row["prediction"], row["references"]
    for n in range(1, 5):
        assert bleu_n(pred, refs, n) == pytest.approx(row[f"bleu{n}"], abs=1e-6)
    assert rouge_l(pred, refs) == pytest.approx(row["rouge_l"], abs=1e-9)
    p, r, f = token_prf(pred, refs)
    assert (p, r, f) == pytest.approx((row["precision"], row["recall"], row["f1"]), abs=1e-9)


def test_fixture_has_enough_pairs():
    assert len(PAIRS) >= 50


def test_identity_scores_one():
    for text in ("Tristesse is a French word meaning sadness.", "x", "covid 19 virus"):
        values = qa_metrics(text, [text])
        assert all(v == pytest.approx(1.0) for v in values.values())


def test_bleu_hand_example_article_free():
    assert bleu_n("x b c", ["x b d"], 1) == pytest.approx(2 / 3)


def test_bleu_hand_example_literal_strips_article():
    # "a" is dropped by normalization, leaving "b c" vs "b d"
    assert bleu_n("a b c", ["a b d"], 1) == pytest.approx(1 / 2)


def test_rouge_hand_examples():
    assert rouge_l("my cat sat", ["my cat ran"]) == pytest.approx(2 / 3)
    assert rouge_l("the cat sat", ["the cat ran"]) == pytest.approx(1 / 2)
    assert rouge_l("same words", ["same words"]) == 1.0
    assert rouge_l("", ["x"]) == 0.0


def test_prf_hand_examples():
    assert token_prf("The cat", ["the cat."]) == (1.0, 1.0, 1.0)
    assert token_prf("x b b", ["b c"]) == pytest.approx((1 / 3, 1 / 2, 0.4))
    assert token_prf("a b b", ["b c"]) == pytest.approx((1 / 2, 1 / 2, 1 / 2))
    assert token_prf("", ["x"]) == (0.0, 0.0, 0.0)


def test_prf_picks_best_reference():
    assert token_prf("cat sat", ["dog", "cat sat mat"])[2] == pytest.approx(0.8)


def test_bleu_empty_prediction():
    assert bleu_n("", ["x"], 4) == 0.0
    with pytest.raises(ValueError):
        bleu_n("x", ["x"], 5)


def test_bleu_brevity_and_closest_reference():
    # closest reference has length 5 (|5-2| beats |9-2|), BP = e^(1-5/2)
    assert bleu_n("x y", ["x y z w v", "x y " + "q " * 7], 1) == pytest.approx(math.exp(1 - 5 / 2))


def test_bleu_k_monotonicity_can_fail():
    # p1 = 2/5 but p2 = 2/4, so the two-order geometric mean exceeds BLEU-1
    pred, ref = "d d b d a", ["b c b d b c"]
    assert bleu_n(pred, ref, 2) > bleu_n(pred, ref, 1)


def test_lcs():
    assert lcs_length(list("abcbdab"), list("bdcaba")) == 4
    assert lcs_length([], list("abc")) == 0


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from("a b c d x y the".split()), max_size=12),
       st.lists(st.sampled_from("a b c d x y the".split()), max_size=12))
def test_bounds_and_symmetry(pred, ref):
    p, r = " ".join(pred), " ".join(ref)
    values = qa_metrics(p, [r])
    assert all(0.0 <= v <= 1.0 for v in values.values())
    assert rouge_l(p, [r]) == pytest.approx(rouge_l(r, [p]), abs=1e-12)
    assert token_prf(p, [r])[2] == pytest.approx(token_prf(r, [p])[2], abs=1e-12)


TOY_TABLE = EmbeddingTable({"cat": [1.0, 0.0, 0.0], "dog": [0.0, 1.0, 0.0], "sat": [1.0, 1.0, 0.0]})


def test_semantic_similarity_toy_table():
    # mean(cat, sat) = (1, .5, 0); dog = (0, 1, 0); cos = .5 / sqrt(1.25) = 1/sqrt(5)
    assert semantic_similarity("cat sat", "dog", TOY_TABLE) == pytest.approx(1 / math.sqrt(5), abs=1e-12)
    assert semantic_similarity("Cat", "the CAT.", TOY_TABLE) == pytest.approx(1.0, abs=1e-9)
    assert semantic_similarity("cat", "dog", TOY_TABLE) == 0.0
    assert semantic_similarity("zebra", "cat", TOY_TABLE) == 0.0
    assert semantic_similarity("", "cat", TOY_TABLE) == 0.0


def test_semantic_similarity_can_be_negative():
    table = EmbeddingTable({"up": [1.0, 0.0], "down": [-1.0, 0.0]})
    assert semantic_similarity("up", "down", table) == -1.0


def test_embedding_load(tmp_path):
    path = tmp_path / "vec.txt"
    path.write_text("2 3\nCat 1 0 0\ndog 0 1 0\n", encoding="utf-8")
    table = EmbeddingTable.load(path)
    assert len(table) == 2 and "cat" in table and table.dim == 3


@pytest.mark.parametrize("content", ["cat 1 0\ndog 0 1 0\n", "cat 1 x\n", "cat\n"])
def test_embedding_load_malformed(tmp_path, content):
    path = tmp_path / "vec.txt"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(DimensionMismatch):
        EmbeddingTable.load(path)


def test_embedding_dimension_mismatch_in_memory():
    with pytest.raises(DimensionMismatch):
        EmbeddingTable({"a": [1, 2], "b": [1]})


def test_evaluate_qa_identity_and_skips():
    answers = {"q1": ["cat sat"], "q2": ["dog"]}
    report = evaluate_qa({"q1": "cat sat", "q2": "dog", "q3": "anything"}, answers, TOY_TABLE)
    assert (report.evaluated, report.skipped) == (2, 1)
    assert all(v == pytest.approx(1.0) for v in report.aggregate.values())
    assert "semantic_sim" in report.aggregate
    assert report.config["bleu_smoothing"] == "epsilon=1e-09"


def test_evaluate_qa_empty():
    report = evaluate_qa({}, {"q1": ["x"]})
    assert report.evaluated == 0 and report.per_query == {}
    assert "semantic_sim" not in report.aggregate


def test_read_predictions(tmp_path):
    path = tmp_path / "pred.tsv"
    path.write_text("q1\tp1\tsome sentence\nq2\t\t\n", encoding="utf-8")
    assert read_predictions(path) == {"q1": "some sentence", "q2": ""}


def test_renderers():
    fr = EvalReport(aggregate={"mrr@10": 0.16, "recall@10": 0.34})
    rr = EvalReport(aggregate={"mrr@10": 0.2, "recall@10": 0.34})
    ranking = render_ranking_table([{"rerank_size": 10, "time_per_query_s": 0.5, "full_rank": fr, "rerank": rr}], [10])
    assert "FR mrr@10" in ranking and "0.16" in ranking and "0.5000" in ranking
    qa = evaluate_qa({"q": "cat"}, {"q": ["cat"]})
    table = render_qa_table([{"rerank_size": 10, "qa": qa}])
    assert "bleu4" in table and "1.00" in table and "semantic_sim" not in table
