"""Benchmark harness tests: runs, comparison, artifacts, determinism."""

from __future__ import annotations

import json

import pytest

from conftest import BENCHMARK_PATH, CORPUS_DIR
from filingqa import engine
from filingqa.agent import AgentConfig
from filingqa.corpus import ChunkingConfig
from filingqa.evalkit import load_benchmark
from filingqa.node_tree import parse_tree
from filingqa.providers import PHASE_PREPROCESSING
from filingqa.providers.mocks import OracleScorer
from filingqa.rerank import RerankConfig


@pytest.fixture(scope="module")
def corpus_data():
    return engine.load_corpus(CORPUS_DIR, ChunkingConfig(chunk_size=64, overlap=8))


@pytest.fixture(scope="module")
def questions():
    return load_benchmark(BENCHMARK_PATH)


def test_load_corpus_reads_all_fixture_documents(corpus_data):
    assert sorted(corpus_data.documents) == [
        "acme-10k-2023",
        "acme-10q-2024q1",
        "bolt-8k-2024",
    ]
    assert corpus_data.errors == []
    assert len(corpus_data.store) == len(corpus_data.chunks)


def test_corpus_manifest_contents(corpus_data):
    manifest = engine.corpus_manifest(corpus_data)
    by_id = {d["doc_id"]: d for d in manifest["documents"]}
    assert by_id["acme-10k-2023"]["pages"] == 8
    assert by_id["bolt-8k-2024"]["form_type"] == "8-K"
    assert by_id["acme-10k-2023"]["tokens"] > 0


def test_embedding_phase_is_preprocessing(corpus_data):
    bundle = engine.build_mock_providers(seed=0)
    engine.embed_corpus(corpus_data, bundle.embedder)
    entries = bundle.transcripts.entries()
    assert entries
    assert all(e.phase == PHASE_PREPROCESSING for e in entries)


def test_build_trees_deterministic_round_trips(corpus_data):
    trees = engine.build_trees(corpus_data, llm=None, deterministic=True)
    assert sorted(trees) == sorted(corpus_data.documents)
    for doc_id, (tree, report) in trees.items():
        reparsed = parse_tree(tree.to_json(), corpus_data.documents[doc_id].page_count)
        assert reparsed.to_dict() == tree.to_dict()
        assert report.total_tokens == 0


def run_vector(corpus_data, questions, seed=0, oracle=False):
    bundle = engine.build_mock_providers(seed=seed)
    index = engine.embed_corpus(corpus_data, bundle.embedder)
    res = engine.make_agent_resources(
        bundle,
        index=index,
        store=corpus_data.store,
        documents=corpus_data.documents,
        rerank_cfg=RerankConfig(20, 5),
    )
    if oracle:
        res.scorer = OracleScorer(
            corpus_data.store,
            {q.question: (q.doc_id, q.gold_pages) for q in questions},
            clock=bundle.clock,
        )
    cfg = AgentConfig(stages=("hybrid", "rerank"), retrieval_k=5)
    return engine.run_benchmark(
        questions,
        cfg,
        res,
        seed=seed,
        config={"arch": "vector", "seed": seed},
        architecture="vector",
        transcripts=bundle.transcripts,
    )


def run_tree(corpus_data, questions, seed=0):
    bundle = engine.build_mock_providers(seed=seed)
    trees = engine.build_trees(
        corpus_data, llm=None, deterministic=True, with_summaries=True
    )
    res = engine.make_agent_resources(
        bundle,
        store=corpus_data.store,
        trees={d: t for d, (t, _) in trees.items()},
        documents=corpus_data.documents,
    )
    cfg = AgentConfig(stages=("tree_traverse",), max_corrective_rounds=0)
    return engine.run_benchmark(
        questions,
        cfg,
        res,
        seed=seed,
        config={"arch": "tree", "seed": seed},
        architecture="tree",
        transcripts=bundle.transcripts,
    )


def test_oracle_scored_benchmark_reaches_perfect_mrr(corpus_data, questions):
    report, answers = run_vector(corpus_data, questions, oracle=True)
    assert report.aggregates["mrr"] == pytest.approx(1.0)
    assert report.aggregates["failures"] == 0
    assert len(answers) == len(questions)


def test_run_report_category_breakdown(corpus_data, questions):
    report, _ = run_vector(corpus_data, questions)
    assert report.aggregates["by_category"] == {
        "multi-hop": 3,
        "single-hop": 5,
        "summary": 2,
    }


def test_run_report_question_records_have_metrics(corpus_data, questions):
    report, _ = run_vector(corpus_data, questions)
    rec = report.questions[0]
    assert rec["id"] == "q01"
    assert rec["first_relevant_rank"] == 1
    assert 0.0 <= rec["recall_at_5"] <= 1.0
    assert rec["error"] is None
    assert "hybrid" in rec["stage_durations"]


def test_seeded_runs_are_byte_identical(corpus_data, questions):
    r1, _ = run_vector(corpus_data, questions, seed=5)
    r2, _ = run_vector(corpus_data, questions, seed=5)
    assert r1.to_json() == r2.to_json()


def test_per_question_failures_recorded_and_run_continues(corpus_data, questions):
    bundle = engine.build_mock_providers(seed=0)
    index = engine.embed_corpus(corpus_data, bundle.embedder)
    res = engine.make_agent_resources(
        bundle, index=index, store=corpus_data.store, documents=corpus_data.documents
    )
    real_embed = res.embedder.embed
    calls = {"n": 0}

    def sometimes_broken(texts):
        calls["n"] += 1
        if calls["n"] == 1:
            raise RuntimeError("embedder outage")
        return real_embed(texts)

    res.embedder.embed = sometimes_broken
    report, answers = engine.run_benchmark(
        questions[:3],
        AgentConfig(stages=("hybrid",)),
        res,
        seed=0,
        config={},
        architecture="vector",
        transcripts=bundle.transcripts,
    )
    assert report.aggregates["failures"] == 1
    assert answers[0] is None
    assert "embedder outage" in report.questions[0]["error"]
    assert report.questions[1]["error"] is None


def test_compare_architectures_produces_complementary_win_rates(corpus_data, questions):
    report_v, answers_v = run_vector(corpus_data, questions)
    report_t, answers_t = run_tree(corpus_data, questions)
    bundle = engine.build_mock_providers(seed=0)
    combined = engine.compare_architectures(
        questions, report_v, answers_v, report_t, answers_t, bundle.judge
    )
    assert combined.architecture == "both"
    overall = combined.comparison["overall"]
    assert overall["vector"]["rate"] + overall["tree"]["rate"] == pytest.approx(1.0)
    assert set(combined.comparison["per_criterion"]) == {
        "accuracy", "completeness", "clarity", "conciseness", "relevance", "style",
    }
    assert combined.comparison["judged_pairs"] == len(questions)
    # two verdicts per question, one per presentation order
    per_q = combined.comparison["per_question"][0]
    assert len(per_q["verdicts"]) == 2
    assert per_q["verdicts"][0]["order_swapped"] is False
    assert per_q["verdicts"][1]["order_swapped"] is True


def test_file_checksum_is_sha256(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"abc")
    assert engine.file_checksum(p) == (
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    )


def test_tick_clock_makes_latency_aggregates_deterministic(corpus_data, questions):
    r1, _ = run_tree(corpus_data, questions, seed=1)
    r2, _ = run_tree(corpus_data, questions, seed=1)
    assert json.dumps(r1.aggregates["latency"], sort_keys=True) == json.dumps(
        r2.aggregates["latency"], sort_keys=True
    )
    assert isinstance(r1.aggregates["latency"]["end_to_end"]["p95"], float)


def test_compare_skips_questions_with_missing_answers(corpus_data, questions):
    report_v, answers_v = run_vector(corpus_data, questions[:2])
    report_t, answers_t = run_tree(corpus_data, questions[:2])
    answers_t[0] = None  # simulate a failed tree run for q01
    bundle = engine.build_mock_providers(seed=0)
    combined = engine.compare_architectures(
        questions[:2], report_v, answers_v, report_t, answers_t, bundle.judge
    )
    assert combined.comparison["judged_pairs"] == 1
    assert combined.comparison["per_question"][0]["verdicts"] is None
    assert combined.comparison["per_question"][1]["verdicts"] is not None
