"""Hybrid index tests against exhaustive-scan and direct-formula oracles."""

from __future__ import annotations

import math
import random
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import one_chunk_per_page
from filingqa.corpus import tokenize
from filingqa.vector_index import (
    DimensionMismatchError,
    DuplicateChunkError,
    EmbeddedChunk,
    MetadataFilter,
    ScoredHit,
    UnknownFilterFieldError,
    VectorIndex,
    as_hits,
    build_index,
)

COMPANIES = ("Acme", "Bolt", "Cray")
FORMS = ("10-K", "10-Q", "8-K")
PERIODS = ("FY2022", "FY2023", "Q1-FY2024")
DATES = ("2022-06-01", "2023-06-01", "2024-03-12")
WORDS = (
    "revenue income margin segment robot conveyor cash guidance patent "
    "backlog quarter services automation outlook expense goodwill"
).split()


def random_unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def make_index(n: int, dim: int = 16, seed: int = 0) -> VectorIndex:
    rng = np.random.default_rng(seed)
    pyrng = random.Random(seed)
    texts = [
        " ".join(pyrng.choice(WORDS) for _ in range(pyrng.randint(3, 12)))
        for _ in range(n)
    ]
    chunks = one_chunk_per_page(f"doc{seed}", texts)
    embedded = [
        EmbeddedChunk(
            chunk=c,
            vector=random_unit(rng, dim),
            metadata={
                "company": pyrng.choice(COMPANIES),
                "form_type": pyrng.choice(FORMS),
                "fiscal_period": pyrng.choice(PERIODS),
                "filing_date": pyrng.choice(DATES),
            },
        )
        for c in chunks
    ]
    return build_index(embedded)


# ---------------------------------------------------------------------------
# Oracles


def dense_oracle(index: VectorIndex, q: np.ndarray, k: int, flt=None) -> list[str]:
    scored = []
    for i, cid in enumerate(index.chunk_ids):
        if flt is not None and not flt.matches(index.metadata[i]):
            continue
        scored.append((cid, float(np.dot(index.vectors[i], q))))
    scored.sort(key=lambda t: (-t[1], t[0]))
    return [cid for cid, _ in scored[:k]]


def bm25_oracle(
    index: VectorIndex, query: str, flt=None, k1: float = 1.2, b: float = 0.75
) -> dict[str, float]:
    """Textbook BM25, evaluated directly from token lists."""
    token_lists = [tokenize(c.text.lower()) for c in index.chunks]
    n = len(token_lists)
    avgdl = sum(map(len, token_lists)) / n
    terms = set(tokenize(query.lower()))

    def idf(term: str) -> float:
        df = sum(1 for toks in token_lists if term in toks)
        return math.log(1 + (n - df + 0.5) / (df + 0.5))

    out: dict[str, float] = {}
    for i, cid in enumerate(index.chunk_ids):
        if flt is not None and not flt.matches(index.metadata[i]):
            continue
        toks = token_lists[i]
        score = 0.0
        for term in sorted(terms):
            tf = toks.count(term)
            if tf:
                score += idf(term) * tf * (k1 + 1) / (
                    tf + k1 * (1 - b + b * len(toks) / avgdl)
                )
        if score > 0:
            out[cid] = score
    return out


# ---------------------------------------------------------------------------
# Construction


def test_empty_index_answers_empty():
    index = build_index([])
    assert index.dense_search(np.zeros(0), 5) == []
    assert index.lexical_search("anything", 5) == []
    assert index.hybrid_search("anything", np.zeros(0), 5) == []


def test_duplicate_chunk_ref_rejected():
    chunks = one_chunk_per_page("d", ["a", "b"])
    vec = np.zeros(4)
    vec[0] = 1.0
    embedded = [
        EmbeddedChunk(chunk=chunks[0], vector=vec, metadata={}),
        EmbeddedChunk(chunk=chunks[0], vector=vec, metadata={}),
    ]
    with pytest.raises(DuplicateChunkError):
        build_index(embedded)


def test_dimension_mismatch_rejected():
    chunks = one_chunk_per_page("d", ["a", "b"])
    v4 = np.zeros(4)
    v4[0] = 1.0
    v8 = np.zeros(8)
    v8[0] = 1.0
    with pytest.raises(DimensionMismatchError):
        build_index(
            [
                EmbeddedChunk(chunk=chunks[0], vector=v4, metadata={}),
                EmbeddedChunk(chunk=chunks[1], vector=v8, metadata={}),
            ]
        )


def test_non_unit_vector_rejected():
    chunks = one_chunk_per_page("d", ["a"])
    with pytest.raises(ValueError):
        EmbeddedChunk(chunk=chunks[0], vector=np.ones(4), metadata={})


# ---------------------------------------------------------------------------
# Dense search


def test_self_similarity_ranks_first():
    index = make_index(50, seed=1)
    q = index.vectors[17].copy()
    hits = index.dense_search(q, 3)
    assert hits[0].chunk_id == index.chunk_ids[17]
    assert hits[0].score == pytest.approx(1.0, abs=1e-6)
    assert hits[0].rank == 1


def test_dense_filter_soundness_on_form_type():
    index = make_index(80, seed=2)
    flt = MetadataFilter(form_type="10-K")
    q = random_unit(np.random.default_rng(5), 16)
    for hit in index.dense_search(q, 20, flt):
        i = index.chunk_ids.index(hit.chunk_id)
        assert index.metadata[i]["form_type"] == "10-K"


def test_dense_matches_exhaustive_scan_on_200_chunks():
    index = make_index(200, seed=3)
    rng = np.random.default_rng(7)
    for _ in range(20):
        q = random_unit(rng, 16)
        got = [h.chunk_id for h in index.dense_search(q, 5)]
        assert got == dense_oracle(index, q, 5)


def test_dense_query_dimension_checked():
    index = make_index(10, seed=4)
    with pytest.raises(DimensionMismatchError):
        index.dense_search(np.zeros(3), 5)


def test_hit_ranks_consecutive_and_scores_non_increasing():
    index = make_index(60, seed=5)
    q = random_unit(np.random.default_rng(1), 16)
    hits = index.dense_search(q, 10)
    assert [h.rank for h in hits] == list(range(1, len(hits) + 1))
    assert all(a.score >= b.score for a, b in zip(hits, hits[1:]))


# ---------------------------------------------------------------------------
# Lexical search


def test_absent_term_returns_empty():
    index = make_index(30, seed=6)
    assert index.lexical_search("zyzzyva", 5) == []


def test_single_document_containing_term_ranks_first():
    chunks = one_chunk_per_page("d", ["the goodwill entry", "other words here"])
    rng = np.random.default_rng(0)
    embedded = [
        EmbeddedChunk(chunk=c, vector=random_unit(rng, 4), metadata={}) for c in chunks
    ]
    index = build_index(embedded)
    hits = index.lexical_search("goodwill", 5)
    assert hits[0].chunk_id == "d:0"
    assert len(hits) == 1


def test_bm25_matches_direct_formula_on_50_chunks():
    index = make_index(50, seed=7)
    for query in ("revenue margin", "patent conveyor backlog", "cash"):
        oracle = bm25_oracle(index, query)
        hits = index.lexical_search(query, 50)
        assert {h.chunk_id for h in hits} == set(oracle)
        for h in hits:
            assert h.score == pytest.approx(oracle[h.chunk_id], abs=1e-9)


# ---------------------------------------------------------------------------
# Hybrid fusion


def test_rrf_score_for_rank_one_in_both_lists():
    # One chunk matching both modalities at rank 1 fuses to 2/61.
    texts = ["alpha beta", "gamma delta", "epsilon zeta"]
    chunks = one_chunk_per_page("d", texts)
    dim = 4
    target = np.zeros(dim)
    target[0] = 1.0
    other = np.zeros(dim)
    other[1] = 1.0
    embedded = [
        EmbeddedChunk(chunk=chunks[0], vector=target, metadata={}),
        EmbeddedChunk(chunk=chunks[1], vector=other, metadata={}),
        EmbeddedChunk(chunk=chunks[2], vector=-target, metadata={}),
    ]
    index = build_index(embedded)
    hits = index.hybrid_search("alpha", target, 3)
    assert hits[0].chunk_id == "d:0"
    assert hits[0].score == pytest.approx(2 / 61, abs=1e-12)
    assert hits[0].stage == "fused"


def test_rrf_score_for_dense_only_chunk():
    texts = ["alpha beta", "gamma delta"]
    chunks = one_chunk_per_page("d", texts)
    v0 = np.zeros(4)
    v0[0] = 1.0
    v1 = np.zeros(4)
    v1[1] = 1.0
    index = build_index(
        [
            EmbeddedChunk(chunk=chunks[0], vector=v0, metadata={}),
            EmbeddedChunk(chunk=chunks[1], vector=v1, metadata={}),
        ]
    )
    # Query text matches nothing lexically; dense rank 1 alone gives 1/61.
    hits = index.hybrid_search("nomatch", v0, 2)
    assert hits[0].chunk_id == "d:0"
    assert hits[0].score == pytest.approx(1 / 61, abs=1e-12)


def test_hybrid_empty_when_both_sides_empty():
    index = build_index([])
    assert index.hybrid_search("x", np.zeros(0), 5) == []


def test_rrf_monotonicity_second_list_never_decreases_score():
    index = make_index(100, seed=8)
    rng = np.random.default_rng(3)
    q = random_unit(rng, 16)
    dense_only = {
        h.chunk_id: h.score for h in index.hybrid_search("zzznomatch", q, 100)
    }
    both = {h.chunk_id: h.score for h in index.hybrid_search("revenue income", q, 100)}
    for cid, score in both.items():
        if cid in dense_only:
            assert score >= dense_only[cid] - 1e-15


def test_determinism_across_runs_and_threads():
    index = make_index(120, seed=9)
    rng = np.random.default_rng(11)
    queries = [("revenue margin cash", random_unit(rng, 16)) for _ in range(8)]

    def run(args):
        text, vec = args
        return [
            (h.chunk_id, h.score) for h in index.hybrid_search(text, vec, 10)
        ]

    sequential = [run(q) for q in queries]
    with ThreadPoolExecutor(max_workers=8) as pool:
        threaded = list(pool.map(run, queries))
    assert sequential == threaded
    assert sequential == [run(q) for q in queries]


# ---------------------------------------------------------------------------
# Filters


def test_filter_from_dict_rejects_unknown_fields():
    with pytest.raises(UnknownFilterFieldError):
        MetadataFilter.from_dict({"ticker": "ACME"})


def test_date_range_filter_inclusive():
    flt = MetadataFilter(filing_date_from="2023-01-01", filing_date_to="2023-12-31")
    assert flt.matches({"filing_date": "2023-01-01"})
    assert flt.matches({"filing_date": "2023-12-31"})
    assert not flt.matches({"filing_date": "2024-01-01"})


@settings(max_examples=100, deadline=None)
@given(
    company=st.sampled_from((None,) + COMPANIES),
    form_type=st.sampled_from((None,) + FORMS),
    date_from=st.sampled_from((None,) + DATES),
    date_to=st.sampled_from((None,) + DATES),
    qseed=st.integers(min_value=0, max_value=2**31),
)
def test_filter_soundness_over_random_filters(company, form_type, date_from, date_to, qseed):
    index = make_index(60, seed=10)
    flt = MetadataFilter(
        company=company,
        form_type=form_type,
        filing_date_from=date_from,
        filing_date_to=date_to,
    )
    q = random_unit(np.random.default_rng(qseed), 16)
    for hit in index.hybrid_search("revenue segment", q, 10, flt):
        i = index.chunk_ids.index(hit.chunk_id)
        assert flt.matches(index.metadata[i])


# ---------------------------------------------------------------------------
# Persistence


def test_persistence_round_trip_identical_answers(tmp_path):
    index = make_index(40, seed=12)
    path = tmp_path / "index.json"
    index.save(path)
    loaded = VectorIndex.load(path)
    assert len(loaded) == len(index)
    rng = np.random.default_rng(2)
    for _ in range(5):
        q = random_unit(rng, 16)
        for k in (1, 5, 17):
            assert [
                (h.chunk_id, h.score) for h in index.hybrid_search("revenue cash", q, k)
            ] == [
                (h.chunk_id, h.score) for h in loaded.hybrid_search("revenue cash", q, k)
            ]


def test_load_rejects_foreign_files(tmp_path):
    path = tmp_path / "not-index.json"
    path.write_text('{"format": "other"}', encoding="utf-8")
    with pytest.raises(Exception):
        VectorIndex.load(path)


def test_as_hits_assigns_ranks():
    hits = as_hits([("a", 2.0), ("b", 1.0)], "dense")
    assert [(h.chunk_id, h.rank) for h in hits] == [("a", 1), ("b", 2)]
    assert isinstance(hits[0], ScoredHit)


def test_empty_index_persistence_round_trip(tmp_path):
    index = build_index([])
    path = tmp_path / "empty.json"
    index.save(path)
    loaded = VectorIndex.load(path)
    assert len(loaded) == 0
    assert loaded.lexical_search("anything", 5) == []


def test_filter_excluding_everything_yields_empty_results():
    index = make_index(25, seed=14)
    flt = MetadataFilter(company="NoSuchCo")
    q = random_unit(np.random.default_rng(0), 16)
    assert index.dense_search(q, 5, flt) == []
    assert index.lexical_search("revenue", 5, flt) == []
    assert index.hybrid_search("revenue", q, 5, flt) == []
