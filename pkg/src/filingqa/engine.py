"""Resource assembly and the benchmark harness.

Glue between the CLI and the retrieval modules: corpus loading, index
and tree construction (tagged as the preprocessing phase for cost
accounting), single-architecture benchmark runs, and the two-system
pairwise comparison. Per-question failures are recorded and the run
continues; a run is reproducible byte-for-byte when built on mocks with
a tick clock and a fixed seed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .agent import AgentConfig, AgentResources, Answer, answer_question
from .corpus import (
    Chunk,
    ChunkingConfig,
    ChunkStore,
    CorpusError,
    Document,
    chunk_document,
    count_tokens,
    ingest_document,
    iter_corpus,
    split_chunk_id,
)
from .evalkit import (
    BenchmarkQuestion,
    CRITERIA,
    JudgeVerdict,
    RunReport,
    cost as compute_cost,
    first_relevant_rank,
    judge_pair,
    latency_stats,
    mrr,
    recall_at_k,
    relevance,
    win_rate,
)
from .expansion import ExpansionConfig
from .node_tree import NodeTree, TreeGenReport, generate_tree, generate_tree_deterministic
from .providers import (
    Clock,
    CompletionProvider,
    EmbeddingProvider,
    PHASE_PREPROCESSING,
    PriceTable,
    RerankerProvider,
    TickClock,
    TranscriptLog,
    default_price_table,
)
from .providers.mocks import HashEmbedding, LexicalOverlapScorer, RuleBasedLLM
from .rerank import RerankConfig
from .vector_index import EmbeddedChunk, VectorIndex, build_index

ARCH_VECTOR = "vector"
ARCH_TREE = "tree"
ARCH_BOTH = "both"

EMBED_BATCH = 16


@dataclass
class ProviderBundle:
    llm: CompletionProvider
    embedder: EmbeddingProvider
    scorer: RerankerProvider
    judge: CompletionProvider
    transcripts: TranscriptLog
    clock: Clock


def build_mock_providers(seed: int = 0, clock: Clock | None = None) -> ProviderBundle:
    """Offline-first default: deterministic mocks on a tick clock."""
    clock = clock if clock is not None else TickClock()
    log = TranscriptLog()
    llm = RuleBasedLLM(transcripts=log, clock=clock)
    return ProviderBundle(
        llm=llm,
        embedder=HashEmbedding(seed=seed, transcripts=log, clock=clock),
        scorer=LexicalOverlapScorer(transcripts=log, clock=clock),
        judge=llm,
        transcripts=log,
        clock=clock,
    )


# ---------------------------------------------------------------------------
# Corpus and artifacts


@dataclass
class CorpusData:
    documents: dict[str, Document] = field(default_factory=dict)
    chunks: list[Chunk] = field(default_factory=list)
    store: ChunkStore = field(default_factory=ChunkStore)
    errors: list[dict] = field(default_factory=list)


def load_corpus(corpus_dir: str | Path, chunking: ChunkingConfig) -> CorpusData:
    """Ingest and chunk every filing; per-file errors are collected, not raised."""
    data = CorpusData()
    for path in iter_corpus(corpus_dir):
        try:
            doc = ingest_document(path)
            if doc.doc_id in data.documents:
                raise CorpusError(f"duplicate doc_id {doc.doc_id!r}")
            chunks = chunk_document(doc, chunking)
        except CorpusError as exc:
            data.errors.append({"path": str(path), "error": str(exc)})
            continue
        data.documents[doc.doc_id] = doc
        data.chunks.extend(chunks)
        for chunk in chunks:
            data.store.add(chunk)
    return data


def embed_corpus(
    data: CorpusData, embedder: EmbeddingProvider, tokenizer_id: str = "default"
) -> VectorIndex:
    """Embed all chunks (preprocessing phase) and build the exact index."""
    embedded: list[EmbeddedChunk] = []
    with embedder.transcripts.phase(PHASE_PREPROCESSING):
        for i in range(0, len(data.chunks), EMBED_BATCH):
            batch = data.chunks[i : i + EMBED_BATCH]
            vectors = embedder.embed([c.text for c in batch])
            for j, chunk in enumerate(batch):
                embedded.append(
                    EmbeddedChunk(
                        chunk=chunk,
                        vector=vectors[j],
                        metadata=data.documents[chunk.doc_id].metadata(),
                    )
                )
    return build_index(embedded, tokenizer_id=tokenizer_id)


def build_trees(
    data: CorpusData,
    llm: CompletionProvider | None,
    deterministic: bool = True,
    with_summaries: bool = False,
    prices: PriceTable | None = None,
) -> dict[str, tuple[NodeTree, TreeGenReport]]:
    """Node trees for every document; nothing is returned partially built.

    Deterministic mode never touches a provider. Provider mode tags its
    calls as preprocessing and raises on the first unrecoverable failure,
    so callers persist either every tree or none.
    """
    out: dict[str, tuple[NodeTree, TreeGenReport]] = {}
    for doc_id in sorted(data.documents):
        doc = data.documents[doc_id]
        if deterministic or llm is None:
            tree = generate_tree_deterministic(doc, with_summaries)
            report = TreeGenReport(0, 0, 0.0, with_summaries)
        else:
            with llm.transcripts.phase(PHASE_PREPROCESSING):
                tree, report = generate_tree(doc, llm, with_summaries, prices)
        out[doc_id] = (tree, report)
    return out


def file_checksum(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def corpus_manifest(data: CorpusData, tokenizer_id: str = "default") -> dict:
    docs = []
    for doc_id in sorted(data.documents):
        doc = data.documents[doc_id]
        docs.append(
            {
                "doc_id": doc_id,
                "company": doc.company,
                "form_type": doc.form_type,
                "fiscal_period": doc.fiscal_period,
                "filing_date": doc.filing_date,
                "pages": doc.page_count,
                "tokens": sum(count_tokens(p, tokenizer_id) for p in doc.pages),
                "chunks": data.store.doc_chunk_count(doc_id),
            }
        )
    return {"documents": docs, "errors": data.errors}


# ---------------------------------------------------------------------------
# Benchmark runs


def _gold_chunk_ids(store: ChunkStore, q: BenchmarkQuestion) -> set[str]:
    return {
        c.chunk_id for c in store.chunks_for_doc(q.doc_id) if relevance(c, q.gold_pages)
    }


def _question_record(
    q: BenchmarkQuestion,
    ans: Answer,
    store: ChunkStore | None,
) -> dict:
    if ans.retrieval["kind"] == "chunks":
        # Hits from other documents hold their rank but are never relevant.
        spans = [
            tuple(s) if split_chunk_id(cid)[0] == q.doc_id else None
            for cid, s in zip(ans.retrieval["ids"], ans.retrieval["spans"])
        ]
    else:
        spans = [tuple(s) for s in ans.retrieval["spans"]]
    rank = first_relevant_rank(spans, q.gold_pages, depth=5) if spans else None
    if ans.retrieval["kind"] == "chunks" and store is not None:
        gold_ids = _gold_chunk_ids(store, q)
        recall = (
            recall_at_k(ans.retrieval["ids"], gold_ids, k=5) if gold_ids else 0.0
        )
    else:
        covered: set[int] = set()
        for span in spans[:5]:
            if span is not None:
                covered.update(range(span[0], span[1] + 1))
        recall = len(covered & set(q.gold_pages)) / len(q.gold_pages)
    return {
        "id": q.id,
        "category": q.category,
        "answer": ans.text,
        "abstained": ans.abstained,
        "citations": [c.to_dict() for c in ans.citations],
        "first_relevant_rank": rank,
        "recall_at_5": recall,
        "rounds": ans.trace.stage_count("grade"),
        "stage_durations": ans.trace.stage_durations(),
        "flags": list(ans.trace.flags),
        "error": None,
    }


def run_benchmark(
    questions: list[BenchmarkQuestion],
    agent_cfg: AgentConfig,
    res: AgentResources,
    *,
    seed: int,
    config: dict,
    architecture: str,
    transcripts: TranscriptLog,
    prices: PriceTable | None = None,
    footnotes: list[str] | None = None,
) -> tuple[RunReport, list[Answer | None]]:
    """One architecture over the benchmark; failures recorded per question."""
    prices = prices if prices is not None else default_price_table()
    records: list[dict] = []
    answers: list[Answer | None] = []
    for q in questions:
        doc = res.documents.get(q.doc_id)
        extra = (doc.form_type,) if doc is not None else ()
        try:
            ans = answer_question(
                q.question, agent_cfg, res, doc_id=q.doc_id, extra_terms=extra
            )
            records.append(_question_record(q, ans, res.store))
            answers.append(ans)
        except Exception as exc:  # noqa: BLE001 - per-question isolation
            records.append(
                {
                    "id": q.id,
                    "category": q.category,
                    "answer": None,
                    "abstained": False,
                    "citations": [],
                    "first_relevant_rank": None,
                    "recall_at_5": 0.0,
                    "rounds": 0,
                    "stage_durations": {},
                    "flags": [],
                    "error": f"{type(exc).__name__}: {exc}",
                }
            )
            answers.append(None)

    scored = [r for r in records if r["error"] is None]
    traces = [a.trace for a in answers if a is not None]
    aggregates: dict = {
        "questions": len(questions),
        "failures": sum(1 for r in records if r["error"] is not None),
        "abstentions": sum(1 for r in records if r["abstained"]),
        "by_category": {
            cat: sum(1 for q in questions if q.category == cat)
            for cat in sorted({q.category for q in questions})
        },
    }
    if scored:
        aggregates["mrr"] = mrr([r["first_relevant_rank"] for r in scored])
        aggregates["recall_at_5"] = sum(r["recall_at_5"] for r in scored) / len(scored)
    if traces:
        aggregates["latency"] = latency_stats(traces)
    aggregates["cost"] = compute_cost(transcripts.entries(), prices).to_dict()

    report = RunReport(
        seed=seed,
        config=config,
        architecture=architecture,
        questions=records,
        aggregates=aggregates,
        footnotes=footnotes or [],
    )
    return report, answers


def compare_architectures(
    questions: list[BenchmarkQuestion],
    report_a: RunReport,
    answers_a: list[Answer | None],
    report_b: RunReport,
    answers_b: list[Answer | None],
    judge: CompletionProvider,
    labels: tuple[str, str] = (ARCH_VECTOR, ARCH_TREE),
) -> RunReport:
    """Pairwise-judge two runs; win rates reported overall and per criterion,
    each in tie-split and raw form."""
    verdicts: list[JudgeVerdict] = []
    per_question: list[dict] = []
    for q, ans_a, ans_b in zip(questions, answers_a, answers_b):
        if ans_a is None or ans_b is None:
            per_question.append({"id": q.id, "verdicts": None})
            continue
        v1, v2 = judge_pair(q.question, ans_a.text, ans_b.text, judge)
        verdicts.extend([v1, v2])
        per_question.append(
            {"id": q.id, "verdicts": [v1.to_dict(), v2.to_dict()]}
        )

    la, lb = labels
    comparison: dict = {"systems": [la, lb], "judged_pairs": len(verdicts) // 2}
    if verdicts:
        overall_a = win_rate(verdicts, side="a")
        overall_b = win_rate(verdicts, side="b")
        comparison["overall"] = {la: overall_a.to_dict(), lb: overall_b.to_dict()}
        comparison["per_criterion"] = {
            crit: {
                la: win_rate(verdicts, side="a", criterion=crit).to_dict(),
                lb: win_rate(verdicts, side="b", criterion=crit).to_dict(),
            }
            for crit in CRITERIA
        }
    comparison["per_question"] = per_question

    return RunReport(
        seed=report_a.seed,
        config={la: report_a.config, lb: report_b.config},
        architecture=ARCH_BOTH,
        questions=[
            {"id": q.id, la: ra, lb: rb}
            for q, ra, rb in zip(questions, report_a.questions, report_b.questions)
        ],
        aggregates={la: report_a.aggregates, lb: report_b.aggregates},
        comparison=comparison,
        footnotes=sorted(set(report_a.footnotes) | set(report_b.footnotes)),
    )


def make_agent_resources(
    bundle: ProviderBundle,
    *,
    index: VectorIndex | None = None,
    store: ChunkStore | None = None,
    trees: dict[str, NodeTree] | None = None,
    documents: dict[str, Document] | None = None,
    rerank_cfg: RerankConfig | None = None,
    expansion_cfg: ExpansionConfig | None = None,
) -> AgentResources:
    return AgentResources(
        llm=bundle.llm,
        embedder=bundle.embedder,
        scorer=bundle.scorer,
        index=index,
        store=store,
        trees=trees or {},
        documents=documents or {},
        rerank_cfg=rerank_cfg if rerank_cfg is not None else RerankConfig(10, 5),
        expansion_cfg=expansion_cfg if expansion_cfg is not None else ExpansionConfig(),
        clock=bundle.clock,
    )
