"""Agentic question answering: formulate, retrieve, grade, retry, generate.

The agent formulates a search query (emitted by the LLM as a structured
``{query_text, filter, k}`` tool call), runs the configured retrieval
stages, grades the retrieved chunks for relevance, and rewrites the
query for another round when the graded fraction falls below the
threshold. After the rounds it generates from the best-graded round's
context only; the generation prompt forbids outside knowledge. Empty
retrieval across all rounds yields an explicit abstention answer rather
than a silent empty one.

Two stage families exist and never mix: the vector family
(``hybrid`` optionally followed by ``rerank`` and/or ``expand``) and the
tree family (``tree_traverse``). Small-to-big expansion runs once, after
the corrective loop settles on a round, since grading applies to the
retrieved chunks themselves.

Grading is fail-open: a grader provider failure passes the round and is
flagged in the trace. The whole pipeline for one question is sequential;
distinct questions may run concurrently with per-question traces.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import dataclass, field

from .corpus import Chunk, ChunkStore, Document, content_tokens
from .expansion import ExpandedContext, ExpansionConfig, expand
from .node_tree import NodeTree, TraversalFailed, traverse_retrieve
from .prompting import render
from .providers import (
    Clock,
    CompletionProvider,
    EmbeddingProvider,
    ProviderError,
    RerankerProvider,
    SystemClock,
)
from .rerank import RerankConfig, StageError, rerank
from .tracing import Trace
from .vector_index import MetadataFilter, ScoredHit, VectorIndex

STAGE_HYBRID = "hybrid"
STAGE_RERANK = "rerank"
STAGE_EXPAND = "expand"
STAGE_TREE = "tree_traverse"
_VECTOR_ORDER = (STAGE_HYBRID, STAGE_RERANK, STAGE_EXPAND)

ABSTAIN_TEXT = "No relevant context was found in the corpus for this question."


class AgentError(Exception):
    """Base error for agent configuration and execution."""


@dataclass(frozen=True)
class AgentConfig:
    max_corrective_rounds: int = 2
    relevance_threshold: float = 0.5
    retrieval_k: int = 5
    stages: tuple[str, ...] = (STAGE_HYBRID,)

    def __post_init__(self) -> None:
        if self.max_corrective_rounds < 0:
            raise AgentError("max_corrective_rounds must be >= 0")
        if not 0.0 <= self.relevance_threshold <= 1.0:
            raise AgentError("relevance_threshold must be in [0, 1]")
        if self.retrieval_k < 1:
            raise AgentError("retrieval_k must be >= 1")
        stages = tuple(self.stages)
        if stages == (STAGE_TREE,):
            return
        if not stages or stages[0] != STAGE_HYBRID:
            raise AgentError(
                f"stages must be the tree family ({STAGE_TREE!r}) or start "
                f"with {STAGE_HYBRID!r}, got {stages}"
            )
        order = [s for s in _VECTOR_ORDER if s in stages]
        if STAGE_TREE in stages or tuple(order) != stages or len(set(stages)) != len(stages):
            raise AgentError(f"invalid stage list {stages}")

    @property
    def is_tree(self) -> bool:
        return self.stages == (STAGE_TREE,)


@dataclass(frozen=True)
class Citation:
    doc_id: str
    page_start: int
    page_end: int
    chunk_id: str | None = None

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "page_start": self.page_start,
            "page_end": self.page_end,
            "chunk_id": self.chunk_id,
        }


@dataclass
class Answer:
    question: str
    text: str
    citations: list[Citation]
    trace: Trace
    abstained: bool = False
    # Final ranked retrieval the generator context came from:
    # kind "chunks" ranks chunk ids, kind "pages" ranks selected tree nodes;
    # spans are the corresponding (page_start, page_end) pairs.
    retrieval: dict = field(default_factory=lambda: {"kind": "chunks", "ids": [], "spans": []})

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "text": self.text,
            "citations": [c.to_dict() for c in self.citations],
            "abstained": self.abstained,
            "retrieval": self.retrieval,
            "flags": list(self.trace.flags),
            "stages": [r.to_dict() for r in self.trace.records],
        }


@dataclass
class AgentResources:
    """Everything answer_question needs beyond the question itself."""

    llm: CompletionProvider
    embedder: EmbeddingProvider | None = None
    scorer: RerankerProvider | None = None
    index: VectorIndex | None = None
    store: ChunkStore | None = None
    trees: dict[str, NodeTree] = field(default_factory=dict)
    documents: dict[str, Document] = field(default_factory=dict)
    rerank_cfg: RerankConfig = RerankConfig(10, 5)
    expansion_cfg: ExpansionConfig = ExpansionConfig()
    clock: Clock = field(default_factory=SystemClock)


# ---------------------------------------------------------------------------
# Core operations


def grade_retrieval(
    question: str,
    passages: list[tuple[str, str]],
    llm: CompletionProvider,
    trace: Trace | None = None,
) -> float:
    """Fraction of passages the grader marks relevant, in [0, 1].

    ``passages`` are (label, text) pairs. Fail-open: provider failure or
    unparseable output passes the round (1.0) and flags the trace.
    """
    if not passages:
        raise ValueError("grade_retrieval requires non-empty context")
    blocks = "\n\n".join(
        f"PASSAGE[{i}] ({label}):\n{text}"
        for i, (label, text) in enumerate(passages, start=1)
    )
    prompt = render("grade_v1", question=question, passages=blocks)
    try:
        reply = llm.complete(prompt)
        verdicts = json.loads(reply.text)
        if (
            not isinstance(verdicts, list)
            or len(verdicts) != len(passages)
            or not all(isinstance(v, bool) for v in verdicts)
        ):
            raise ValueError(f"expected {len(passages)} booleans")
        return sum(verdicts) / len(verdicts)
    except (ProviderError, ValueError, json.JSONDecodeError) as exc:
        if trace is not None:
            trace.flag(f"grader fail-open: {exc}")
        return 1.0


def rewrite_query(
    question: str,
    failed_query: str,
    llm: CompletionProvider,
    extra_terms: tuple[str, ...] = (),
) -> str:
    """One rewritten query, guaranteed non-empty and != failed_query.

    When the rewriter echoes its input, the deterministic fallback appends
    key terms (caller-supplied metadata terms first, then question terms
    missing from the query).
    """
    try:
        reply = llm.complete(
            render("rewrite_v1", question=question, failed_query=failed_query)
        )
        rewritten = reply.text.strip()
    except ProviderError:
        rewritten = ""
    if rewritten and rewritten != failed_query:
        return rewritten
    have = set(failed_query.lower().split())
    candidates = [t for t in extra_terms if t.lower() not in have]
    candidates += [t for t in content_tokens(question) if t not in have]
    suffix = candidates[0] if candidates else "details"
    return f"{failed_query} {suffix}".strip()


def _parse_tool_call(text: str, fallback_query: str) -> tuple[str, bool]:
    """(query_text, parsed_ok) from the formulate reply."""
    try:
        data = json.loads(text.strip())
        query = str(data["query_text"]).strip()
        if query:
            return query, True
    except (json.JSONDecodeError, KeyError, TypeError):
        pass
    return fallback_query, False


class _UsageMeter:
    """Attaches per-stage token counts to stage records from the providers'
    transcript deltas."""

    def __init__(self, *providers) -> None:
        self._logs = []
        seen = set()
        for p in providers:
            if p is not None and id(p.transcripts) not in seen:
                seen.add(id(p.transcripts))
                self._logs.append(p.transcripts)

    def mark(self) -> list[int]:
        return [len(log) for log in self._logs]

    def record(self, rec, marks: list[int]) -> None:
        in_tok = out_tok = 0
        for log, start in zip(self._logs, marks):
            for entry in log.entries()[start:]:
                in_tok += entry.input_tokens
                out_tok += entry.output_tokens
        rec.detail["input_tokens"] = in_tok
        rec.detail["output_tokens"] = out_tok


@contextmanager
def _metered(trace: Trace, meter: _UsageMeter, name: str, **detail):
    with trace.stage(name, **detail) as rec:
        marks = meter.mark()
        try:
            yield rec
        finally:
            meter.record(rec, marks)


# ---------------------------------------------------------------------------
# Retrieval rounds


@dataclass
class _Round:
    query: str
    hits: list[ScoredHit]
    passages: list[tuple[str, str]]
    fraction: float = 0.0
    tree_pages: list[int] = field(default_factory=list)
    tree_node_ids: list[str] = field(default_factory=list)
    tree_spans: list[tuple[int, int]] = field(default_factory=list)


def _chunk_label(chunk: Chunk) -> str:
    return f"doc={chunk.doc_id}, pages={chunk.page_start}-{chunk.page_end}"


def _vector_round(
    query: str,
    question: str,
    cfg: AgentConfig,
    res: AgentResources,
    flt: MetadataFilter | None,
    trace: Trace,
    meter: _UsageMeter,
) -> _Round:
    assert res.index is not None and res.embedder is not None and res.store is not None
    k = res.rerank_cfg.k_initial if STAGE_RERANK in cfg.stages else cfg.retrieval_k
    with _metered(trace, meter, STAGE_HYBRID, query=query, k=k) as rec:
        qvec = res.embedder.embed([query])[0]
        hits = res.index.hybrid_search(query, qvec, k, flt)
        rec.detail["hits"] = [h.chunk_id for h in hits]
    if STAGE_RERANK in cfg.stages and hits:
        assert res.scorer is not None
        with _metered(trace, meter, STAGE_RERANK) as rec:
            try:
                hits = rerank(hits, question, res.rerank_cfg, res.scorer, res.store)
            except StageError as exc:
                trace.flag(f"rerank fallback to baseline order: {exc}")
                hits = hits[: res.rerank_cfg.k_final]
            rec.detail["hits"] = [h.chunk_id for h in hits]
    chunks = [res.store.get(h.chunk_id) for h in hits]
    passages = [(_chunk_label(c), c.text) for c in chunks]
    return _Round(query=query, hits=hits, passages=passages)


def _tree_round(
    query: str,
    res: AgentResources,
    doc_id: str,
    trace: Trace,
    meter: _UsageMeter,
) -> _Round:
    tree = res.trees.get(doc_id)
    doc = res.documents.get(doc_id)
    if tree is None or doc is None:
        raise AgentError(f"no tree/document loaded for doc_id {doc_id!r}")
    with _metered(trace, meter, STAGE_TREE, query=query) as rec:
        try:
            result = traverse_retrieve(tree, query, res.llm, doc)
        except TraversalFailed as exc:
            trace.flag(f"traversal failed: {exc}")
            return _Round(query=query, hits=[], passages=[])
        rec.detail["node_ids"] = result.node_ids
        rec.detail["pages"] = result.pages
    passages = [
        (f"doc={doc_id}, pages={lo}-{hi}", "\n".join(doc.pages[p - 1] for p in range(lo, hi + 1)))
        for lo, hi in result.page_ranges()
    ]
    return _Round(
        query=query,
        hits=[],
        passages=passages,
        tree_pages=result.pages,
        tree_node_ids=result.node_ids,
        tree_spans=[tree.find(nid).extent() for nid in result.node_ids],  # type: ignore[union-attr]
    )


# ---------------------------------------------------------------------------
# Main entry point


def answer_question(
    question: str,
    cfg: AgentConfig,
    res: AgentResources,
    metadata_filter: MetadataFilter | None = None,
    doc_id: str | None = None,
    extra_terms: tuple[str, ...] = (),
) -> Answer:
    """Run the full agent pipeline for one question.

    ``doc_id`` selects the tree for the tree family (ignored by the
    vector family); ``extra_terms`` seed the rewrite fallback.
    """
    trace = Trace(clock=res.clock)
    meter = _UsageMeter(res.llm, res.embedder, res.scorer)

    if cfg.is_tree:
        query = question
    else:
        if res.index is None or res.embedder is None or res.store is None:
            raise AgentError("vector stages need index, embedder, and store")
        with _metered(trace, meter, "formulate") as rec:
            flt_text = "none" if metadata_filter is None else json.dumps(
                {k: v for k, v in vars(metadata_filter).items() if v is not None}
            )
            reply = res.llm.complete(
                render(
                    "formulate_v1",
                    k=str(cfg.retrieval_k),
                    filter=flt_text,
                    question=question,
                )
            )
            query, parsed = _parse_tool_call(reply.text, question)
            rec.detail["query"] = query
            if not parsed:
                trace.flag("formulate reply unparseable; using the question as query")

    rounds: list[_Round] = []
    for round_no in range(cfg.max_corrective_rounds + 1):
        if round_no > 0:
            with _metered(trace, meter, "rewrite") as rec:
                query = rewrite_query(question, query, res.llm, extra_terms)
                rec.detail["query"] = query
        if cfg.is_tree:
            if doc_id is None:
                raise AgentError("tree_traverse needs a doc_id")
            rnd = _tree_round(query, res, doc_id, trace, meter)
        else:
            rnd = _vector_round(query, question, cfg, res, metadata_filter, trace, meter)
        if not rnd.passages:
            trace.flag(f"round {round_no + 1}: empty retrieval")
            rounds.append(rnd)
            continue
        with _metered(trace, meter, "grade") as rec:
            rnd.fraction = grade_retrieval(question, rnd.passages, res.llm, trace)
            rec.detail["fraction"] = rnd.fraction
        rounds.append(rnd)
        if rnd.fraction >= cfg.relevance_threshold:
            break
    else:
        if any(r.passages for r in rounds):
            trace.flag("corrective rounds exhausted; using best-graded context")

    viable = [r for r in rounds if r.passages]
    if not viable:
        return Answer(
            question=question,
            text=ABSTAIN_TEXT,
            citations=[],
            trace=trace,
            abstained=True,
        )
    best = max(viable, key=lambda r: r.fraction)

    if cfg.is_tree:
        retrieval = {
            "kind": "pages",
            "ids": list(best.tree_node_ids),
            "spans": [list(s) for s in best.tree_spans],
        }
    else:
        assert res.store is not None
        retrieval = {
            "kind": "chunks",
            "ids": [h.chunk_id for h in best.hits],
            "spans": [
                [res.store.get(h.chunk_id).page_start, res.store.get(h.chunk_id).page_end]
                for h in best.hits
            ],
        }

    citations: list[Citation]
    if cfg.is_tree:
        context_blocks = best.passages
        assert doc_id is not None
        citations = [
            Citation(doc_id=doc_id, page_start=lo, page_end=hi)
            for lo, hi in _page_ranges(best.tree_pages)
        ]
    elif STAGE_EXPAND in cfg.stages:
        assert res.store is not None
        with _metered(trace, meter, STAGE_EXPAND) as rec:
            expanded: ExpandedContext = expand(best.hits, res.expansion_cfg, res.store)
            rec.detail["provenance"] = expanded.provenance()
        context_blocks = [(_chunk_label(c), c.text) for c in expanded.chunks]
        citations = [
            Citation(
                doc_id=c.doc_id,
                page_start=c.page_start,
                page_end=c.page_end,
                chunk_id=c.chunk_id,
            )
            for c in expanded.chunks
        ]
    else:
        assert res.store is not None
        context_blocks = best.passages
        chunks = [res.store.get(h.chunk_id) for h in best.hits]
        citations = [
            Citation(
                doc_id=c.doc_id,
                page_start=c.page_start,
                page_end=c.page_end,
                chunk_id=c.chunk_id,
            )
            for c in chunks
        ]

    rendered = "\n\n".join(
        f"CONTEXT[{i}] ({label}):\n{text}"
        for i, (label, text) in enumerate(context_blocks, start=1)
    )
    with _metered(trace, meter, "generate") as rec:
        prompt = render("generate_v1", question=question, context=rendered)
        rec.detail["prompt"] = prompt
        reply = res.llm.complete(prompt)
        rec.detail["answer"] = reply.text
    return Answer(
        question=question,
        text=reply.text,
        citations=citations,
        trace=trace,
        abstained=False,
        retrieval=retrieval,
    )


def _page_ranges(pages: list[int]) -> list[tuple[int, int]]:
    ranges: list[tuple[int, int]] = []
    for p in pages:
        if ranges and p == ranges[-1][1] + 1:
            ranges[-1] = (ranges[-1][0], p)
        else:
            ranges.append((p, p))
    return ranges
