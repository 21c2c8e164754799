"""Cross-encoder reranking stage and its parameter sweep.

The stage takes the first-pass candidates (at most ``k_initial``), scores
every (question, chunk text) pair in one provider batch, and keeps the
top ``k_final`` by score, breaking ties by the candidates' prior rank and
then chunk_id; the output is always a subset of the input. A scorer
failure raises :class:`StageError`, and callers degrade to the
un-reranked order rather than abort.

The sweep reproduces the reference parameter-grid table: one row per
(k_initial, k_final) plus a no-rerank baseline row, reporting MRR@5,
Recall@5, and mean retrieval-stage latency (retrieve + rerank; answer
generation is excluded, which is recorded as a table footnote).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .corpus import ChunkStore
from .evalkit import (
    BenchmarkQuestion,
    EmptyBenchmarkError,
    first_relevant_rank,
    mrr,
    recall_at_k,
    relevance,
)
from .providers import Clock, ProviderError, RerankerProvider, SystemClock
from .vector_index import STAGE_RERANKED, ScoredHit, as_hits

# (k_initial, k_final) grid of the reference table, in row order.
SWEEP_GRID = (
    (100, 20),
    (100, 30),
    (75, 25),
    (75, 15),
    (50, 10),
    (10, 5),
    (50, 5),
    (20, 10),
    (20, 5),
    (10, 10),
)

SWEEP_COLUMNS = ("(k_initial, k_final)", "MRR@5", "Recall@5", "Avg Latency (s)")
BASELINE_LABEL = "Baseline (No Reranking)"
LATENCY_FOOTNOTE = (
    "Latency covers the retrieval stage only (first-pass retrieval plus "
    "reranking); answer generation is excluded."
)


class ConfigError(ValueError):
    """Invalid reranking parameters."""


class StageError(Exception):
    """The scoring provider failed after retries."""


@dataclass(frozen=True)
class RerankConfig:
    k_initial: int
    k_final: int

    def __post_init__(self) -> None:
        if not 1 <= self.k_final <= self.k_initial:
            raise ConfigError(
                f"need 1 <= k_final <= k_initial, got "
                f"({self.k_initial}, {self.k_final})"
            )

    def label(self) -> str:
        return f"({self.k_initial}, {self.k_final})"


def rerank(
    candidates: Sequence[ScoredHit],
    question: str,
    cfg: RerankConfig,
    scorer: RerankerProvider,
    store: ChunkStore,
) -> list[ScoredHit]:
    """Keep the top ``k_final`` candidates by cross-encoder score.

    Ties break by prior rank then chunk_id, so the result depends only on
    the candidate set, not its input order.
    """
    if len(candidates) > cfg.k_initial:
        raise ConfigError(
            f"{len(candidates)} candidates exceed k_initial={cfg.k_initial}"
        )
    if not candidates:
        return []
    texts = [store.get(hit.chunk_id).text for hit in candidates]
    try:
        scores = scorer.score_pairs(question, texts)
    except ProviderError as exc:
        raise StageError(f"reranker failed: {exc}") from exc
    ordered = sorted(
        zip(candidates, scores),
        key=lambda pair: (-pair[1], pair[0].rank, pair[0].chunk_id),
    )
    top = ordered[: cfg.k_final]
    return as_hits([(hit.chunk_id, score) for hit, score in top], STAGE_RERANKED)


# ---------------------------------------------------------------------------
# Parameter sweep


@dataclass
class SweepPipeline:
    """What the sweep needs from the surrounding system.

    ``retrieve(question, k)`` returns the baseline-ordered first-pass
    hits; ``store`` resolves hits to chunks (texts and page spans).
    """

    retrieve: Callable[[BenchmarkQuestion, int], list[ScoredHit]]
    scorer: RerankerProvider
    store: ChunkStore
    clock: Clock = field(default_factory=SystemClock)

    def gold_chunk_ids(self, q: BenchmarkQuestion) -> set[str]:
        return {
            c.chunk_id
            for c in self.store.chunks_for_doc(q.doc_id)
            if relevance(c, q.gold_pages)
        }


@dataclass
class SweepRow:
    config: RerankConfig | None  # None marks the baseline row
    mrr_at_5: float | None = None
    recall_at_5: float | None = None
    avg_latency_s: float | None = None
    error: str | None = None

    def label(self) -> str:
        return BASELINE_LABEL if self.config is None else self.config.label()

    def to_dict(self) -> dict:
        return {
            "k_initial": self.config.k_initial if self.config else None,
            "k_final": self.config.k_final if self.config else None,
            "label": self.label(),
            "mrr_at_5": self.mrr_at_5,
            "recall_at_5": self.recall_at_5,
            "avg_latency_s": self.avg_latency_s,
            "error": self.error,
        }


@dataclass
class SweepReport:
    rows: list[SweepRow]
    footnotes: list[str] = field(default_factory=lambda: [LATENCY_FOOTNOTE])

    def to_dict(self) -> dict:
        return {
            "columns": list(SWEEP_COLUMNS),
            "rows": [r.to_dict() for r in self.rows],
            "footnotes": self.footnotes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def render_text(self) -> str:
        """Plain-text table with exactly the reference columns."""
        body = []
        for row in self.rows:
            if row.error is not None:
                body.append((row.label(), "-", "-", "-", row.error))
                continue
            body.append(
                (
                    row.label(),
                    f"{row.mrr_at_5:.3f}",
                    f"{row.recall_at_5:.2f}",
                    f"{row.avg_latency_s:.2f}",
                    "",
                )
            )
        widths = [
            max(len(SWEEP_COLUMNS[i]), *(len(r[i]) for r in body))
            for i in range(4)
        ]
        lines = [
            "  ".join(SWEEP_COLUMNS[i].ljust(widths[i]) for i in range(4)).rstrip(),
            "  ".join("-" * widths[i] for i in range(4)),
        ]
        for r in body:
            line = "  ".join(r[i].ljust(widths[i]) for i in range(4)).rstrip()
            if r[4]:
                line += f"  [failed: {r[4]}]"
            lines.append(line)
        lines.extend(f"* {note}" for note in self.footnotes)
        return "\n".join(lines)


def _question_metrics(
    final_hits: list[ScoredHit],
    q: BenchmarkQuestion,
    pipeline: SweepPipeline,
) -> tuple[int | None, float]:
    # Hits from other documents hold their rank but are never relevant.
    spans = [
        (c.page_start, c.page_end) if c.doc_id == q.doc_id else None
        for c in (pipeline.store.get(h.chunk_id) for h in final_hits)
    ]
    rank = first_relevant_rank(spans, q.gold_pages, depth=5)
    gold_ids = pipeline.gold_chunk_ids(q)
    rec = recall_at_k([h.chunk_id for h in final_hits], gold_ids, k=5) if gold_ids else 0.0
    return rank, rec


def _run_config(
    cfg: RerankConfig | None,
    bench: Sequence[BenchmarkQuestion],
    pipeline: SweepPipeline,
) -> SweepRow:
    ranks: list[int | None] = []
    recalls: list[float] = []
    latencies: list[float] = []
    fallbacks = 0
    for q in bench:
        t0 = pipeline.clock.now()
        if cfg is None:
            final = pipeline.retrieve(q, 5)
        else:
            candidates = pipeline.retrieve(q, cfg.k_initial)
            try:
                final = rerank(candidates, q.question, cfg, pipeline.scorer, pipeline.store)
            except StageError:
                final = candidates[: cfg.k_final]
                fallbacks += 1
        latencies.append(pipeline.clock.now() - t0)
        rank, rec = _question_metrics(final, q, pipeline)
        ranks.append(rank)
        recalls.append(rec)
    row = SweepRow(
        config=cfg,
        mrr_at_5=mrr(ranks),
        recall_at_5=sum(recalls) / len(recalls),
        avg_latency_s=sum(latencies) / len(latencies),
    )
    if fallbacks:
        row.error = f"scorer fallback on {fallbacks} question(s)"
    return row


def sweep(
    configs: Sequence[RerankConfig],
    bench: Sequence[BenchmarkQuestion],
    pipeline: SweepPipeline,
) -> SweepReport:
    """Baseline row plus one row per config; failed rows are flagged and
    the sweep continues."""
    if not configs:
        raise ConfigError("sweep needs at least one config")
    if not bench:
        raise EmptyBenchmarkError("sweep needs a non-empty benchmark")
    rows: list[SweepRow] = []
    for cfg in [None, *configs]:
        try:
            rows.append(_run_config(cfg, bench, pipeline))
        except Exception as exc:  # noqa: BLE001 - row isolation is the contract
            rows.append(SweepRow(config=cfg, error=str(exc)))
    return SweepReport(rows=rows)


def default_grid() -> list[RerankConfig]:
    return [RerankConfig(*pair) for pair in SWEEP_GRID]
