"""Retrieval metrics, pairwise LLM judging, latency and cost accounting.

Ground truth is annotated at page granularity: a hit is relevant iff its
page span intersects the question's gold pages (closed intervals).
MRR = (1/|Q|) * sum of 1/rank_i over queries, where a query with no
relevant hit inside the scored depth contributes 0. Recall@k is the
fraction of a query's gold items appearing in the top k.

Pairwise judging runs every comparison twice, original and swapped
order, to debias position; ties count half to each side in the primary
win rate (which keeps X-vs-Y rates complementary), with the raw
wins-only rate reported alongside.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Sequence

from .corpus import Chunk
from .prompting import render
from .providers import (
    CompletionProvider,
    PriceTable,
    ProviderError,
    ProviderTranscript,
)
from .tracing import Trace

CATEGORIES = ("multi-hop", "single-hop", "summary")
CRITERIA = ("accuracy", "completeness", "clarity", "conciseness", "relevance", "style")


class EvalError(Exception):
    """Base error for benchmark loading and metric computation."""


class EmptyBenchmarkError(EvalError):
    """The benchmark or verdict set is empty."""


# ---------------------------------------------------------------------------
# Benchmark questions


@dataclass(frozen=True)
class BenchmarkQuestion:
    id: str
    question: str
    category: str
    doc_id: str
    gold_pages: frozenset[int]
    gold_answer: str

    def __post_init__(self) -> None:
        if self.category not in CATEGORIES:
            raise EvalError(
                f"question {self.id!r}: category must be one of {CATEGORIES}, "
                f"got {self.category!r}"
            )
        if not self.gold_pages:
            raise EvalError(f"question {self.id!r}: gold_pages must be non-empty")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkQuestion":
        return cls(
            id=str(d["id"]),
            question=d["question"],
            category=d["category"],
            doc_id=d["doc_id"],
            gold_pages=frozenset(int(p) for p in d["gold_pages"]),
            gold_answer=d["gold_answer"],
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "question": self.question,
            "category": self.category,
            "doc_id": self.doc_id,
            "gold_pages": sorted(self.gold_pages),
            "gold_answer": self.gold_answer,
        }


def load_benchmark(path: str | Path) -> list[BenchmarkQuestion]:
    """Read a JSON Lines benchmark, one question per line."""
    questions: list[BenchmarkQuestion] = []
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            questions.append(BenchmarkQuestion.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError) as exc:
            raise EvalError(f"{path}:{lineno}: bad benchmark line: {exc}") from exc
    if not questions:
        raise EmptyBenchmarkError(f"benchmark {path} has no questions")
    return questions


def save_benchmark(questions: Sequence[BenchmarkQuestion], path: str | Path) -> None:
    lines = [json.dumps(q.to_dict()) for q in questions]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Retrieval metrics


def relevance(chunk_or_pages, gold_pages: Iterable[int]) -> bool:
    """True iff the hit's page span intersects the gold pages.

    Accepts a :class:`Chunk`, a ``(page_start, page_end)`` tuple (closed
    interval), or any other iterable of explicit page numbers.
    """
    gold = set(gold_pages)
    if not gold:
        raise EvalError("gold_pages must be non-empty")
    if isinstance(chunk_or_pages, Chunk):
        lo, hi = chunk_or_pages.page_start, chunk_or_pages.page_end
        return any(lo <= p <= hi for p in gold)
    if isinstance(chunk_or_pages, tuple) and len(chunk_or_pages) == 2:
        lo, hi = chunk_or_pages
        return any(lo <= p <= hi for p in gold)
    return bool(gold & set(chunk_or_pages))


def mrr(first_relevant_ranks: Sequence[int | None]) -> float:
    """Mean reciprocal rank; a ``None`` rank (nothing relevant) adds 0."""
    if not first_relevant_ranks:
        raise EmptyBenchmarkError("mrr needs at least one query")
    total = 0.0
    for rank in first_relevant_ranks:
        if rank is not None:
            if rank < 1:
                raise EvalError(f"ranks are 1-based, got {rank}")
            total += 1.0 / rank
    return total / len(first_relevant_ranks)


def recall_at_k(retrieved: Sequence[Hashable], gold: Iterable[Hashable], k: int = 5) -> float:
    """|gold ∩ top-k| / |gold|."""
    gold_set = set(gold)
    if not gold_set:
        raise EvalError("gold set must be non-empty")
    if k < 1:
        raise EvalError(f"k must be >= 1, got {k}")
    return len(gold_set & set(retrieved[:k])) / len(gold_set)


def first_relevant_rank(
    page_spans: Sequence[tuple[int, int] | None],
    gold_pages: Iterable[int],
    depth: int | None = None,
) -> int | None:
    """1-based rank of the first span intersecting gold, scanned to ``depth``.

    ``None`` entries hold a rank position but can never be relevant
    (callers use them for hits from a different document than the gold
    annotation).
    """
    scan = page_spans if depth is None else page_spans[:depth]
    for rank, span in enumerate(scan, start=1):
        if span is not None and relevance(span, gold_pages):
            return rank
    return None


# ---------------------------------------------------------------------------
# Pairwise judging


@dataclass(frozen=True)
class JudgeVerdict:
    """One judge call's preferences, exactly one entry per criterion.

    ``criteria`` and ``overall`` are in the *presented* order; when
    ``order_swapped`` is set, presented "A" was the caller's answer_b.
    """

    criteria: dict[str, str]
    overall: str
    order_swapped: bool
    parse_failed: bool = False
    raw: str = ""

    def __post_init__(self) -> None:
        if set(self.criteria) != set(CRITERIA):
            raise EvalError(
                f"verdict must cover exactly the six criteria, got {sorted(self.criteria)}"
            )

    def _unswap(self, choice: str) -> str:
        if not self.order_swapped or choice == "tie":
            return choice
        return "b" if choice == "a" else "a"

    def winner(self, criterion: str | None = None) -> str:
        """'a' | 'b' | 'tie' in the caller's original answer order."""
        choice = self.overall if criterion is None else self.criteria[criterion]
        return self._unswap(choice)

    def to_dict(self) -> dict:
        return {
            "criteria": dict(self.criteria),
            "overall": self.overall,
            "order_swapped": self.order_swapped,
            "parse_failed": self.parse_failed,
        }


def _parse_verdict_json(text: str) -> tuple[dict[str, str], str]:
    data = json.loads(text.strip())
    if not isinstance(data, dict):
        raise ValueError("verdict must be a JSON object")
    normalized: dict[str, str] = {}
    for crit in CRITERIA:
        if crit not in data:
            raise ValueError(f"verdict missing criterion {crit!r}")
        choice = str(data[crit]).strip().lower()
        if choice not in ("a", "b", "tie"):
            raise ValueError(f"criterion {crit!r} must be A, B, or tie, got {data[crit]!r}")
        normalized[crit] = choice
    if "overall" not in data:
        raise ValueError("verdict missing 'overall'")
    overall = str(data["overall"]).strip().lower()
    if overall not in ("a", "b", "tie"):
        raise ValueError(f"overall must be A, B, or tie, got {data['overall']!r}")
    return normalized, overall


def _judge_once(
    question: str,
    first: str,
    second: str,
    judge: CompletionProvider,
    swapped: bool,
) -> JudgeVerdict:
    prompt = render("judge_v1", question=question, answer_a=first, answer_b=second)
    raw = ""
    try:
        reply = judge.complete(prompt)
        raw = reply.text
        criteria, overall = _parse_verdict_json(reply.text)
        return JudgeVerdict(criteria, overall, order_swapped=swapped, raw=raw)
    except (ValueError, ProviderError) as exc:
        repair = render("repair_v1", error=str(exc), previous=raw, original=prompt)
        try:
            reply = judge.complete(repair)
            raw = reply.text
            criteria, overall = _parse_verdict_json(reply.text)
            return JudgeVerdict(criteria, overall, order_swapped=swapped, raw=raw)
        except (ValueError, ProviderError):
            return JudgeVerdict(
                {c: "tie" for c in CRITERIA},
                "tie",
                order_swapped=swapped,
                parse_failed=True,
                raw=raw,
            )


def judge_pair(
    question: str,
    answer_a: str,
    answer_b: str,
    judge: CompletionProvider,
) -> tuple[JudgeVerdict, JudgeVerdict]:
    """Judge the pair twice, original and swapped order, storing both."""
    if not answer_a.strip() or not answer_b.strip():
        raise EvalError("both answers must be non-empty")
    original = _judge_once(question, answer_a, answer_b, judge, swapped=False)
    swapped = _judge_once(question, answer_b, answer_a, judge, swapped=True)
    return original, swapped


# ---------------------------------------------------------------------------
# Win rates


@dataclass(frozen=True)
class WinRate:
    wins: int
    losses: int
    ties: int

    @property
    def comparisons(self) -> int:
        return self.wins + self.losses + self.ties

    @property
    def rate(self) -> float:
        """Primary rate; ties count half to each side."""
        if self.comparisons == 0:
            raise EmptyBenchmarkError("win_rate needs at least one comparison")
        return (self.wins + 0.5 * self.ties) / self.comparisons

    @property
    def raw_rate(self) -> float:
        if self.comparisons == 0:
            raise EmptyBenchmarkError("win_rate needs at least one comparison")
        return self.wins / self.comparisons

    def to_dict(self) -> dict:
        return {
            "wins": self.wins,
            "losses": self.losses,
            "ties": self.ties,
            "rate": self.rate,
            "raw_rate": self.raw_rate,
        }


def win_rate(
    verdicts: Sequence[JudgeVerdict],
    side: str = "a",
    criterion: str | None = None,
) -> WinRate:
    """Win rate of one side over a verdict set (overall or per criterion)."""
    if side not in ("a", "b"):
        raise EvalError(f"side must be 'a' or 'b', got {side!r}")
    if not verdicts:
        raise EmptyBenchmarkError("win_rate needs at least one verdict")
    other = "b" if side == "a" else "a"
    wins = losses = ties = 0
    for v in verdicts:
        w = v.winner(criterion)
        if w == side:
            wins += 1
        elif w == other:
            losses += 1
        else:
            ties += 1
    return WinRate(wins, losses, ties)


def win_rate_from_counts(wins: int, losses: int, ties: int = 0) -> WinRate:
    if wins + losses + ties == 0:
        raise EmptyBenchmarkError("win_rate needs at least one comparison")
    return WinRate(wins, losses, ties)


# ---------------------------------------------------------------------------
# Cost accounting


@dataclass
class CostReport:
    by_phase: dict[str, dict[str, float]]
    phase_totals: dict[str, float]
    total: float

    def to_dict(self) -> dict:
        return {
            "by_phase": self.by_phase,
            "phase_totals": self.phase_totals,
            "total": self.total,
        }


def cost(transcripts: Iterable[ProviderTranscript], prices: PriceTable) -> CostReport:
    """Total = sum over calls of in_tokens*p_in + out_tokens*p_out,
    grouped by phase and provider. Missing prices raise."""
    by_phase: dict[str, dict[str, float]] = {}
    for t in transcripts:
        price = prices.get(t.provider_id)
        amount = t.input_tokens * price.input_per_token + t.output_tokens * price.output_per_token
        by_phase.setdefault(t.phase, {})
        by_phase[t.phase][t.provider_id] = by_phase[t.phase].get(t.provider_id, 0.0) + amount
    phase_totals = {phase: sum(v.values()) for phase, v in by_phase.items()}
    return CostReport(
        by_phase=by_phase,
        phase_totals=phase_totals,
        total=sum(phase_totals.values()),
    )


# ---------------------------------------------------------------------------
# Latency statistics


def _percentile(sorted_values: list[float], p: float) -> float:
    """Nearest-rank percentile over a non-empty ascending list."""
    idx = max(math.ceil(p * len(sorted_values)) - 1, 0)
    return sorted_values[idx]


def _summary(values: list[float]) -> dict[str, float]:
    ordered = sorted(values)
    return {
        "mean": sum(values) / len(values),
        "p50": _percentile(ordered, 0.50),
        "p95": _percentile(ordered, 0.95),
    }


def latency_stats(traces: Iterable[Trace]) -> dict[str, dict[str, float]]:
    """{mean, p50, p95} per stage plus 'end_to_end', over a trace set."""
    per_stage: dict[str, list[float]] = {}
    end_to_end: list[float] = []
    count = 0
    for trace in traces:
        count += 1
        for record in trace.records:
            per_stage.setdefault(record.stage, []).append(record.duration)
        end_to_end.append(trace.end_to_end())
    if count == 0:
        raise EvalError("latency_stats needs at least one trace")
    stats = {stage: _summary(vals) for stage, vals in sorted(per_stage.items())}
    stats["end_to_end"] = _summary(end_to_end)
    return stats


# ---------------------------------------------------------------------------
# Run reports


def config_fingerprint(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class RunReport:
    """Aggregate outcome of one benchmark run (or one two-system comparison)."""

    seed: int
    config: dict
    architecture: str
    questions: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    comparison: dict | None = None
    footnotes: list[str] = field(default_factory=list)
    schema: str = "filingqa-run-report/1"

    @property
    def config_fingerprint(self) -> str:
        return config_fingerprint(self.config)

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "seed": self.seed,
            "config_fingerprint": self.config_fingerprint,
            "config": self.config,
            "architecture": self.architecture,
            "questions": self.questions,
            "aggregates": self.aggregates,
            "comparison": self.comparison,
            "footnotes": self.footnotes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")
