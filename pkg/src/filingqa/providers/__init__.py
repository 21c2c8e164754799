"""Provider abstractions for LLM, embedding, and reranker backends.

Every provider call appends exactly one :class:`ProviderTranscript` to the
provider's transcript log; downstream cost accounting is a pure function
of transcripts plus a :class:`PriceTable`. Calls are retried up to three
attempts with exponential backoff and surface as typed errors, never
hangs. A per-provider semaphore bounds concurrent requests.

Timing flows through a :class:`Clock`. Offline runs use :class:`TickClock`
(deterministic simulated time advanced by the providers' fixed simulated
latencies), which is what makes seeded benchmark reports byte-identical
across runs. Real backends use :class:`SystemClock`.

Deterministic offline mocks live in :mod:`filingqa.providers.mocks`;
HTTPS backends (OpenAI, Cohere, Anthropic) in
:mod:`filingqa.providers.http`.
"""

from __future__ import annotations

import json
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from ..corpus import count_tokens

PHASE_PREPROCESSING = "preprocessing"
PHASE_RUNTIME = "runtime"


class ProviderError(Exception):
    """A provider call failed after bounded retries."""


class FatalProviderError(ProviderError):
    """A provider failure that retrying cannot fix."""


class UnscriptedPromptError(FatalProviderError):
    """A scripted provider received a prompt it has no reply for."""


class MissingPriceError(KeyError):
    """The price table has no entry for a provider appearing in transcripts."""


# ---------------------------------------------------------------------------
# Clocks


class Clock:
    """Minimal timing interface: monotone ``now`` plus simulated ``advance``."""

    def now(self) -> float:
        raise NotImplementedError

    def advance(self, dt: float) -> None:
        raise NotImplementedError


class SystemClock(Clock):
    """Wall-clock timing via ``time.perf_counter``; ``advance`` is a no-op."""

    def now(self) -> float:
        return time.perf_counter()

    def advance(self, dt: float) -> None:
        pass


class TickClock(Clock):
    """Deterministic simulated time; only ``advance`` moves it forward."""

    def __init__(self, start: float = 0.0) -> None:
        self._t = start
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            return self._t

    def advance(self, dt: float) -> None:
        if dt < 0:
            raise ValueError("cannot advance a clock backwards")
        with self._lock:
            self._t += dt


# ---------------------------------------------------------------------------
# Transcripts


@dataclass(frozen=True)
class ProviderTranscript:
    """One recorded provider interaction."""

    provider_id: str
    operation: str
    input_tokens: int
    output_tokens: int
    latency: float
    outcome: str  # ok | retried | failed
    phase: str = PHASE_RUNTIME

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be >= 0")
        if self.latency < 0:
            raise ValueError("latency must be >= 0")

    def to_dict(self) -> dict:
        return {
            "provider_id": self.provider_id,
            "operation": self.operation,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "latency": self.latency,
            "outcome": self.outcome,
            "phase": self.phase,
        }


class TranscriptLog:
    """Thread-safe append-only log of provider transcripts.

    The current phase tags new entries; indexing and tree generation run
    inside ``with log.phase("preprocessing"):``.
    """

    def __init__(self) -> None:
        self._entries: list[ProviderTranscript] = []
        self._lock = threading.Lock()
        self._phase = PHASE_RUNTIME

    def append(self, entry: ProviderTranscript) -> None:
        with self._lock:
            self._entries.append(entry)

    def entries(self) -> list[ProviderTranscript]:
        with self._lock:
            return list(self._entries)

    def current_phase(self) -> str:
        return self._phase

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        previous = self._phase
        self._phase = name
        try:
            yield
        finally:
            self._phase = previous

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


# ---------------------------------------------------------------------------
# Provider base


@dataclass
class CompletionResult:
    text: str
    input_tokens: int
    output_tokens: int


class Provider:
    """Shared retry/transcript/concurrency machinery for all backends."""

    def __init__(
        self,
        provider_id: str,
        *,
        transcripts: TranscriptLog | None = None,
        clock: Clock | None = None,
        max_attempts: int = 3,
        backoff_base: float = 0.0,
        max_concurrent: int = 8,
        simulated_latency: float = 0.0,
    ) -> None:
        self.provider_id = provider_id
        self.transcripts = transcripts if transcripts is not None else TranscriptLog()
        self.clock = clock if clock is not None else SystemClock()
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.simulated_latency = simulated_latency
        self._sem = threading.Semaphore(max_concurrent)

    def _run(
        self,
        operation: str,
        fn: Callable[[], object],
        *,
        input_tokens: int,
        output_tokens_of: Callable[[object], int] = lambda _: 0,
        usage_of: Callable[[object], tuple[int, int]] | None = None,
    ):
        """Run ``fn`` with retries; record exactly one transcript entry.

        ``usage_of(result)`` overrides both token counts with API-reported
        usage when the backend provides it.
        """
        with self._sem:
            t0 = self.clock.now()
            attempt = 0
            while True:
                attempt += 1
                try:
                    result = fn()
                    break
                except FatalProviderError:
                    self._record(operation, input_tokens, 0, t0, "failed")
                    raise
                except Exception as exc:
                    if attempt >= self.max_attempts:
                        self._record(operation, input_tokens, 0, t0, "failed")
                        raise ProviderError(
                            f"{self.provider_id}.{operation} failed after "
                            f"{attempt} attempts: {exc}"
                        ) from exc
                    if self.backoff_base > 0:
                        time.sleep(self.backoff_base * 2 ** (attempt - 1))
            if self.simulated_latency > 0:
                self.clock.advance(self.simulated_latency)
            outcome = "ok" if attempt == 1 else "retried"
            in_tok, out_tok = input_tokens, output_tokens_of(result)
            if usage_of is not None:
                in_tok, out_tok = usage_of(result)
            self._record(operation, in_tok, out_tok, t0, outcome)
            return result

    def _record(
        self, operation: str, in_tok: int, out_tok: int, t0: float, outcome: str
    ) -> None:
        self.transcripts.append(
            ProviderTranscript(
                provider_id=self.provider_id,
                operation=operation,
                input_tokens=in_tok,
                output_tokens=out_tok,
                latency=max(self.clock.now() - t0, 0.0),
                outcome=outcome,
                phase=self.transcripts.current_phase(),
            )
        )


class EmbeddingProvider(Provider):
    """Maps texts to fixed-dimension unit-norm vectors.

    ``_embed`` may return just the array or ``(array, (in_tok, out_tok))``
    when the backend reports usage.
    """

    dimension: int

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """Embed ``texts``; returns an array of shape (len(texts), dimension)."""
        if not texts:
            raise ValueError("embed requires at least one text")
        in_tok = sum(count_tokens(t) for t in texts)

        def run():
            out = self._embed(list(texts))
            return out if isinstance(out, tuple) else (out, (in_tok, 0))

        vectors, _ = self._run(
            "embed", run, input_tokens=in_tok, usage_of=lambda r: r[1]
        )
        return vectors

    def _embed(self, texts: list[str]):
        raise NotImplementedError


class CompletionProvider(Provider):
    """Prompt-in, text-out language model.

    ``_complete`` sets the result's token counts (API-reported usage for
    real backends, tokenizer counts for mocks); the transcript records them.
    """

    def complete(self, prompt: str, params: dict | None = None) -> CompletionResult:
        result = self._run(
            "complete",
            lambda: self._complete(prompt, params or {}),
            input_tokens=count_tokens(prompt),
            usage_of=lambda r: (r.input_tokens, r.output_tokens),
        )
        return result

    def _complete(self, prompt: str, params: dict) -> CompletionResult:
        raise NotImplementedError


class RerankerProvider(Provider):
    """Scores (question, text) pairs for fine-grained relevance."""

    def score_pairs(self, question: str, texts: Sequence[str]) -> list[float]:
        if not texts:
            raise ValueError("score_pairs requires at least one text")
        in_tok = count_tokens(question) + sum(count_tokens(t) for t in texts)
        scores = self._run(
            "score_pairs",
            lambda: self._score(question, list(texts)),
            input_tokens=in_tok,
        )
        if len(scores) != len(texts):
            raise ProviderError(
                f"{self.provider_id} returned {len(scores)} scores for {len(texts)} texts"
            )
        return [float(s) for s in scores]

    def _score(self, question: str, texts: list[str]) -> list[float]:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Price tables


@dataclass(frozen=True)
class Price:
    input_per_token: float
    output_per_token: float

    def __post_init__(self) -> None:
        if self.input_per_token < 0 or self.output_per_token < 0:
            raise ValueError("prices must be >= 0")


@dataclass
class PriceTable:
    """Per-provider token prices, shipped as editable JSON config."""

    prices: dict[str, Price] = field(default_factory=dict)

    def get(self, provider_id: str) -> Price:
        try:
            return self.prices[provider_id]
        except KeyError:
            raise MissingPriceError(
                f"no price entry for provider {provider_id!r}"
            ) from None

    @classmethod
    def from_dict(cls, data: dict) -> "PriceTable":
        prices = {
            pid: Price(
                input_per_token=float(entry["input_per_token"]),
                output_per_token=float(entry["output_per_token"]),
            )
            for pid, entry in data.get("providers", {}).items()
        }
        return cls(prices=prices)

    @classmethod
    def load(cls, path: str | Path) -> "PriceTable":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return {
            "providers": {
                pid: {
                    "input_per_token": p.input_per_token,
                    "output_per_token": p.output_per_token,
                }
                for pid, p in sorted(self.prices.items())
            }
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8"
        )


def default_price_table() -> PriceTable:
    """Placeholder prices: zero for offline mocks, unset-by-design entries
    for the commercial tree-generation models (their real price tables are
    not published here; edit the config to taste)."""
    zero = Price(0.0, 0.0)
    return PriceTable(
        prices={
            "mock-llm": zero,
            "mock-embed": zero,
            "mock-reranker": zero,
            "scripted-llm": zero,
            "gpt-4o": Price(2.5e-06, 1.0e-05),
            "gpt-4.1-mini": Price(4.0e-07, 1.6e-06),
            "gemini-2.5-flash": Price(3.0e-07, 2.5e-06),
            "text-embedding-ada-002": Price(1.0e-07, 0.0),
            "rerank-english-v3.0": zero,
            "claude-sonnet-4-5": Price(3.0e-06, 1.5e-05),
        }
    )
