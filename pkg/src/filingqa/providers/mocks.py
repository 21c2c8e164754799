"""Deterministic offline providers.

Everything here is a pure function of (seed, input): no network, no
global state, identical outputs across processes and platforms. These
are the default providers, so the whole pipeline runs and benchmarks
reproducibly without credentials.

Mock embedding scheme (oracle-tested, keep in sync with its test):
the text is lowercased and tokenized with the default tokenizer; each
token contributes a standard-normal vector drawn from
``numpy.random.default_rng`` seeded with the first 8 bytes of
``sha256("{seed}|{token}")``; the token vectors are summed and the sum
is L2-normalized. Empty text embeds as the empty-string token.

Noisy scorer noise model (oracle-tested): uniform noise in
[-amplitude, +amplitude] derived from
``sha256("{seed}|{question}|{text}")`` added to a gold-aware base score
of 1.0 (page span intersects that question's gold pages) or 0.0.
"""

from __future__ import annotations

import hashlib
import json
import re

import numpy as np

from ..corpus import ChunkStore, content_tokens, count_tokens, tokenize
from ..prompting import prompt_marker, section, sections_matching
from . import (
    CompletionProvider,
    CompletionResult,
    EmbeddingProvider,
    RerankerProvider,
    UnscriptedPromptError,
)


def _digest64(key: str) -> int:
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")


# ---------------------------------------------------------------------------
# Embeddings


class HashEmbedding(EmbeddingProvider):
    """Seeded token-hash embedding; see the module docstring for the scheme."""

    def __init__(self, dim: int = 256, seed: int = 0, **kwargs) -> None:
        kwargs.setdefault("provider_id", "mock-embed")
        kwargs.setdefault("simulated_latency", 0.002)
        super().__init__(**kwargs)
        self.dimension = dim
        self.seed = seed

    def token_vector(self, token: str) -> np.ndarray:
        rng = np.random.default_rng(_digest64(f"{self.seed}|{token}"))
        return rng.standard_normal(self.dimension)

    def _embed(self, texts: list[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dimension), dtype=np.float64)
        for i, text in enumerate(texts):
            tokens = tokenize(text.lower()) or [""]
            v = np.zeros(self.dimension, dtype=np.float64)
            for tok in tokens:
                v += self.token_vector(tok)
            norm = float(np.linalg.norm(v))
            if norm < 1e-12:
                v = self.token_vector("")
                norm = float(np.linalg.norm(v))
            out[i] = v / norm
        return out


# ---------------------------------------------------------------------------
# Completions


class ScriptedCompletion(CompletionProvider):
    """Replays registered replies keyed by prompt.

    Lookup order: exact prompt match, then substring rules in registration
    order, then the default reply. In strict mode an unmatched prompt
    raises :class:`UnscriptedPromptError`. Registered replies may override
    the transcripted token counts (so tests can pin exact usage numbers).
    """

    def __init__(self, strict: bool = True, default_reply: str | None = None, **kwargs):
        kwargs.setdefault("provider_id", "scripted-llm")
        super().__init__(**kwargs)
        self.strict = strict
        self.default_reply = default_reply
        self._exact: dict[str, tuple[str, int | None, int | None]] = {}
        self._contains: list[tuple[str, str, int | None, int | None]] = []
        self.calls: list[str] = []

    def register(
        self,
        prompt: str,
        reply: str,
        *,
        input_tokens: int | None = None,
        output_tokens: int | None = None,
    ) -> None:
        self._exact[prompt] = (reply, input_tokens, output_tokens)

    def register_contains(
        self,
        substring: str,
        reply: str,
        *,
        input_tokens: int | None = None,
        output_tokens: int | None = None,
    ) -> None:
        self._contains.append((substring, reply, input_tokens, output_tokens))

    def _lookup(self, prompt: str) -> tuple[str, int | None, int | None]:
        if prompt in self._exact:
            return self._exact[prompt]
        for substring, reply, in_tok, out_tok in self._contains:
            if substring in prompt:
                return reply, in_tok, out_tok
        if self.default_reply is not None:
            return self.default_reply, None, None
        if self.strict:
            raise UnscriptedPromptError(
                f"no scripted reply for prompt starting {prompt[:80]!r}"
            )
        return "", None, None

    def _complete(self, prompt: str, params: dict) -> CompletionResult:
        self.calls.append(prompt)
        reply, in_tok, out_tok = self._lookup(prompt)
        return CompletionResult(
            text=reply,
            input_tokens=in_tok if in_tok is not None else count_tokens(prompt),
            output_tokens=out_tok if out_tok is not None else count_tokens(reply),
        )


class RuleBasedLLM(CompletionProvider):
    """Deterministic stand-in for the agent/judge/tree models.

    Dispatches on the prompt's template marker and answers each prompt
    family with a simple lexical rule, which keeps the full offline
    pipeline meaningful: queries keep the question's content terms,
    grading checks term overlap, generation is extractive, traversal
    picks the best-matching outline node, and tree generation reuses the
    heading scanner.
    """

    def __init__(self, **kwargs) -> None:
        kwargs.setdefault("provider_id", "mock-llm")
        kwargs.setdefault("simulated_latency", 0.01)
        super().__init__(**kwargs)

    def _complete(self, prompt: str, params: dict) -> CompletionResult:
        marker = prompt_marker(prompt)
        name = marker.split()[2] if marker else ""
        if name == "repair":
            inner = section(prompt, "ORIGINAL_REQUEST")
            return self._complete(inner, params)
        handler = {
            "formulate": self._formulate,
            "grade": self._grade,
            "rewrite": self._rewrite,
            "generate": self._generate,
            "traverse": self._traverse,
            "tree-gen": self._tree_gen,
            "judge": self._judge,
        }.get(name, self._fallback)
        reply = handler(prompt)
        return CompletionResult(
            text=reply,
            input_tokens=count_tokens(prompt),
            output_tokens=count_tokens(reply),
        )

    @staticmethod
    def _fallback(prompt: str) -> str:
        return "CONTEXT_INSUFFICIENT"

    @staticmethod
    def _formulate(prompt: str) -> str:
        question = section(prompt, "QUESTION")
        k_text = section(prompt, "RETRIEVAL_K")
        terms = content_tokens(question) or tokenize(question.lower())
        payload = {"query_text": " ".join(terms), "k": int(k_text or 5), "filter": None}
        return json.dumps(payload)

    @staticmethod
    def _grade(prompt: str) -> str:
        qterms = set(content_tokens(section(prompt, "QUESTION")))
        verdicts = [
            bool(qterms & set(content_tokens(body)))
            for name, _, body in sections_matching(prompt, "PASSAGE[")
        ]
        return json.dumps(verdicts)

    @staticmethod
    def _rewrite(prompt: str) -> str:
        question = section(prompt, "QUESTION")
        failed = section(prompt, "FAILED_QUERY")
        have = set(tokenize(failed.lower()))
        extra = [t for t in content_tokens(question) if t not in have]
        return f"{failed} {' '.join(extra)}".strip() if extra else failed

    @staticmethod
    def _split_sentences(text: str) -> list[str]:
        flat = " ".join(text.split())
        return [p.strip() for p in re.split(r"(?<=[.!?])\s+", flat) if p.strip()]

    def _generate(self, prompt: str) -> str:
        qterms = set(content_tokens(section(prompt, "QUESTION")))
        best, best_score = "", 0
        for name, _, body in sections_matching(prompt, "CONTEXT["):
            for sentence in self._split_sentences(body):
                score = len(qterms & set(content_tokens(sentence)))
                if score > best_score:
                    best, best_score = sentence, score
        return best if best_score > 0 else "CONTEXT_INSUFFICIENT"

    @staticmethod
    def _traverse(prompt: str) -> str:
        qterms = set(content_tokens(section(prompt, "QUESTION")))
        best_id, best_score = None, -1
        for line in section(prompt, "OUTLINE").split("\n"):
            m = re.match(r"\s*(\S+) \| pages (\d+)-(\d+) \| (.*)$", line)
            if not m:
                continue
            node_id, desc = m.group(1), m.group(4)
            score = len(qterms & set(content_tokens(desc)))
            if score > best_score or (score == best_score and best_id is None):
                best_id, best_score = node_id, score
        return json.dumps([best_id] if best_id is not None else [])

    @staticmethod
    def _tree_gen(prompt: str) -> str:
        from ..node_tree import build_tree_from_headings

        with_summaries = "summary field" in prompt
        doc_name = section(prompt, "DOC_NAME")
        document = section(prompt, "DOCUMENT")
        pages: list[str] = []
        current: list[str] | None = None
        for line in document.split("\n"):
            if re.match(r"^\[page \d+\]$", line):
                if current is not None:
                    pages.append("\n".join(current))
                current = []
            elif current is not None:
                current.append(line)
        if current is not None:
            pages.append("\n".join(current))
        tree = build_tree_from_headings(
            doc_name, pages or [document], with_summaries=with_summaries
        )
        return tree.to_json()

    @staticmethod
    def _judge(prompt: str) -> str:
        qterms = set(content_tokens(section(prompt, "QUESTION")))
        a = section(prompt, "ANSWER_A")
        b = section(prompt, "ANSWER_B")

        def overlap(ans: str) -> int:
            return len(qterms & set(content_tokens(ans)))

        def pick(va: float, vb: float, higher_wins: bool = True) -> str:
            if va == vb:
                return "tie"
            return ("A" if va > vb else "B") if higher_wins else ("A" if va < vb else "B")

        relevance_pick = pick(overlap(a), overlap(b))
        verdict = {
            "accuracy": relevance_pick,
            "completeness": pick(len(content_tokens(a)), len(content_tokens(b))),
            "clarity": relevance_pick,
            "conciseness": pick(count_tokens(a), count_tokens(b), higher_wins=False),
            "relevance": relevance_pick,
            "style": "tie",
        }
        wins_a = sum(1 for v in verdict.values() if v == "A")
        wins_b = sum(1 for v in verdict.values() if v == "B")
        verdict["overall"] = "A" if wins_a > wins_b else "B" if wins_b > wins_a else "tie"
        return json.dumps(verdict)


# ---------------------------------------------------------------------------
# Reranker scorers


class LexicalOverlapScorer(RerankerProvider):
    """score = |content_tokens(question) ∩ content_tokens(text)| / |content_tokens(question)|."""

    def __init__(self, **kwargs) -> None:
        kwargs.setdefault("provider_id", "mock-reranker")
        kwargs.setdefault("simulated_latency", 0.005)
        super().__init__(**kwargs)

    def _score(self, question: str, texts: list[str]) -> list[float]:
        q = set(content_tokens(question))
        if not q:
            return [0.0] * len(texts)
        return [len(q & set(content_tokens(t))) / len(q) for t in texts]


class OracleScorer(RerankerProvider):
    """Gold-aware scorer: 1.0 for chunks intersecting the question's gold pages.

    The provider scoring contract passes chunk texts, so texts are
    resolved back to chunks by exact match against the configured store
    (first match wins; synthetic fixtures keep texts unique).
    """

    def __init__(
        self,
        store: ChunkStore,
        gold_by_question: dict[str, tuple[str, frozenset[int]]],
        **kwargs,
    ) -> None:
        kwargs.setdefault("provider_id", "mock-reranker")
        kwargs.setdefault("simulated_latency", 0.005)
        super().__init__(**kwargs)
        self._gold = gold_by_question
        self._by_text: dict[str, tuple[str, int, int]] = {}
        for chunk in store.all_chunks():
            self._by_text.setdefault(chunk.text, (chunk.doc_id, chunk.page_start, chunk.page_end))

    def base_score(self, question: str, text: str) -> float:
        gold = self._gold.get(question)
        located = self._by_text.get(text)
        if gold is None or located is None:
            return 0.0
        doc_id, pages = gold
        cdoc, p0, p1 = located
        return 1.0 if cdoc == doc_id and any(p0 <= p <= p1 for p in pages) else 0.0

    def _score(self, question: str, texts: list[str]) -> list[float]:
        return [self.base_score(question, t) for t in texts]


class NoisyOracleScorer(OracleScorer):
    """OracleScorer plus seeded uniform noise; see the module docstring."""

    def __init__(self, *args, amplitude: float = 0.6, seed: int = 0, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.amplitude = amplitude
        self.seed = seed

    def noise(self, question: str, text: str) -> float:
        u = _digest64(f"{self.seed}|{question}|{text}") / 2**64
        return self.amplitude * (2.0 * u - 1.0)

    def _score(self, question: str, texts: list[str]) -> list[float]:
        return [self.base_score(question, t) + self.noise(question, t) for t in texts]
