"""HTTPS provider backends: OpenAI, Cohere, and Anthropic.

All vendor request/response shapes live here and nowhere else. API keys
come from environment variables (constructor ``api_key_env`` names them;
defaults: OPENAI_API_KEY, COHERE_API_KEY, ANTHROPIC_API_KEY), base URLs
from OPENAI_BASE_URL / COHERE_BASE_URL / ANTHROPIC_BASE_URL. A custom
``httpx.Client`` may be injected, which is how the tests exercise the
request shapes without a network.

HTTP 4xx responses other than 429 are not retried; 429, 5xx, and
transport errors retry with exponential backoff.
"""

from __future__ import annotations

import os

import httpx
import numpy as np

from . import (
    CompletionProvider,
    CompletionResult,
    EmbeddingProvider,
    FatalProviderError,
    RerankerProvider,
)

_OPENAI_URL = "https://api.openai.com/v1"
_COHERE_URL = "https://api.cohere.com"
_ANTHROPIC_URL = "https://api.anthropic.com"
ANTHROPIC_VERSION = "2023-06-01"


def _require_env(name: str) -> str:
    value = os.environ.get(name)
    if not value:
        raise KeyError(name)
    return value


def _post(client: httpx.Client, url: str, headers: dict, payload: dict) -> dict:
    response = client.post(url, headers=headers, json=payload, timeout=60.0)
    if response.status_code >= 400:
        detail = response.text[:500]
        if response.status_code == 429 or response.status_code >= 500:
            raise RuntimeError(f"HTTP {response.status_code}: {detail}")  # retryable
        raise FatalProviderError(f"HTTP {response.status_code}: {detail}")
    return response.json()


class OpenAIEmbeddingProvider(EmbeddingProvider):
    """POST /embeddings; vectors re-normalized to exactly unit norm."""

    def __init__(
        self,
        model: str = "text-embedding-ada-002",
        api_key_env: str = "OPENAI_API_KEY",
        client: httpx.Client | None = None,
        **kwargs,
    ) -> None:
        kwargs.setdefault("provider_id", model)
        kwargs.setdefault("backoff_base", 0.5)
        super().__init__(**kwargs)
        self.model = model
        self._api_key = _require_env(api_key_env)
        self._base = os.environ.get("OPENAI_BASE_URL", _OPENAI_URL).rstrip("/")
        self._client = client if client is not None else httpx.Client()
        self.dimension = 0  # learned from the first response

    def _embed(self, texts: list[str]):
        data = _post(
            self._client,
            f"{self._base}/embeddings",
            {"Authorization": f"Bearer {self._api_key}"},
            {"model": self.model, "input": texts},
        )
        rows = sorted(data["data"], key=lambda d: d["index"])
        vectors = np.asarray([r["embedding"] for r in rows], dtype=np.float64)
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        vectors = vectors / np.where(norms == 0, 1.0, norms)
        self.dimension = vectors.shape[1]
        usage = data.get("usage", {})
        return vectors, (int(usage.get("prompt_tokens", 0)), 0)


class OpenAIChatProvider(CompletionProvider):
    """POST /chat/completions with a single user message."""

    def __init__(
        self,
        model: str = "gpt-4o",
        api_key_env: str = "OPENAI_API_KEY",
        client: httpx.Client | None = None,
        **kwargs,
    ) -> None:
        kwargs.setdefault("provider_id", model)
        kwargs.setdefault("backoff_base", 0.5)
        super().__init__(**kwargs)
        self.model = model
        self._api_key = _require_env(api_key_env)
        self._base = os.environ.get("OPENAI_BASE_URL", _OPENAI_URL).rstrip("/")
        self._client = client if client is not None else httpx.Client()

    def _complete(self, prompt: str, params: dict) -> CompletionResult:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.get("temperature", 0.0),
        }
        if "max_tokens" in params:
            payload["max_tokens"] = params["max_tokens"]
        data = _post(
            self._client,
            f"{self._base}/chat/completions",
            {"Authorization": f"Bearer {self._api_key}"},
            payload,
        )
        usage = data.get("usage", {})
        return CompletionResult(
            text=data["choices"][0]["message"]["content"],
            input_tokens=int(usage.get("prompt_tokens", 0)),
            output_tokens=int(usage.get("completion_tokens", 0)),
        )


class AnthropicChatProvider(CompletionProvider):
    """POST /v1/messages (the judge default in shipped configs)."""

    def __init__(
        self,
        model: str = "claude-sonnet-4-5",
        api_key_env: str = "ANTHROPIC_API_KEY",
        max_tokens: int = 2048,
        client: httpx.Client | None = None,
        **kwargs,
    ) -> None:
        kwargs.setdefault("provider_id", model)
        kwargs.setdefault("backoff_base", 0.5)
        super().__init__(**kwargs)
        self.model = model
        self.max_tokens = max_tokens
        self._api_key = _require_env(api_key_env)
        self._base = os.environ.get("ANTHROPIC_BASE_URL", _ANTHROPIC_URL).rstrip("/")
        self._client = client if client is not None else httpx.Client()

    def _complete(self, prompt: str, params: dict) -> CompletionResult:
        data = _post(
            self._client,
            f"{self._base}/v1/messages",
            {"x-api-key": self._api_key, "anthropic-version": ANTHROPIC_VERSION},
            {
                "model": self.model,
                "max_tokens": params.get("max_tokens", self.max_tokens),
                "messages": [{"role": "user", "content": prompt}],
            },
        )
        usage = data.get("usage", {})
        return CompletionResult(
            text="".join(
                block["text"] for block in data["content"] if block["type"] == "text"
            ),
            input_tokens=int(usage.get("input_tokens", 0)),
            output_tokens=int(usage.get("output_tokens", 0)),
        )


class CohereRerankProvider(RerankerProvider):
    """POST /v2/rerank; scores returned in the input documents' order."""

    def __init__(
        self,
        model: str = "rerank-english-v3.0",
        api_key_env: str = "COHERE_API_KEY",
        client: httpx.Client | None = None,
        **kwargs,
    ) -> None:
        kwargs.setdefault("provider_id", model)
        kwargs.setdefault("backoff_base", 0.5)
        super().__init__(**kwargs)
        self.model = model
        self._api_key = _require_env(api_key_env)
        self._base = os.environ.get("COHERE_BASE_URL", _COHERE_URL).rstrip("/")
        self._client = client if client is not None else httpx.Client()

    def _score(self, question: str, texts: list[str]) -> list[float]:
        data = _post(
            self._client,
            f"{self._base}/v2/rerank",
            {"Authorization": f"Bearer {self._api_key}"},
            {
                "model": self.model,
                "query": question,
                "documents": texts,
                "top_n": len(texts),
            },
        )
        scores = [0.0] * len(texts)
        for row in data["results"]:
            scores[int(row["index"])] = float(row["relevance_score"])
        return scores
