"""Shared fixtures: the demo corpus, the reference tree, synthetic stores."""

from __future__ import annotations

import time
from pathlib import Path

import pytest

from filingqa.corpus import (
    Chunk,
    ChunkingConfig,
    ChunkStore,
    Document,
    chunk_id_for,
)
from filingqa.node_tree import NodeTree, parse_tree

FIXTURES = Path(__file__).parent / "fixtures"
CORPUS_DIR = FIXTURES / "corpus"
BENCHMARK_PATH = FIXTURES / "benchmark.jsonl"
REFERENCE_TREE_PATH = FIXTURES / "reference_tree.json"


@pytest.fixture(scope="session")
def reference_tree_text() -> str:
    return REFERENCE_TREE_PATH.read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def reference_tree(reference_tree_text) -> NodeTree:
    return parse_tree(reference_tree_text)


@pytest.fixture(scope="session")
def reference_doc() -> Document:
    """A 28-page document matching the reference tree's page ranges."""
    pages = tuple(
        f"Fixture page {p} body text about filings and figure {p}." for p in range(1, 29)
    )
    return Document(
        doc_id="ref-report",
        company="Fixture Fed",
        form_type="10-K",
        fiscal_period="FY2023",
        filing_date="2024-01-15",
        pages=pages,
    )


def one_chunk_per_page(doc_id: str, pages: list[str]) -> list[Chunk]:
    """Hand-built chunks, exactly one per page (synthetic retrieval tests)."""
    chunks = []
    offset = 0
    from filingqa.corpus import count_tokens

    for i, text in enumerate(pages):
        n = count_tokens(text)
        chunks.append(
            Chunk(
                chunk_id=chunk_id_for(doc_id, i),
                doc_id=doc_id,
                index=i,
                token_start=offset,
                token_end=offset + n,
                text=text,
                page_start=i + 1,
                page_end=i + 1,
            )
        )
        offset += n
    return chunks


class DelayedStore(ChunkStore):
    """Chunk store with a simulated per-fetch delay (wall-clock sleeps)."""

    def __init__(self, base: ChunkStore, delay: float) -> None:
        super().__init__()
        self._base = base
        self.delay = delay
        self.fetches = 0

    def get(self, chunk_id: str) -> Chunk:
        time.sleep(self.delay)
        self.fetches += 1
        return self._base.get(chunk_id)

    def doc_chunk_count(self, doc_id: str) -> int:
        return self._base.doc_chunk_count(doc_id)

    def doc_ids(self) -> list[str]:
        return self._base.doc_ids()

    def chunks_for_doc(self, doc_id: str):
        return self._base.chunks_for_doc(doc_id)

    def all_chunks(self):
        return self._base.all_chunks()


@pytest.fixture()
def demo_chunking() -> ChunkingConfig:
    return ChunkingConfig(chunk_size=64, overlap=8)
