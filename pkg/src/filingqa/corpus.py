"""Filing ingestion and token chunking.

A corpus is a directory of pre-extracted filings: one ``.txt`` file per
filing with form-feed (U+000C) page delimiters, plus a ``.json`` metadata
sidecar ``{doc_id, company, form_type, fiscal_period, filing_date}``.

Chunking slides a fixed-size token window over the document's token
sequence (default 512 tokens, 50-token overlap, stride = size - overlap).
The final chunk may be shorter and is kept. Each chunk records its token
offsets and the 1-based page span its tokens fall on.

The default tokenizer is rule-based and deterministic: maximal runs of
word characters (``[A-Za-z0-9_]``) are one token each, and every other
non-whitespace character is a single token. Providers with different
token units can be registered under their own id.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

FORM_TYPES = ("10-K", "10-Q", "8-K")
PAGE_DELIMITER = "\f"

_WORD_PUNCT = re.compile(r"\w+|[^\w\s]")


class CorpusError(Exception):
    """Base error for corpus ingestion and chunking."""


class EmptyDocumentError(CorpusError):
    """The source text contains no pages or no tokens."""


class MetadataError(CorpusError):
    """The metadata sidecar is missing, malformed, or incomplete."""


class UnknownTokenizerError(CorpusError):
    """tokenizer_id has not been registered."""


@dataclass(frozen=True)
class Document:
    """One ingested filing with 1-based contiguous page numbering."""

    doc_id: str
    company: str
    form_type: str
    fiscal_period: str
    filing_date: str
    pages: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.pages:
            raise EmptyDocumentError(f"document {self.doc_id!r} has no pages")
        if self.form_type not in FORM_TYPES:
            raise MetadataError(
                f"form_type must be one of {FORM_TYPES}, got {self.form_type!r}"
            )

    @property
    def page_count(self) -> int:
        return len(self.pages)

    def metadata(self) -> dict[str, str]:
        return {
            "company": self.company,
            "form_type": self.form_type,
            "fiscal_period": self.fiscal_period,
            "filing_date": self.filing_date,
        }


@dataclass(frozen=True)
class ChunkingConfig:
    chunk_size: int = 512
    overlap: int = 50
    tokenizer_id: str = "default"

    def __post_init__(self) -> None:
        if self.chunk_size <= 0:
            raise ValueError(f"chunk_size must be positive, got {self.chunk_size}")
        if not 0 <= self.overlap < self.chunk_size:
            raise ValueError(
                f"overlap must satisfy 0 <= overlap < chunk_size, "
                f"got overlap={self.overlap}, chunk_size={self.chunk_size}"
            )

    @property
    def stride(self) -> int:
        return self.chunk_size - self.overlap


@dataclass(frozen=True)
class Chunk:
    """A token window of one document.

    ``chunk_id`` is ``"{doc_id}:{index}"`` for stable cross-stage joins.
    Token offsets index the document's token sequence; pages are 1-based.
    """

    chunk_id: str
    doc_id: str
    index: int
    token_start: int
    token_end: int
    text: str
    page_start: int
    page_end: int

    def pages(self) -> range:
        return range(self.page_start, self.page_end + 1)

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "index": self.index,
            "token_start": self.token_start,
            "token_end": self.token_end,
            "text": self.text,
            "page_start": self.page_start,
            "page_end": self.page_end,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Chunk":
        return cls(**d)


def chunk_id_for(doc_id: str, index: int) -> str:
    return f"{doc_id}:{index}"


def split_chunk_id(chunk_id: str) -> tuple[str, int]:
    doc_id, _, idx = chunk_id.rpartition(":")
    if not doc_id:
        raise ValueError(f"malformed chunk_id {chunk_id!r}")
    return doc_id, int(idx)


# ---------------------------------------------------------------------------
# Tokenizers


def _default_span_tokenize(text: str) -> list[tuple[str, int, int]]:
    return [(m.group(0), m.start(), m.end()) for m in _WORD_PUNCT.finditer(text)]


def _whitespace_span_tokenize(text: str) -> list[tuple[str, int, int]]:
    return [
        (m.group(0), m.start(), m.end()) for m in re.finditer(r"\S+", text)
    ]


# tokenizer_id -> span tokenizer fn(text) -> [(token, char_start, char_end)]
_TOKENIZERS: dict[str, Callable[[str], list[tuple[str, int, int]]]] = {
    "default": _default_span_tokenize,
    "whitespace": _whitespace_span_tokenize,
}


def register_tokenizer(
    tokenizer_id: str, fn: Callable[[str], list[tuple[str, int, int]]]
) -> None:
    """Register a span tokenizer: fn(text) -> [(token, char_start, char_end)]."""
    _TOKENIZERS[tokenizer_id] = fn


def span_tokenize(text: str, tokenizer_id: str = "default") -> list[tuple[str, int, int]]:
    try:
        fn = _TOKENIZERS[tokenizer_id]
    except KeyError:
        raise UnknownTokenizerError(f"unknown tokenizer_id {tokenizer_id!r}") from None
    return fn(text)


def tokenize(text: str, tokenizer_id: str = "default") -> list[str]:
    """Deterministic token sequence for ``text`` under a registered tokenizer."""
    return [tok for tok, _, _ in span_tokenize(text, tokenizer_id)]


def count_tokens(text: str, tokenizer_id: str = "default") -> int:
    return len(span_tokenize(text, tokenizer_id))


STOPWORDS = frozenset(
    """a an and are as at be by did do does for from had has have how in is it
    its of on or that the their this to was were what when which who will with
    during per most""".split()
)


def content_tokens(text: str) -> list[str]:
    """Lowercased default-tokenizer tokens minus stopwords and punctuation."""
    return [
        t
        for t in tokenize(text.lower())
        if t not in STOPWORDS and any(c.isalnum() for c in t)
    ]


# ---------------------------------------------------------------------------
# Ingestion


def split_pages(text: str) -> list[str]:
    """Split raw filing text on form feeds; a trailing delimiter adds no page."""
    pages = text.split(PAGE_DELIMITER)
    if len(pages) > 1 and pages[-1] == "":
        pages.pop()
    return pages


def ingest_document(path: str | Path, metadata: dict | None = None) -> Document:
    """Load one filing text file into a :class:`Document`.

    ``metadata`` defaults to the JSON sidecar next to ``path`` (same stem,
    ``.json`` extension).
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"no such file: {path}")
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise EmptyDocumentError(f"empty document: {path}")

    if metadata is None:
        sidecar = path.with_suffix(".json")
        if not sidecar.exists():
            raise MetadataError(f"missing metadata sidecar: {sidecar}")
        try:
            metadata = json.loads(sidecar.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise MetadataError(f"malformed metadata sidecar {sidecar}: {exc}") from exc

    required = ("doc_id", "company", "form_type", "fiscal_period", "filing_date")
    missing = [k for k in required if k not in metadata]
    if missing:
        raise MetadataError(f"metadata for {path} missing fields: {missing}")

    return Document(
        doc_id=metadata["doc_id"],
        company=metadata["company"],
        form_type=metadata["form_type"],
        fiscal_period=metadata["fiscal_period"],
        filing_date=metadata["filing_date"],
        pages=tuple(split_pages(text)),
    )


def iter_corpus(corpus_dir: str | Path) -> Iterator[Path]:
    """Yield filing text files in a corpus directory, sorted by name."""
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise CorpusError(f"not a corpus directory: {corpus_dir}")
    yield from sorted(corpus_dir.glob("*.txt"))


# ---------------------------------------------------------------------------
# Chunking


def expected_chunk_count(n_tokens: int, cfg: ChunkingConfig) -> int:
    """1 if N <= chunk_size else ceil((N - chunk_size) / stride) + 1."""
    if n_tokens <= cfg.chunk_size:
        return 1
    return math.ceil((n_tokens - cfg.chunk_size) / cfg.stride) + 1


def chunk_offsets(n_tokens: int, cfg: ChunkingConfig) -> list[tuple[int, int]]:
    """(token_start, token_end) windows over a sequence of ``n_tokens`` tokens."""
    if n_tokens <= 0:
        raise EmptyDocumentError("cannot chunk an empty token sequence")
    count = expected_chunk_count(n_tokens, cfg)
    return [
        (i * cfg.stride, min(i * cfg.stride + cfg.chunk_size, n_tokens))
        for i in range(count)
    ]


def document_tokens(
    doc: Document, tokenizer_id: str = "default"
) -> list[tuple[str, int, int, int]]:
    """Document token sequence as (token, page_number, char_start, char_end).

    Character offsets are within the token's own page text. The page
    delimiter itself is never a token.
    """
    toks: list[tuple[str, int, int, int]] = []
    for page_no, page_text in enumerate(doc.pages, start=1):
        for tok, start, end in span_tokenize(page_text, tokenizer_id):
            toks.append((tok, page_no, start, end))
    return toks


def _window_text(
    doc: Document, toks: list[tuple[str, int, int, int]], start: int, end: int
) -> str:
    """Original text of tokens [start:end), page slices joined with newlines."""
    parts: list[str] = []
    i = start
    while i < end:
        page_no = toks[i][1]
        j = i
        while j < end and toks[j][1] == page_no:
            j += 1
        page_text = doc.pages[page_no - 1]
        parts.append(page_text[toks[i][2] : toks[j - 1][3]])
        i = j
    return "\n".join(parts)


def chunk_document(doc: Document, cfg: ChunkingConfig = ChunkingConfig()) -> list[Chunk]:
    """Split a document into overlapping token-window chunks.

    Raises :class:`EmptyDocumentError` when the document has no tokens.
    """
    toks = document_tokens(doc, cfg.tokenizer_id)
    chunks: list[Chunk] = []
    for index, (start, end) in enumerate(chunk_offsets(len(toks), cfg)):
        chunks.append(
            Chunk(
                chunk_id=chunk_id_for(doc.doc_id, index),
                doc_id=doc.doc_id,
                index=index,
                token_start=start,
                token_end=end,
                text=_window_text(doc, toks, start, end),
                page_start=toks[start][1],
                page_end=toks[end - 1][1],
            )
        )
    return chunks


def reconstruct_tokens(chunks: list[Chunk], cfg: ChunkingConfig) -> list[str]:
    """Rebuild the document token sequence from its chunks.

    Overlap regions are deduplicated by taking only tokens past the previous
    chunk's end from each subsequent chunk.
    """
    tokens: list[str] = []
    prev_end = 0
    for chunk in sorted(chunks, key=lambda c: c.index):
        ctoks = tokenize(chunk.text, cfg.tokenizer_id)
        fresh = prev_end - chunk.token_start
        tokens.extend(ctoks[fresh:])
        prev_end = chunk.token_end
    return tokens


# ---------------------------------------------------------------------------
# Chunk store


class StoreError(KeyError):
    """A chunk_ref could not be resolved in the store."""


@dataclass
class ChunkStore:
    """In-memory chunk lookup keyed by chunk_id, with per-document extents."""

    _by_id: dict[str, Chunk] = field(default_factory=dict)
    _doc_counts: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_chunks(cls, chunks: list[Chunk]) -> "ChunkStore":
        store = cls()
        for chunk in chunks:
            store.add(chunk)
        return store

    def add(self, chunk: Chunk) -> None:
        if chunk.chunk_id in self._by_id:
            raise ValueError(f"duplicate chunk_id {chunk.chunk_id!r}")
        self._by_id[chunk.chunk_id] = chunk
        prev = self._doc_counts.get(chunk.doc_id, 0)
        self._doc_counts[chunk.doc_id] = max(prev, chunk.index + 1)

    def get(self, chunk_id: str) -> Chunk:
        try:
            return self._by_id[chunk_id]
        except KeyError:
            raise StoreError(f"unknown chunk_ref {chunk_id!r}") from None

    def __contains__(self, chunk_id: str) -> bool:
        return chunk_id in self._by_id

    def __len__(self) -> int:
        return len(self._by_id)

    def doc_ids(self) -> list[str]:
        return sorted(self._doc_counts)

    def doc_chunk_count(self, doc_id: str) -> int:
        return self._doc_counts.get(doc_id, 0)

    def chunks_for_doc(self, doc_id: str) -> list[Chunk]:
        n = self.doc_chunk_count(doc_id)
        return [self.get(chunk_id_for(doc_id, i)) for i in range(n)]

    def all_chunks(self) -> list[Chunk]:
        return [self._by_id[k] for k in sorted(self._by_id)]
