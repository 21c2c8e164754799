"""Hybrid dense + lexical retrieval over embedded chunks.

The index is exact (no ANN): dense search is a full cosine scan over
unit-norm vectors, lexical search is BM25 (k1=1.2, b=0.75, Lucene-style
non-negative idf), and hybrid search fuses the two ranked lists with
reciprocal-rank fusion, ``fused(c) = sum over lists of 1/(60 + rank)``.
Each sub-search retrieves ``max(k, 50)`` candidates before fusion.

BM25 statistics (document frequency, average length, corpus size) are
fixed at build time over the whole index; metadata filters only restrict
the candidate set at query time. BM25 scores sum over the query's unique
terms. Ties anywhere break by chunk_id ascending, so identical inputs
always produce identical ranked lists.

The index is immutable once built and safe to query from many threads;
rebuild instead of updating. Persistence is a versioned JSON file with a
``{dimension, tokenizer_id, chunk count}`` header that round-trips
losslessly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Chunk, tokenize

RRF_CONSTANT = 60
FUSION_CANDIDATE_FLOOR = 50
BM25_K1 = 1.2
BM25_B = 0.75

STAGE_DENSE = "dense"
STAGE_LEXICAL = "lexical"
STAGE_FUSED = "fused"
STAGE_RERANKED = "reranked"

_FILTER_EQ_FIELDS = ("company", "form_type", "fiscal_period")
INDEX_FORMAT = "filingqa-vector-index"
INDEX_FORMAT_VERSION = 1


class VectorIndexError(Exception):
    """Base error for index construction and querying."""


class DuplicateChunkError(VectorIndexError):
    """Two embedded chunks share a chunk_id."""


class DimensionMismatchError(VectorIndexError):
    """Vector dimensionality differs from the index's."""


class UnknownFilterFieldError(VectorIndexError):
    """A filter references a field outside the declared metadata schema."""


@dataclass(frozen=True)
class EmbeddedChunk:
    """A chunk with its unit-norm embedding and filterable metadata."""

    chunk: Chunk
    vector: np.ndarray
    metadata: dict[str, str]

    def __post_init__(self) -> None:
        norm = float(np.linalg.norm(self.vector))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(
                f"vector for {self.chunk.chunk_id} must be unit-norm, got |v|={norm!r}"
            )


@dataclass(frozen=True)
class MetadataFilter:
    """Conjunction of equality and filing-date range predicates.

    Dates are ISO-8601 strings compared lexicographically; both range
    endpoints are inclusive. ``None`` fields do not constrain.
    """

    company: str | None = None
    form_type: str | None = None
    fiscal_period: str | None = None
    filing_date_from: str | None = None
    filing_date_to: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "MetadataFilter":
        allowed = set(_FILTER_EQ_FIELDS) | {"filing_date_from", "filing_date_to"}
        unknown = set(data) - allowed
        if unknown:
            raise UnknownFilterFieldError(
                f"filter references undeclared fields: {sorted(unknown)}"
            )
        return cls(**data)

    def matches(self, metadata: dict[str, str]) -> bool:
        for fname in _FILTER_EQ_FIELDS:
            want = getattr(self, fname)
            if want is not None and metadata.get(fname) != want:
                return False
        date = metadata.get("filing_date", "")
        if self.filing_date_from is not None and date < self.filing_date_from:
            return False
        if self.filing_date_to is not None and date > self.filing_date_to:
            return False
        return True


@dataclass(frozen=True)
class ScoredHit:
    chunk_id: str
    score: float
    stage: str
    rank: int

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "score": self.score,
            "stage": self.stage,
            "rank": self.rank,
        }


def as_hits(scored: Sequence[tuple[str, float]], stage: str) -> list[ScoredHit]:
    """Assign consecutive 1-based ranks to (chunk_id, score) pairs."""
    return [
        ScoredHit(chunk_id=cid, score=float(s), stage=stage, rank=i)
        for i, (cid, s) in enumerate(scored, start=1)
    ]


@dataclass
class VectorIndex:
    """Immutable exact-search index over embedded chunks."""

    dimension: int
    tokenizer_id: str
    chunk_ids: list[str] = field(default_factory=list)
    chunks: list[Chunk] = field(default_factory=list)
    metadata: list[dict[str, str]] = field(default_factory=list)
    vectors: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    _token_lists: list[list[str]] = field(default_factory=list, repr=False)
    _df: dict[str, int] = field(default_factory=dict, repr=False)
    _avgdl: float = 0.0

    def __len__(self) -> int:
        return len(self.chunk_ids)

    # -- construction -------------------------------------------------------

    @classmethod
    def build(
        cls, embedded: Sequence[EmbeddedChunk], tokenizer_id: str = "default"
    ) -> "VectorIndex":
        """Build the index; raises on duplicate ids or mixed dimensions."""
        if not embedded:
            return cls(dimension=0, tokenizer_id=tokenizer_id)
        dim = int(embedded[0].vector.shape[0])
        seen: set[str] = set()
        ids, chunks, meta, vecs, token_lists = [], [], [], [], []
        for ec in embedded:
            if int(ec.vector.shape[0]) != dim:
                raise DimensionMismatchError(
                    f"{ec.chunk.chunk_id}: dimension {ec.vector.shape[0]} != {dim}"
                )
            if ec.chunk.chunk_id in seen:
                raise DuplicateChunkError(f"duplicate chunk_ref {ec.chunk.chunk_id!r}")
            seen.add(ec.chunk.chunk_id)
            ids.append(ec.chunk.chunk_id)
            chunks.append(ec.chunk)
            meta.append(dict(ec.metadata))
            vecs.append(np.asarray(ec.vector, dtype=np.float64))
            token_lists.append(tokenize(ec.chunk.text.lower(), tokenizer_id))
        df: dict[str, int] = {}
        for toks in token_lists:
            for term in set(toks):
                df[term] = df.get(term, 0) + 1
        avgdl = sum(len(t) for t in token_lists) / len(token_lists)
        return cls(
            dimension=dim,
            tokenizer_id=tokenizer_id,
            chunk_ids=ids,
            chunks=chunks,
            metadata=meta,
            vectors=np.vstack(vecs),
            _token_lists=token_lists,
            _df=df,
            _avgdl=avgdl,
        )

    def _candidate_rows(self, flt: MetadataFilter | None) -> list[int]:
        if flt is None:
            return list(range(len(self.chunk_ids)))
        return [i for i, m in enumerate(self.metadata) if flt.matches(m)]

    # -- searches -----------------------------------------------------------

    def dense_search(
        self,
        query_vector: np.ndarray,
        k: int,
        flt: MetadataFilter | None = None,
    ) -> list[ScoredHit]:
        """Top-k by cosine similarity among filter-satisfying chunks."""
        if len(self.chunk_ids) == 0:
            return []
        q = np.asarray(query_vector, dtype=np.float64)
        if q.shape != (self.dimension,):
            raise DimensionMismatchError(
                f"query dimension {q.shape} != ({self.dimension},)"
            )
        rows = self._candidate_rows(flt)
        if not rows:
            return []
        scores = self.vectors[rows] @ q
        order = sorted(
            range(len(rows)), key=lambda j: (-scores[j], self.chunk_ids[rows[j]])
        )
        top = order[: max(k, 0)]
        return as_hits(
            [(self.chunk_ids[rows[j]], float(scores[j])) for j in top], STAGE_DENSE
        )

    def _bm25_idf(self, term: str) -> float:
        n = len(self.chunk_ids)
        df = self._df.get(term, 0)
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def lexical_search(
        self,
        query_text: str,
        k: int,
        flt: MetadataFilter | None = None,
    ) -> list[ScoredHit]:
        """Top-k by BM25 over filter-satisfying chunks; zero scores drop out."""
        if len(self.chunk_ids) == 0:
            return []
        rows = self._candidate_rows(flt)
        if not rows:
            return []
        terms = sorted(set(tokenize(query_text.lower(), self.tokenizer_id)))
        scored: list[tuple[str, float]] = []
        for i in rows:
            toks = self._token_lists[i]
            dl = len(toks)
            score = 0.0
            for term in terms:
                tf = toks.count(term)
                if tf == 0:
                    continue
                norm = tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / self._avgdl)
                score += self._bm25_idf(term) * tf * (BM25_K1 + 1.0) / norm
            if score > 0.0:
                scored.append((self.chunk_ids[i], score))
        scored.sort(key=lambda t: (-t[1], t[0]))
        return as_hits(scored[: max(k, 0)], STAGE_LEXICAL)

    def hybrid_search(
        self,
        query_text: str,
        query_vector: np.ndarray,
        k: int,
        flt: MetadataFilter | None = None,
    ) -> list[ScoredHit]:
        """Reciprocal-rank fusion of the dense and lexical sub-searches."""
        depth = max(k, FUSION_CANDIDATE_FLOOR)
        dense = self.dense_search(query_vector, depth, flt)
        lexical = self.lexical_search(query_text, depth, flt)
        fused: dict[str, float] = {}
        for hits in (dense, lexical):
            for hit in hits:
                fused[hit.chunk_id] = fused.get(hit.chunk_id, 0.0) + 1.0 / (
                    RRF_CONSTANT + hit.rank
                )
        ranked = sorted(fused.items(), key=lambda t: (-t[1], t[0]))
        return as_hits(ranked[: max(k, 0)], STAGE_FUSED)

    # -- persistence --------------------------------------------------------

    def save(self, path: str | Path) -> None:
        payload = {
            "format": INDEX_FORMAT,
            "format_version": INDEX_FORMAT_VERSION,
            "header": {
                "dimension": self.dimension,
                "tokenizer_id": self.tokenizer_id,
                "chunk_count": len(self.chunk_ids),
            },
            "entries": [
                {
                    "chunk": self.chunks[i].to_dict(),
                    "metadata": self.metadata[i],
                    "vector": [float(x) for x in self.vectors[i]],
                }
                for i in range(len(self.chunk_ids))
            ],
        }
        Path(path).write_text(json.dumps(payload) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != INDEX_FORMAT:
            raise VectorIndexError(f"not a vector index file: {path}")
        if payload.get("format_version") != INDEX_FORMAT_VERSION:
            raise VectorIndexError(
                f"unsupported index format_version {payload.get('format_version')}"
            )
        header = payload["header"]
        embedded = [
            EmbeddedChunk(
                chunk=Chunk.from_dict(e["chunk"]),
                vector=np.asarray(e["vector"], dtype=np.float64),
                metadata=e["metadata"],
            )
            for e in payload["entries"]
        ]
        index = cls.build(embedded, tokenizer_id=header["tokenizer_id"])
        if len(index) != header["chunk_count"]:
            raise VectorIndexError(
                f"index file {path} declares {header['chunk_count']} chunks, "
                f"found {len(index)}"
            )
        return index


def build_index(
    embedded: Sequence[EmbeddedChunk], tokenizer_id: str = "default"
) -> VectorIndex:
    return VectorIndex.build(embedded, tokenizer_id=tokenizer_id)
