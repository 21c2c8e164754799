"""Small-to-big retrieval: widen each hit with its positional neighbors.

For a target chunk at index ``idx``, the expansion pulls chunks
``idx-window .. idx+window`` clamped to the chunk's own document (windows
never cross filings), deduplicates overlapping windows, and orders the
final context by (doc_id, chunk index). Sync and async fetch modes return
byte-identical context; async only parallelizes the store fetches, with
order fixed by index rather than completion time. Any failed fetch fails
the whole expansion; there is no partial context.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .corpus import Chunk, ChunkStore, StoreError, chunk_id_for, split_chunk_id
from .vector_index import ScoredHit

ROLE_TARGET = "target"
ROLE_NEIGHBOR = "neighbor"


@dataclass(frozen=True)
class ExpansionConfig:
    window: int = 1
    fetch_mode: str = "sync"
    max_parallel: int = 8

    def __post_init__(self) -> None:
        if self.window < 0:
            raise ValueError(f"window must be >= 0, got {self.window}")
        if self.fetch_mode not in ("sync", "async"):
            raise ValueError(f"fetch_mode must be sync or async, got {self.fetch_mode!r}")
        if self.max_parallel < 1:
            raise ValueError(f"max_parallel must be >= 1, got {self.max_parallel}")


@dataclass(frozen=True)
class ContextEntry:
    chunk: Chunk
    role: str  # target | neighbor

    @property
    def is_target(self) -> bool:
        return self.role == ROLE_TARGET


@dataclass
class ExpandedContext:
    entries: list[ContextEntry] = field(default_factory=list)

    @property
    def chunks(self) -> list[Chunk]:
        return [e.chunk for e in self.entries]

    @property
    def text(self) -> str:
        return "\n\n".join(e.chunk.text for e in self.entries)

    def provenance(self) -> list[dict]:
        return [
            {
                "chunk_id": e.chunk.chunk_id,
                "doc_id": e.chunk.doc_id,
                "index": e.chunk.index,
                "pages": [e.chunk.page_start, e.chunk.page_end],
                "role": e.role,
            }
            for e in self.entries
        ]

    def __len__(self) -> int:
        return len(self.entries)


def expansion_ids(targets: Sequence[ScoredHit], window: int, store: ChunkStore) -> list[str]:
    """Deduplicated chunk ids of targets plus their clamped windows,
    ordered by (doc_id, index)."""
    wanted: set[tuple[str, int]] = set()
    for hit in targets:
        doc_id, idx = split_chunk_id(hit.chunk_id)
        last = store.doc_chunk_count(doc_id) - 1
        if last < 0 or not 0 <= idx <= last:
            raise StoreError(f"unknown chunk_ref {hit.chunk_id!r}")
        lo = max(idx - window, 0)
        hi = min(idx + window, last)
        wanted.update((doc_id, i) for i in range(lo, hi + 1))
    return [chunk_id_for(d, i) for d, i in sorted(wanted)]


def fetch_chunks_sync(store: ChunkStore, chunk_ids: Sequence[str]) -> dict[str, Chunk]:
    """One store fetch per id, sequentially."""
    return {cid: store.get(cid) for cid in chunk_ids}


def fetch_chunks_async(
    store: ChunkStore, chunk_ids: Sequence[str], max_parallel: int = 8
) -> dict[str, Chunk]:
    """Parallel store fetches; same result set as sync, merged by id.

    The first failure (in id order) is re-raised and nothing is returned.
    """
    if not chunk_ids:
        return {}
    results: dict[str, Chunk | Exception] = {}
    with ThreadPoolExecutor(max_workers=min(max_parallel, len(chunk_ids))) as pool:
        futures = {cid: pool.submit(store.get, cid) for cid in chunk_ids}
        for cid, future in futures.items():
            exc = future.exception()
            results[cid] = exc if exc is not None else future.result()
    for cid in sorted(results):
        if isinstance(results[cid], Exception):
            raise results[cid]
    return results  # type: ignore[return-value]


def fetch_neighbors_async(
    store: ChunkStore, chunk_ids: Sequence[str], max_parallel: int = 8
) -> dict[str, Chunk]:
    """Async fetch of neighbor requests; alias kept for pipeline wiring."""
    return fetch_chunks_async(store, chunk_ids, max_parallel)


def expand(
    targets: Sequence[ScoredHit],
    cfg: ExpansionConfig,
    store: ChunkStore,
) -> ExpandedContext:
    """Build the expanded context for the given hits.

    Raises :class:`StoreError` if any target or neighbor cannot be
    resolved.
    """
    if not targets:
        return ExpandedContext()
    target_ids = {hit.chunk_id for hit in targets}
    needed = expansion_ids(targets, cfg.window, store)
    if cfg.fetch_mode == "async":
        fetched = fetch_chunks_async(store, needed, cfg.max_parallel)
    else:
        fetched = fetch_chunks_sync(store, needed)
    entries = [
        ContextEntry(
            chunk=fetched[cid],
            role=ROLE_TARGET if cid in target_ids else ROLE_NEIGHBOR,
        )
        for cid in needed
    ]
    return ExpandedContext(entries=entries)
