#!/usr/bin/env python3
"""Reranking parameter sweep on a synthetic 50-question benchmark.

Builds a five-document corpus where every question's tag phrase appears
on its gold page and, more weakly, on the same page of two decoy
documents, so first-pass hybrid retrieval ranks plausible wrong-document
hits alongside gold. Then sweeps the full reference parameter grid three
ways: no reranking, a gold-aware oracle scorer (upper bound), and a
seeded noisy scorer (realistic uplift).

Usage:
    python scripts/run_rerank_sweep.py [--seed 7] [--noise 0.6] [--out out/sweep]
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from filingqa.corpus import ChunkStore  # noqa: E402
from filingqa.corpus import Chunk, chunk_id_for, count_tokens  # noqa: E402
from filingqa.evalkit import BenchmarkQuestion  # noqa: E402
from filingqa.providers import TickClock  # noqa: E402
from filingqa.providers.mocks import (  # noqa: E402
    HashEmbedding,
    NoisyOracleScorer,
    OracleScorer,
)
from filingqa.rerank import SweepPipeline, default_grid, sweep  # noqa: E402
from filingqa.vector_index import EmbeddedChunk, build_index  # noqa: E402


def page_chunks(doc_id: str, pages: list[str]) -> list[Chunk]:
    chunks, offset = [], 0
    for i, text in enumerate(pages):
        n = count_tokens(text)
        chunks.append(
            Chunk(chunk_id_for(doc_id, i), doc_id, i, offset, offset + n, text, i + 1, i + 1)
        )
        offset += n
    return chunks


def build_benchmark(seed: int):
    doc_ids = [f"synth-{c}" for c in "abcde"]
    page_text = {
        (d, p): [
            f"Quarterly report text for {doc_ids[d]} page {p + 1}.",
            "Common revenue trends and outlook filler sentence.",
        ]
        for d in range(5)
        for p in range(12)
    }
    questions = []
    for i in range(50):
        d, p = i % 5, i // 5
        tag = f"series {i:02d}"
        page_text[(d, p)].append(f"The {tag} indicator moved higher; {tag} drove results.")
        for decoy in ((d + 1) % 5, (d + 2) % 5):
            page_text[(decoy, p)].append(
                f"A note mentions {tag} in passing; {tag} appears again here."
            )
        questions.append(
            BenchmarkQuestion(
                id=f"s{i:02d}",
                question=f"How did {tag} perform against revenue trends?",
                category="single-hop",
                doc_id=doc_ids[d],
                gold_pages=frozenset({p + 1}),
                gold_answer=f"{tag} moved higher.",
            )
        )

    store = ChunkStore()
    chunks = []
    for d, doc_id in enumerate(doc_ids):
        for c in page_chunks(doc_id, ["\n".join(page_text[(d, p)]) for p in range(12)]):
            store.add(c)
            chunks.append(c)

    embedder = HashEmbedding(dim=64, seed=seed, clock=TickClock())
    vectors = embedder.embed([c.text for c in chunks])
    index = build_index(
        [
            EmbeddedChunk(chunk=c, vector=vectors[i], metadata={"company": c.doc_id})
            for i, c in enumerate(chunks)
        ]
    )

    def retrieve(q: BenchmarkQuestion, k: int):
        qvec = embedder.embed([q.question])[0]
        return index.hybrid_search(q.question, qvec, k)

    gold = {q.question: (q.doc_id, q.gold_pages) for q in questions}
    return questions, store, retrieve, gold


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--noise", type=float, default=0.6)
    parser.add_argument("--out", default="out/sweep")
    args = parser.parse_args()

    questions, store, retrieve, gold = build_benchmark(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    scorers = {
        "oracle": OracleScorer(store, gold, clock=TickClock()),
        "noisy": NoisyOracleScorer(
            store, gold, amplitude=args.noise, seed=args.seed, clock=TickClock()
        ),
    }
    for name, scorer in scorers.items():
        pipeline = SweepPipeline(retrieve=retrieve, scorer=scorer, store=store)
        report = sweep(default_grid(), questions, pipeline)
        text = report.render_text()
        print(f"\n=== {name} scorer ===\n{text}")
        (out / f"sweep-{name}.json").write_text(report.to_json() + "\n", encoding="utf-8")
        (out / f"sweep-{name}.txt").write_text(text + "\n", encoding="utf-8")
    print(f"\nsweep tables under {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
