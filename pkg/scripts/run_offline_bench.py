#!/usr/bin/env python3
"""Run the bundled 10-question benchmark offline, end to end.

Builds the vector index and node trees for the demo corpus with the
deterministic mock providers, runs both architectures, judges the answer
pairs, and leaves all reports under the output directory. No network, no
credentials; reruns with the same seed are byte-identical.

Usage:
    python scripts/run_offline_bench.py [--out out/offline-bench] [--seed 11]
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from filingqa import cli  # noqa: E402

CORPUS = REPO / "tests" / "fixtures" / "corpus"
BENCHMARK = REPO / "tests" / "fixtures" / "benchmark.jsonl"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out/offline-bench")
    parser.add_argument("--seed", type=int, default=11)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = {
        "corpus_dir": str(CORPUS),
        "output_dir": str(out),
        "seed": args.seed,
        "architecture": "both",
        "chunking": {"chunk_size": 64, "overlap": 8},
        "rerank": {"enabled": True, "k_initial": 10, "k_final": 5},
        "expansion": {"enabled": True, "window": 1, "fetch_mode": "async"},
        "clock": "tick",
    }
    cfg_path = out / "config.json"
    cfg_path.write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")

    for argv in (
        ["ingest", "--config", str(cfg_path)],
        ["index", "--config", str(cfg_path), "--deterministic", "--with-summaries"],
        ["bench", str(BENCHMARK), "--config", str(cfg_path)],
    ):
        rc = cli.main(argv)
        if rc != 0:
            return rc
    print(f"\nartifacts and reports under {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
