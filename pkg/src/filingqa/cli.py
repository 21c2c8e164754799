"""Command-line entry point: ingest, index, ask, bench, sweep-rerank.

Configuration comes from a single JSON file (``--config``) with
``${ENV_VAR}`` interpolation for secrets, overridden by flags. Mocks are
the default providers; real backends must be selected explicitly in the
config. Every command honors ``--seed`` and embeds the full effective
configuration in its outputs.

Exit codes: 0 success, 1 partial failures (some files or questions
failed but the run completed), 2 configuration errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__, engine
from .agent import AgentConfig
from .corpus import ChunkingConfig
from .engine import ARCH_BOTH, ARCH_TREE, ARCH_VECTOR, ProviderBundle
from .evalkit import EvalError, load_benchmark
from .expansion import ExpansionConfig
from .node_tree import NodeTree, TreeError, parse_tree
from .providers import (
    Clock,
    PriceTable,
    ProviderError,
    SystemClock,
    TickClock,
    TranscriptLog,
    default_price_table,
)
from .providers.mocks import HashEmbedding, LexicalOverlapScorer, RuleBasedLLM
from .rerank import ConfigError as RerankConfigError
from .rerank import RerankConfig, StageError, SweepPipeline, default_grid, sweep
from .vector_index import VectorIndex

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2

_ENV_REF = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


class ConfigError(Exception):
    """Bad configuration file, flags, or missing referenced paths."""


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class EngineConfig:
    """Effective configuration for one command invocation."""

    corpus_dir: str = "corpus"
    output_dir: str = "out"
    seed: int = 0
    architecture: str = ARCH_VECTOR
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    rerank_enabled: bool = False
    rerank: RerankConfig = field(default_factory=lambda: RerankConfig(10, 5))
    expansion_enabled: bool = False
    expansion: ExpansionConfig = field(default_factory=ExpansionConfig)
    max_corrective_rounds: int = 2
    relevance_threshold: float = 0.5
    retrieval_k: int = 5
    providers: dict = field(default_factory=lambda: {"kind": "mock"})
    prices_path: str | None = None
    clock: str = "tick"
    with_summaries: bool = False
    tree_deterministic: bool = True
    parallelism: int = 8

    def stages(self) -> tuple[str, ...]:
        if self.architecture == ARCH_TREE:
            return ("tree_traverse",)
        stages = ["hybrid"]
        if self.rerank_enabled:
            stages.append("rerank")
        if self.expansion_enabled:
            stages.append("expand")
        return tuple(stages)

    def agent_config(self) -> AgentConfig:
        return AgentConfig(
            max_corrective_rounds=self.max_corrective_rounds,
            relevance_threshold=self.relevance_threshold,
            retrieval_k=self.retrieval_k,
            stages=self.stages(),
        )

    def to_dict(self) -> dict:
        return {
            "corpus_dir": self.corpus_dir,
            "output_dir": self.output_dir,
            "seed": self.seed,
            "architecture": self.architecture,
            "chunking": {
                "chunk_size": self.chunking.chunk_size,
                "overlap": self.chunking.overlap,
                "tokenizer_id": self.chunking.tokenizer_id,
            },
            "rerank": {
                "enabled": self.rerank_enabled,
                "k_initial": self.rerank.k_initial,
                "k_final": self.rerank.k_final,
            },
            "expansion": {
                "enabled": self.expansion_enabled,
                "window": self.expansion.window,
                "fetch_mode": self.expansion.fetch_mode,
                "max_parallel": self.expansion.max_parallel,
            },
            "agent": {
                "max_corrective_rounds": self.max_corrective_rounds,
                "relevance_threshold": self.relevance_threshold,
                "retrieval_k": self.retrieval_k,
                "stages": list(self.stages()),
            },
            "providers": self.providers,
            "prices_path": self.prices_path,
            "clock": self.clock,
            "with_summaries": self.with_summaries,
            "tree_deterministic": self.tree_deterministic,
            "parallelism": self.parallelism,
        }


def _interpolate_env(obj):
    """Replace ${VAR} in every string; missing variables are config errors."""
    if isinstance(obj, str):

        def sub(m: re.Match) -> str:
            name = m.group(1)
            if name not in os.environ:
                raise ConfigError(f"environment variable {name} is not set")
            return os.environ[name]

        return _ENV_REF.sub(sub, obj)
    if isinstance(obj, list):
        return [_interpolate_env(x) for x in obj]
    if isinstance(obj, dict):
        return {k: _interpolate_env(v) for k, v in obj.items()}
    return obj


def load_config(path: str | Path | None, args: argparse.Namespace) -> EngineConfig:
    """Config file plus flag overrides; validates referenced paths."""
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = _interpolate_env(json.loads(p.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config {p}: {exc}") from exc

    cfg = EngineConfig()
    try:
        if "corpus_dir" in raw:
            cfg.corpus_dir = raw["corpus_dir"]
        if "output_dir" in raw:
            cfg.output_dir = raw["output_dir"]
        if "seed" in raw:
            cfg.seed = int(raw["seed"])
        if "architecture" in raw:
            cfg.architecture = raw["architecture"]
        if "parallelism" in raw:
            cfg.parallelism = int(raw["parallelism"])
        if "chunking" in raw:
            cfg.chunking = ChunkingConfig(**raw["chunking"])
        if "rerank" in raw:
            r = dict(raw["rerank"])
            cfg.rerank_enabled = bool(r.pop("enabled", False))
            cfg.rerank = RerankConfig(**r)
        if "expansion" in raw:
            e = dict(raw["expansion"])
            cfg.expansion_enabled = bool(e.pop("enabled", False))
            e.setdefault("max_parallel", cfg.parallelism)
            cfg.expansion = ExpansionConfig(**e)
        else:
            cfg.expansion = ExpansionConfig(max_parallel=cfg.parallelism)
        if "agent" in raw:
            a = raw["agent"]
            cfg.max_corrective_rounds = int(a.get("max_corrective_rounds", 2))
            cfg.relevance_threshold = float(a.get("relevance_threshold", 0.5))
            cfg.retrieval_k = int(a.get("retrieval_k", 5))
        if "providers" in raw:
            cfg.providers = raw["providers"]
        if "prices_path" in raw:
            cfg.prices_path = raw["prices_path"]
        if "clock" in raw:
            cfg.clock = raw["clock"]
        if "with_summaries" in raw:
            cfg.with_summaries = bool(raw["with_summaries"])
        if "tree_deterministic" in raw:
            cfg.tree_deterministic = bool(raw["tree_deterministic"])
    except (TypeError, ValueError, RerankConfigError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc

    # Flag overrides
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "arch", None) is not None:
        cfg.architecture = args.arch
    if getattr(args, "out", None) is not None:
        cfg.output_dir = args.out
    if getattr(args, "rerank", None) is not None:
        try:
            k_initial, k_final = (int(x) for x in args.rerank.split(","))
            cfg.rerank = RerankConfig(k_initial, k_final)
        except (ValueError, RerankConfigError) as exc:
            raise ConfigError(f"bad --rerank value {args.rerank!r}: {exc}") from exc
        cfg.rerank_enabled = True
    if getattr(args, "expand_window", None) is not None:
        try:
            cfg.expansion = ExpansionConfig(
                window=args.expand_window,
                fetch_mode=cfg.expansion.fetch_mode,
                max_parallel=cfg.expansion.max_parallel,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.expansion_enabled = True
    if getattr(args, "fetch_mode", None) is not None:
        cfg.expansion = ExpansionConfig(
            window=cfg.expansion.window,
            fetch_mode=args.fetch_mode,
            max_parallel=cfg.expansion.max_parallel,
        )
    if getattr(args, "with_summaries", False):
        cfg.with_summaries = True
    if getattr(args, "deterministic", False):
        cfg.tree_deterministic = True
    if getattr(args, "prices", None) is not None:
        cfg.prices_path = args.prices

    if cfg.architecture not in (ARCH_VECTOR, ARCH_TREE, ARCH_BOTH):
        raise ConfigError(f"architecture must be vector, tree, or both, got {cfg.architecture!r}")
    if cfg.clock not in ("tick", "system"):
        raise ConfigError(f"clock must be tick or system, got {cfg.clock!r}")
    if cfg.prices_path is not None and not Path(cfg.prices_path).exists():
        raise ConfigError(f"prices file not found: {cfg.prices_path}")
    return cfg


def _build_clock(cfg: EngineConfig) -> Clock:
    return TickClock() if cfg.clock == "tick" else SystemClock()


def build_providers(cfg: EngineConfig, clock: Clock) -> ProviderBundle:
    """Provider bundle per config; the mock kind needs no credentials."""
    spec = cfg.providers or {"kind": "mock"}
    kind = spec.get("kind", "mock")
    if kind == "mock":
        log = TranscriptLog()
        bound = cfg.parallelism
        llm = RuleBasedLLM(transcripts=log, clock=clock, max_concurrent=bound)
        return ProviderBundle(
            llm=llm,
            embedder=HashEmbedding(
                dim=int(spec.get("dim", 256)),
                seed=cfg.seed,
                transcripts=log,
                clock=clock,
                max_concurrent=bound,
            ),
            scorer=LexicalOverlapScorer(transcripts=log, clock=clock, max_concurrent=bound),
            judge=llm,
            transcripts=log,
            clock=clock,
        )
    if kind == "http":
        from .providers import http as http_providers

        log = TranscriptLog()
        shared = {"transcripts": log, "clock": clock, "max_concurrent": cfg.parallelism}
        try:
            llm = http_providers.OpenAIChatProvider(
                model=spec.get("llm_model", "gpt-4o"), **shared
            )
            embedder = http_providers.OpenAIEmbeddingProvider(
                model=spec.get("embedding_model", "text-embedding-ada-002"), **shared
            )
            scorer = http_providers.CohereRerankProvider(
                model=spec.get("reranker_model", "rerank-english-v3.0"), **shared
            )
            judge = http_providers.AnthropicChatProvider(
                model=spec.get("judge_model", "claude-sonnet-4-5"), **shared
            )
        except KeyError as exc:
            raise ConfigError(f"missing credential environment variable: {exc}") from exc
        return ProviderBundle(
            llm=llm, embedder=embedder, scorer=scorer, judge=judge,
            transcripts=log, clock=clock,
        )
    raise ConfigError(f"unknown provider kind {spec.get('kind')!r}")


def _load_prices(cfg: EngineConfig) -> PriceTable:
    if cfg.prices_path is not None:
        return PriceTable.load(cfg.prices_path)
    return default_price_table()


def _out_dir(cfg: EngineConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Commands


def cmd_ingest(cfg: EngineConfig) -> int:
    """Scan the corpus and write a manifest of documents with token/page counts."""
    data = engine.load_corpus(cfg.corpus_dir, cfg.chunking)
    manifest = engine.corpus_manifest(data, cfg.chunking.tokenizer_id)
    manifest["seed"] = cfg.seed
    manifest["config"] = cfg.to_dict()
    out = _out_dir(cfg)
    _write_json(out / "manifest.json", manifest)
    print(f"ingested {len(manifest['documents'])} document(s) -> {out / 'manifest.json'}")
    for err in manifest["errors"]:
        print(f"error: {err['path']}: {err['error']}", file=sys.stderr)
    return EXIT_PARTIAL if manifest["errors"] else EXIT_OK


def cmd_index(cfg: EngineConfig) -> int:
    """Build and persist the vector index and/or node trees, with checksums."""
    data = engine.load_corpus(cfg.corpus_dir, cfg.chunking)
    if data.errors:
        for err in data.errors:
            print(f"error: {err['path']}: {err['error']}", file=sys.stderr)
        print("corpus has errors; nothing persisted", file=sys.stderr)
        return EXIT_PARTIAL
    if not data.documents:
        print("empty corpus; nothing to index", file=sys.stderr)
        return EXIT_PARTIAL

    clock = _build_clock(cfg)
    bundle = build_providers(cfg, clock)
    prices = _load_prices(cfg)
    out = _out_dir(cfg)
    artifacts: dict[str, str] = {}

    build_vector = cfg.architecture in (ARCH_VECTOR, ARCH_BOTH)
    build_tree = cfg.architecture in (ARCH_TREE, ARCH_BOTH)

    index = None
    trees = None
    if build_vector:
        index = engine.embed_corpus(data, bundle.embedder, cfg.chunking.tokenizer_id)
    if build_tree:
        trees = engine.build_trees(
            data,
            bundle.llm,
            deterministic=cfg.tree_deterministic,
            with_summaries=cfg.with_summaries,
            prices=prices,
        )

    # Everything built in memory; persist only now so provider failures
    # above leave no partial artifacts behind.
    if index is not None:
        index_path = out / "index.json"
        index.save(index_path)
        artifacts["index.json"] = engine.file_checksum(index_path)
    if trees is not None:
        tree_dir = out / "trees"
        tree_dir.mkdir(exist_ok=True)
        for doc_id, (tree, report) in trees.items():
            tree_path = tree_dir / f"{doc_id}.json"
            tree_path.write_text(tree.to_json() + "\n", encoding="utf-8")
            artifacts[f"trees/{doc_id}.json"] = engine.file_checksum(tree_path)
            _write_json(tree_dir / f"{doc_id}.report.json", report.to_dict())

    from .evalkit import cost as compute_cost

    manifest = {
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "corpus": engine.corpus_manifest(data, cfg.chunking.tokenizer_id),
        "artifacts": artifacts,
        "preprocessing_cost": compute_cost(bundle.transcripts.entries(), prices).to_dict(),
    }
    _write_json(out / "index-manifest.json", manifest)
    built = " and ".join(
        filter(None, ["vector index" if index is not None else "", "node trees" if trees else ""])
    )
    print(f"built {built} -> {out}")
    return EXIT_OK


def _load_artifacts(cfg: EngineConfig, data: engine.CorpusData) -> tuple[VectorIndex | None, dict[str, NodeTree]]:
    out = Path(cfg.output_dir)
    index = None
    trees: dict[str, NodeTree] = {}
    if cfg.architecture in (ARCH_VECTOR, ARCH_BOTH):
        index_path = out / "index.json"
        if not index_path.exists():
            raise ConfigError(f"missing {index_path}; run the index command first")
        index = VectorIndex.load(index_path)
    if cfg.architecture in (ARCH_TREE, ARCH_BOTH):
        tree_dir = out / "trees"
        if not tree_dir.is_dir():
            raise ConfigError(f"missing {tree_dir}; run the index command first")
        for path in sorted(tree_dir.glob("*.json")):
            if path.name.endswith(".report.json"):
                continue
            doc_id = path.stem
            page_count = (
                data.documents[doc_id].page_count if doc_id in data.documents else None
            )
            trees[doc_id] = parse_tree(path.read_text(encoding="utf-8"), page_count)
    return index, trees


def _parse_filter(pairs: list[str] | None):
    if not pairs:
        return None
    from .vector_index import MetadataFilter, UnknownFilterFieldError

    data: dict[str, str] = {}
    for pair in pairs:
        field_name, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"--filter must look like FIELD=VALUE, got {pair!r}")
        data[field_name.strip()] = value.strip()
    try:
        return MetadataFilter.from_dict(data)
    except UnknownFilterFieldError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_ask(
    cfg: EngineConfig,
    question: str,
    doc_id: str | None,
    filter_pairs: list[str] | None = None,
) -> int:
    """Answer one question and print the answer, citations, and latencies."""
    data = engine.load_corpus(cfg.corpus_dir, cfg.chunking)
    index, trees = _load_artifacts(cfg, data)
    clock = _build_clock(cfg)
    bundle = build_providers(cfg, clock)
    res = engine.make_agent_resources(
        bundle,
        index=index,
        store=data.store,
        trees=trees,
        documents=data.documents,
        rerank_cfg=cfg.rerank,
        expansion_cfg=cfg.expansion,
    )
    if cfg.architecture == ARCH_TREE and doc_id is None:
        if len(data.documents) == 1:
            doc_id = next(iter(data.documents))
        else:
            raise ConfigError("tree architecture needs --doc to pick the filing")

    from .agent import answer_question

    ans = answer_question(
        question,
        cfg.agent_config(),
        res,
        metadata_filter=_parse_filter(filter_pairs),
        doc_id=doc_id,
    )
    out = _out_dir(cfg)
    trace_path = out / "ask-trace.json"
    _write_json(
        trace_path,
        {"seed": cfg.seed, "config": cfg.to_dict(), "answer": ans.to_dict()},
    )

    if ans.abstained:
        print(f"ABSTAINED: {ans.text}")
    else:
        print(ans.text)
        print()
        print("citations:")
        for c in ans.citations:
            where = f"pages {c.page_start}-{c.page_end}"
            ref = f" chunk={c.chunk_id}" if c.chunk_id else ""
            print(f"  - {c.doc_id}: {where}{ref}")
    print()
    print("stage latency (s):")
    for stage, dur in ans.trace.stage_durations().items():
        print(f"  {stage}: {dur:.4f}")
    print(f"trace -> {trace_path}")
    return EXIT_OK


def cmd_bench(cfg: EngineConfig, bench_path: str) -> int:
    """Run the benchmark for the configured architecture(s)."""
    questions = load_benchmark(bench_path)
    data = engine.load_corpus(cfg.corpus_dir, cfg.chunking)
    index, trees = _load_artifacts(cfg, data)
    prices = _load_prices(cfg)
    out = _out_dir(cfg)

    def run_one(arch: str) -> tuple:
        clock = _build_clock(cfg)
        bundle = build_providers(cfg, clock)
        res = engine.make_agent_resources(
            bundle,
            index=index,
            store=data.store,
            trees=trees,
            documents=data.documents,
            rerank_cfg=cfg.rerank,
            expansion_cfg=cfg.expansion,
        )
        arch_cfg = dataclasses.replace(cfg, architecture=arch)
        report, answers = engine.run_benchmark(
            questions,
            arch_cfg.agent_config(),
            res,
            seed=cfg.seed,
            config=arch_cfg.to_dict(),
            architecture=arch,
            transcripts=bundle.transcripts,
            prices=prices,
        )
        return report, answers, bundle

    if cfg.architecture == ARCH_BOTH:
        report_v, answers_v, _ = run_one(ARCH_VECTOR)
        report_t, answers_t, _ = run_one(ARCH_TREE)
        judge_clock = _build_clock(cfg)
        judge_bundle = build_providers(cfg, judge_clock)
        report = engine.compare_architectures(
            questions, report_v, answers_v, report_t, answers_t, judge_bundle.judge
        )
        failures = report_v.aggregates["failures"] + report_t.aggregates["failures"]
    else:
        report, _, _ = run_one(cfg.architecture)
        failures = report.aggregates["failures"]

    report_path = out / f"bench-{cfg.architecture}.json"
    report_path.write_text(report.to_json() + "\n", encoding="utf-8")
    print(render_report_summary(report))
    print(f"report -> {report_path}")
    return EXIT_PARTIAL if failures else EXIT_OK


def render_report_summary(report) -> str:
    lines = [f"architecture: {report.architecture}", f"seed: {report.seed}"]

    def summarize(label: str, agg: dict) -> None:
        lines.append(f"[{label}]")
        if "mrr" in agg:
            lines.append(f"  MRR: {agg['mrr']:.4f}")
            lines.append(f"  Recall@5: {agg['recall_at_5']:.4f}")
        lat = agg.get("latency", {}).get("end_to_end")
        if lat:
            lines.append(
                f"  latency end-to-end: mean {lat['mean']:.4f}s "
                f"p50 {lat['p50']:.4f}s p95 {lat['p95']:.4f}s"
            )
        lines.append(f"  cost: {agg['cost']['total']:.6f}")
        lines.append(
            "  questions: "
            + ", ".join(f"{k}={v}" for k, v in sorted(agg["by_category"].items()))
        )
        if agg.get("failures"):
            lines.append(f"  failures: {agg['failures']}")
        if agg.get("abstentions"):
            lines.append(f"  abstentions: {agg['abstentions']}")

    if report.architecture == ARCH_BOTH:
        for label in report.aggregates:
            summarize(label, report.aggregates[label])
        overall = (report.comparison or {}).get("overall")
        if overall:
            for system, wr in overall.items():
                lines.append(
                    f"win rate [{system}]: {wr['rate']:.3f} "
                    f"(raw {wr['raw_rate']:.3f}; {wr['wins']}W/{wr['losses']}L/{wr['ties']}T)"
                )
    else:
        summarize(report.architecture, report.aggregates)
    return "\n".join(lines)


def cmd_sweep_rerank(cfg: EngineConfig, bench_path: str, grid_text: str | None) -> int:
    """Reranking parameter sweep over the benchmark; default reference grid."""
    if grid_text is not None and not grid_text.strip():
        raise ConfigError("--grid must list at least one k_initial,k_final pair")
    questions = load_benchmark(bench_path)
    data = engine.load_corpus(cfg.corpus_dir, cfg.chunking)
    index, _ = _load_artifacts(
        cfg if cfg.architecture == ARCH_VECTOR else dataclasses.replace(cfg, architecture=ARCH_VECTOR),
        data,
    )
    assert index is not None
    clock = _build_clock(cfg)
    bundle = build_providers(cfg, clock)

    if grid_text is None:
        configs = default_grid()
    else:
        try:
            configs = [
                RerankConfig(*(int(x) for x in pair.split(",")))
                for pair in grid_text.split(";")
            ]
        except (ValueError, RerankConfigError) as exc:
            raise ConfigError(f"bad --grid value {grid_text!r}: {exc}") from exc

    def retrieve(q, k):
        qvec = bundle.embedder.embed([q.question])[0]
        return index.hybrid_search(q.question, qvec, k)

    pipeline = SweepPipeline(
        retrieve=retrieve, scorer=bundle.scorer, store=data.store, clock=clock
    )
    report = sweep(configs, questions, pipeline)

    out = _out_dir(cfg)
    payload = report.to_dict()
    payload["seed"] = cfg.seed
    payload["config"] = cfg.to_dict()
    _write_json(out / "sweep.json", payload)
    text = report.render_text()
    (out / "sweep.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    print(f"sweep -> {out / 'sweep.json'}")
    failed = any(r.error is not None for r in report.rows)
    return EXIT_PARTIAL if failed else EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="filingqa",
        description="Retrieval QA over long regulatory filings.",
    )
    parser.add_argument("--version", action="version", version=f"filingqa {__version__}")

    def add_common(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--config", help="JSON config file (supports ${ENV_VAR})")
        sub.add_argument("--seed", type=int, help="random seed recorded in outputs")
        sub.add_argument(
            "--arch", choices=[ARCH_VECTOR, ARCH_TREE, ARCH_BOTH], help="architecture"
        )
        sub.add_argument("--rerank", metavar="KI,KF", help="enable reranking with k_initial,k_final")
        sub.add_argument("--expand-window", type=int, metavar="N", help="enable small-to-big expansion")
        sub.add_argument("--fetch-mode", choices=["sync", "async"], help="expansion fetch mode")
        sub.add_argument("--with-summaries", action="store_true", help="node summaries during tree generation")
        sub.add_argument("--deterministic", action="store_true", help="offline heading-based tree generation")
        sub.add_argument("--prices", metavar="PATH", help="price table JSON")
        sub.add_argument("--out", metavar="DIR", help="output directory")

    subparsers = parser.add_subparsers(dest="command", required=True)

    p = subparsers.add_parser("ingest", help="scan the corpus and write a manifest")
    add_common(p)

    p = subparsers.add_parser("index", help="build the vector index and/or node trees")
    add_common(p)

    p = subparsers.add_parser("ask", help="answer one question")
    p.add_argument("question")
    p.add_argument("--doc", help="doc_id for the tree architecture")
    p.add_argument(
        "--filter",
        action="append",
        metavar="FIELD=VALUE",
        help="metadata filter predicate (repeatable), e.g. company=Acme",
    )
    add_common(p)

    p = subparsers.add_parser("bench", help="run a benchmark file")
    p.add_argument("benchmark", help="JSONL benchmark file")
    add_common(p)

    p = subparsers.add_parser("sweep-rerank", help="reranking parameter sweep")
    p.add_argument("benchmark", help="JSONL benchmark file")
    p.add_argument("--grid", help="semicolon-separated k_initial,k_final pairs")
    add_common(p)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "index":
            return cmd_index(cfg)
        if args.command == "ask":
            return cmd_ask(cfg, args.question, args.doc, args.filter)
        if args.command == "bench":
            return cmd_bench(cfg, args.benchmark)
        if args.command == "sweep-rerank":
            return cmd_sweep_rerank(cfg, args.benchmark, args.grid)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, EvalError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ProviderError, TreeError, StageError) as exc:
        # Runtime failure (e.g. provider outage): nothing partial persisted.
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
