"""Command-line entry point: ``ccrag index|query|eval|export``.

Exit codes: 0 success, 2 usage or config error, 3 provider error, 4 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .baseline import BaselineRAG, ChunkIndex, index_baseline
from .config import RunConfig, load_config
from .errors import ConfigError, DataError, ProviderError, ProviderUnavailable
from .evaluator import load_dataset, run_eval
from .indexer import index_corpus, read_corpus
from .pipeline import CausalRAG
from .providers import (
    ChatProvider,
    EmbeddingProvider,
    HttpChatBackend,
    HttpEmbedder,
    MockEmbedder,
    Mode,
    Providers,
    SentenceTransformerEmbedder,
    Transcript,
    canonical_json,
)
from .store import CausalGraph, encode_embedding

log = logging.getLogger("ccrag")

EXIT_OK, EXIT_USAGE, EXIT_PROVIDER, EXIT_DATA = 0, 2, 3, 4
BASELINE_SUBDIR = "baseline"


def build_providers(cfg: RunConfig) -> Providers:
    pc = cfg.providers
    transcript = Transcript(cfg.paths.transcripts) if cfg.paths.transcripts else Transcript()

    def chat_for(role: str, prefix: str) -> ChatProvider:
        mode = Mode(pc.mode_for(role))
        backend = None if mode is Mode.REPLAY else HttpChatBackend.from_env(prefix)
        return ChatProvider(mode, transcript, backend, pc.max_retries)

    chat = chat_for("chat", pc.env_prefix)
    judge = chat_for("judge", pc.judge_env_prefix or pc.env_prefix)

    embed_mode = Mode(pc.mode_for("embed"))
    if pc.embed_backend == "mock":
        embedder = EmbeddingProvider(MockEmbedder(), Mode.LIVE)
    elif embed_mode is Mode.REPLAY:
        embedder = EmbeddingProvider(None, Mode.REPLAY, transcript)
    elif pc.embed_backend == "sentence-transformers":
        embedder = EmbeddingProvider(SentenceTransformerEmbedder(pc.embed_model), embed_mode, transcript)
    else:
        url = os.environ.get(f"{pc.env_prefix}_URL")
        if not url:
            raise ProviderUnavailable(f"{pc.env_prefix}_URL is not set")
        backend = HttpEmbedder(url, pc.embed_model, os.environ.get(f"{pc.env_prefix}_KEY"))
        embedder = EmbeddingProvider(backend, embed_mode, transcript)
    return Providers(embedder, chat, judge)


def _require_path(value: str | None, what: str) -> Path:
    if not value:
        raise ConfigError(f"no {what} given (flag or config file)")
    return Path(value)


def _load_graph(graph_dir: Path) -> CausalGraph:
    if not (graph_dir / "manifest").exists():
        raise DataError(f"{graph_dir}: no graph found (run `ccrag index` first)")
    return CausalGraph.load(graph_dir)


def cmd_index(cfg: RunConfig, args) -> int:
    corpus = _require_path(cfg.paths.corpus, "corpus path")
    if not corpus.exists():
        raise ConfigError(f"corpus path does not exist: {corpus}")
    graph_dir = _require_path(cfg.paths.graph_dir, "graph directory")
    docs = read_corpus(corpus)
    providers = build_providers(cfg)
    store = CausalGraph.load(graph_dir) if (graph_dir / "manifest").exists() else CausalGraph()
    stats = index_corpus(docs, store, providers, cfg.indexing)
    baseline = index_baseline(docs, providers, cfg.indexing)
    store.save(graph_dir)
    baseline.save(graph_dir / BASELINE_SUBDIR)
    if args.json:
        print(json.dumps(stats.to_dict(), indent=2, sort_keys=True))
    else:
        print(
            f"indexed {stats.docs} docs / {stats.chunks} chunks: {stats.pairs} pairs, "
            f"{stats.nodes_created} nodes created, {stats.nodes_reused} reused, {stats.edges} edges added"
        )
        print(f"graph: {store.node_count} nodes, {store.edge_count} edges -> {graph_dir}")
        for f in stats.failures:
            print(f"  failed {f['doc_id']}#{f['chunk_index']}: {f['error']}", file=sys.stderr)
    return EXIT_OK


def cmd_query(cfg: RunConfig, args) -> int:
    graph_dir = _require_path(cfg.paths.graph_dir, "graph directory")
    store = _load_graph(graph_dir)
    providers = build_providers(cfg)
    final, _ = CausalRAG(store, providers, cfg.retrieval).run(args.query)
    if args.json:
        sys.stdout.write(final.to_json())
        return EXIT_OK
    print(final.answer_text)
    if final.citations:
        print("\nSources:")
        for s in final.citations:
            print(f"  [{s.doc_id} {s.char_start}-{s.char_end}] {s.excerpt}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    graph_dir = _require_path(cfg.paths.graph_dir, "graph directory")
    dataset_path = _require_path(cfg.paths.dataset, "dataset path")
    report_path = _require_path(cfg.paths.report, "report path")
    corpus_ids = None
    if cfg.paths.corpus and Path(cfg.paths.corpus).exists():
        corpus_ids = [d.doc_id for d in read_corpus(cfg.paths.corpus)]
    dataset = load_dataset(dataset_path, corpus_ids)
    store = _load_graph(graph_dir)
    chunk_index = ChunkIndex.load(graph_dir / BASELINE_SUBDIR)
    providers = build_providers(cfg)
    systems = [
        CausalRAG(store, providers, cfg.retrieval),
        BaselineRAG(chunk_index, providers, cfg.retrieval.baseline_k),
    ]
    snapshot = cfg.to_dict()
    snapshot.pop("paths")
    report = run_eval(dataset, systems, providers, cfg.evaluation, snapshot)
    report.write(report_path, args.csv)
    print(f"{'system':<28}{'precision':>10}{'recall':>10}{'ccis':>10}{'crs':>10}")
    for name, agg in report.aggregates.items():
        cells = "".join(f"{'-' if agg[m] is None else format(agg[m], '.2f'):>10}" for m in ("precision", "recall", "ccis", "crs"))
        print(f"{name:<28}{cells}")
    incomplete = sum(c["incomplete"] for c in report.counts.values())
    if incomplete:
        print(f"{incomplete} record(s) incomplete; see {report_path}", file=sys.stderr)
    return EXIT_OK


def cmd_export(cfg: RunConfig, args) -> int:
    graph_dir = _require_path(cfg.paths.graph_dir, "graph directory")
    store = _load_graph(graph_dir)
    if args.format == "dot":
        text = store.to_dot()
    else:
        lines = []
        for n in store.nodes():
            lines.append(canonical_json({
                "type": "node", "id": n.id, "text": n.text, "polarity": n.polarity.value,
                "embedding": encode_embedding(n.embedding), "sources": [s.to_dict() for s in n.sources],
            }))
        for e in store.edges():
            lines.append(canonical_json({"type": "edge", "cause_id": e.cause_id, "effect_id": e.effect_id,
                                         "source": e.source.to_dict()}))
        text = "".join(line + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccrag", description="Causal-counterfactual RAG over a causal knowledge graph.")
    parser.add_argument("--config", help="TOML run configuration")
    parser.add_argument("--transcripts", help="provider transcript file (JSONL)")
    parser.add_argument("--mode", choices=[m.value for m in Mode], help="provider mode for every role")
    parser.add_argument("--graph-dir", help="graph directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build or extend the graph and the baseline index")
    p.add_argument("--corpus", help="directory of .txt files or JSONL {doc_id, text}")
    p.add_argument("--json", action="store_true", help="print IndexStats as JSON")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("query", help="answer one causal question")
    p.add_argument("query")
    p.add_argument("--json", action="store_true", help="print the FinalAnswer record as JSON")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="compare the causal pipeline against the baseline")
    p.add_argument("--dataset")
    p.add_argument("--report")
    p.add_argument("--csv", help="also write the per-record table as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="export the graph")
    p.add_argument("--format", choices=["dot", "records"], default="dot")
    p.add_argument("--out", help="output file (default: stdout)")
    p.set_defaults(func=cmd_export)
    return parser


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.transcripts:
        cfg.paths.transcripts = args.transcripts
    if args.graph_dir:
        cfg.paths.graph_dir = args.graph_dir
    if args.mode:
        cfg.providers.mode = args.mode
        cfg.providers.chat_mode = cfg.providers.judge_mode = cfg.providers.embed_mode = None
    for attr in ("corpus", "dataset", "report"):
        value = getattr(args, attr, None)
        if value:
            setattr(cfg.paths, attr, value)
    return cfg.validate()


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"ccrag: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ProviderError as exc:
        print(f"ccrag: provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (DataError, OSError) as exc:
        print(f"ccrag: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
