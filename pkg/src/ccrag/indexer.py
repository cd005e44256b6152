"""Corpus -> causal knowledge graph.

Documents are chunked, each chunk is sent to the ``extract_pairs`` prompt,
and every extracted event is consolidated against the existing graph before
its edge is written. Consolidation runs on a single writer in corpus order so
the resulting graph is reproducible.
"""

from __future__ import annotations

import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .config import IndexConfig
from .errors import DataError, EmptyDocument, MalformedAfterRetries, SelfLoop
from .providers import PromptKind, Providers, verify_equivalence
from .store import CausalGraph, Polarity, SourceRef, normalize_text

log = logging.getLogger(__name__)

_SENTENCE_END = re.compile(r"[.!?][\"')\]]*(?=\s|$)")


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str


@dataclass(frozen=True)
class Chunk:
    doc_id: str
    chunk_index: int
    char_start: int
    char_end: int
    text: str


@dataclass(frozen=True)
class EventDraft:
    text: str
    polarity: Polarity
    source: SourceRef


@dataclass
class Candidate:
    node_id: str
    score: float
    verdict: Optional[bool]  # None: not sent to the verifier


@dataclass
class ConsolidationOutcome:
    node_id: str
    decision: str  # "reused_existing" | "created_new"
    candidates_considered: list[Candidate]


@dataclass
class IndexStats:
    docs: int = 0
    chunks: int = 0
    pairs: int = 0
    nodes_created: int = 0
    nodes_reused: int = 0
    edges: int = 0
    failures: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def read_corpus(path: str | os.PathLike) -> list[Document]:
    """Load a directory of UTF-8 text files or a JSONL file of {doc_id, text}."""
    p = Path(path)
    if p.is_dir():
        docs = [Document(f.name, f.read_text(encoding="utf-8")) for f in sorted(p.iterdir()) if f.is_file()]
    else:
        docs = []
        with p.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    docs.append(Document(str(rec["doc_id"]), rec["text"]))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise DataError(f"{p}:{lineno}: bad corpus record ({exc})") from exc
    ids = [d.doc_id for d in docs]
    if len(set(ids)) != len(ids):
        raise DataError(f"{p}: duplicate doc_id values")
    return docs


def chunk_document(doc_id: str, text: str, cfg: IndexConfig | None = None) -> list[Chunk]:
    """Split ``text`` into overlapping windows of at most ``max_chunk_chars``.

    A window that does not reach the end of the document is cut after the last
    sentence terminator in its final 20%, when there is one. Consecutive chunks
    share exactly ``overlap_chars`` characters.
    """
    cfg = cfg or IndexConfig()
    if not text.strip():
        raise EmptyDocument(f"document {doc_id!r} is empty")
    size, overlap = cfg.max_chunk_chars, cfg.overlap_chars
    chunks: list[Chunk] = []
    start, n = 0, len(text)
    while True:
        end = min(start + size, n)
        if end < n:
            floor = start + int(size * 0.8)
            last = None
            for m in _SENTENCE_END.finditer(text, floor, end):
                last = m.end()
            if last is not None and last > start + overlap:
                end = last
        chunks.append(Chunk(doc_id, len(chunks), start, end, text[start:end]))
        if end >= n:
            return chunks
        start = max(end - overlap, start + 1)


def extract_pairs(chunk: Chunk, providers: Providers) -> list[tuple[EventDraft, EventDraft]]:
    def check(resp) -> None:
        for pair in resp.pairs:
            if pair.evidence not in chunk.text:
                raise ValueError(f"evidence is not a verbatim quote from the text: {pair.evidence!r}")
            if not normalize_text(pair.cause.text) or not normalize_text(pair.effect.text):
                raise ValueError("event text is blank")

    resp = providers.chat.chat(PromptKind.EXTRACT_PAIRS, {"text": chunk.text}, check=check)
    out = []
    for pair in resp.pairs:
        offset = chunk.text.index(pair.evidence)
        start = chunk.char_start + offset
        source = SourceRef(chunk.doc_id, chunk.chunk_index, start, start + len(pair.evidence), pair.evidence)
        out.append(
            (
                EventDraft(normalize_text(pair.cause.text), Polarity(pair.cause.polarity), source),
                EventDraft(normalize_text(pair.effect.text), Polarity(pair.effect.polarity), source),
            )
        )
    return out


def consolidate(draft: EventDraft, store: CausalGraph, providers: Providers, cfg: IndexConfig | None = None) -> ConsolidationOutcome:
    cfg = cfg or IndexConfig()
    vec = providers.embed_one(draft.text)
    candidates = [Candidate(nid, score, None) for nid, score in store.vector_search(vec, cfg.consolidation_k)]
    for cand in candidates:
        if cand.score < cfg.tau_consolidate:
            break
        cand.verdict = verify_equivalence(providers.chat, draft.text, store.node(cand.node_id).text)
        if cand.verdict:
            store.add_source(cand.node_id, draft.source)
            return ConsolidationOutcome(cand.node_id, "reused_existing", candidates)
    nid = store.add_node(draft.text, vec, draft.polarity, draft.source)
    return ConsolidationOutcome(nid, "created_new", candidates)


def index_corpus(
    docs: Sequence[Document],
    store: CausalGraph,
    providers: Providers,
    cfg: IndexConfig | None = None,
) -> IndexStats:
    """Index ``docs`` into ``store``.

    A chunk whose extraction stays malformed after retries is skipped and
    listed in ``IndexStats.failures``; provider outages abort the run.
    """
    cfg = cfg or IndexConfig()
    if not docs:
        raise DataError("corpus is empty")
    stats = IndexStats(docs=len(docs))
    chunks = [c for d in docs for c in chunk_document(d.doc_id, d.text, cfg)]
    stats.chunks = len(chunks)

    def extract(chunk: Chunk):
        try:
            return extract_pairs(chunk, providers)
        except MalformedAfterRetries as exc:
            return exc

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            extracted = list(pool.map(extract, chunks))
    else:
        extracted = [extract(c) for c in chunks]

    # a quote inside the overlap of two chunks is attributed to the first one
    seen: set[tuple] = set()
    nodes_before = store.node_count
    for chunk, result in zip(chunks, extracted):
        if isinstance(result, Exception):
            log.warning("skipping %s#%d: %s", chunk.doc_id, chunk.chunk_index, result)
            stats.failures.append({"doc_id": chunk.doc_id, "chunk_index": chunk.chunk_index, "error": str(result)})
            continue
        for cause, effect in result:
            key = (cause.source.doc_id, cause.source.char_start, cause.source.char_end,
                   cause.text.lower(), effect.text.lower())
            if key in seen:
                continue
            seen.add(key)
            stats.pairs += 1
            outcomes = [consolidate(cause, store, providers, cfg), consolidate(effect, store, providers, cfg)]
            stats.nodes_reused += sum(o.decision == "reused_existing" for o in outcomes)
            edges_before = store.edge_count
            try:
                store.add_edge(outcomes[0].node_id, outcomes[1].node_id, cause.source)
            except SelfLoop as exc:
                stats.failures.append(
                    {"doc_id": chunk.doc_id, "chunk_index": chunk.chunk_index, "error": f"self-loop pair skipped: {exc}"}
                )
                continue
            stats.edges += store.edge_count - edges_before
    stats.nodes_created = store.node_count - nodes_before
    return stats
