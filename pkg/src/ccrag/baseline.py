"""The comparison system: plain chunk retrieval by cosine, then one answer call.

Uses the same chunker and embedder as the graph indexer so that evaluation
differences come from the retrieval strategy alone.
"""

from __future__ import annotations

import heapq
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import IndexConfig
from .errors import CorruptFile, DataError
from .indexer import Chunk, Document, chunk_document
from .pipeline import SystemAnswer
from .providers import PromptKind, Providers, canonical_json
from .store import (
    checksum_of,
    iter_records,
    write_atomic,
    as_embedding,
    decode_embedding,
    encode_embedding,
    exact_dot,
    read_manifest,
)

BASELINE_FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class ChunkIndexEntry:
    chunk: Chunk
    embedding: np.ndarray


class ChunkIndex:
    def __init__(self, entries: Sequence[ChunkIndexEntry] = ()):
        self.entries = list(entries)
        self._rows = [e.embedding.astype(np.float64).tolist() for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ChunkIndex):
            return NotImplemented
        return len(self) == len(other) and all(
            a.chunk == b.chunk and a.embedding.tobytes() == b.embedding.tobytes()
            for a, b in zip(self.entries, other.entries)
        )

    def search(self, query, k: int) -> list[tuple[ChunkIndexEntry, float]]:
        """Exact top-k; ties go to the earlier (doc_id, chunk_index)."""
        if k < 1:
            raise ValueError("k must be >= 1")
        q = as_embedding(query).astype(np.float64).tolist()
        scored = (
            (-min(1.0, max(-1.0, exact_dot(row, q))), e.chunk.doc_id, e.chunk.chunk_index, i)
            for i, (e, row) in enumerate(zip(self.entries, self._rows))
        )
        return [(self.entries[i], -neg) for neg, _, _, i in heapq.nsmallest(k, scored)]

    def save(self, path: str | os.PathLike) -> None:
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        lines = []
        for e in self.entries:
            c = e.chunk
            rec = {
                "doc_id": c.doc_id,
                "chunk_index": c.chunk_index,
                "char_start": c.char_start,
                "char_end": c.char_end,
                "text": c.text,
                "embedding": encode_embedding(e.embedding),
            }
            lines.append(canonical_json(rec) + "\n")
        blob = "".join(lines).encode("utf-8")
        manifest = {
            "format_version": BASELINE_FORMAT_VERSION,
            "chunk_count": len(self.entries),
            "checksum": checksum_of(blob),
        }
        write_atomic(root / "chunks", blob)
        write_atomic(root / "manifest", (canonical_json(manifest) + "\n").encode("utf-8"))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ChunkIndex":
        root = Path(path)
        manifest = read_manifest(root / "manifest", BASELINE_FORMAT_VERSION)
        blob = (root / "chunks").read_bytes()
        if manifest.get("checksum") != checksum_of(blob):
            raise CorruptFile(f"{root}: checksum mismatch")
        entries = []
        try:
            for rec in iter_records(blob):
                chunk = Chunk(rec["doc_id"], rec["chunk_index"], rec["char_start"], rec["char_end"], rec["text"])
                entries.append(ChunkIndexEntry(chunk, as_embedding(decode_embedding(rec["embedding"]))))
        except (KeyError, ValueError, TypeError) as exc:
            raise CorruptFile(f"{root}: {exc}") from exc
        if len(entries) != manifest.get("chunk_count"):
            raise CorruptFile(f"{root}: chunk count disagrees with manifest")
        return cls(entries)


def index_baseline(docs: Sequence[Document], providers: Providers, cfg: IndexConfig | None = None) -> ChunkIndex:
    cfg = cfg or IndexConfig()
    if not docs:
        raise DataError("corpus is empty")
    chunks = [c for d in docs for c in chunk_document(d.doc_id, d.text, cfg)]
    vectors = providers.embed([c.text for c in chunks])
    return ChunkIndex([ChunkIndexEntry(c, v) for c, v in zip(chunks, vectors)])


@dataclass
class BaselineAnswer:
    text: str
    retrieved: list[tuple[Chunk, float]]

    @property
    def doc_ids(self) -> list[str]:
        return sorted({c.doc_id for c, _ in self.retrieved})


def answer_baseline(query: str, index: ChunkIndex, providers: Providers, k: int = 5) -> BaselineAnswer:
    if len(index) == 0:
        raise DataError("baseline index is empty")
    hits = index.search(providers.embed_one(query), k)
    payload = {"question": query, "context": [e.chunk.text for e, _ in hits]}
    resp = providers.chat.chat(PromptKind.BASELINE_ANSWER, payload)
    return BaselineAnswer(resp.answer.strip(), [(e.chunk, s) for e, s in hits])


class BaselineRAG:
    name = "regular_rag"

    def __init__(self, index: ChunkIndex, providers: Providers, k: int = 5):
        self.index = index
        self.providers = providers
        self.k = k

    def answer(self, question: str) -> SystemAnswer:
        result = answer_baseline(question, self.index, self.providers, self.k)
        context = "\n".join(f"- [{c.doc_id}#{c.chunk_index}] {c.text}" for c, _ in result.retrieved)
        return SystemAnswer(result.text, result.doc_ids, context)

