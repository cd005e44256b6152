"""Embedded causal knowledge graph: event nodes, cause->effect edges,
an exact cosine index and depth-limited path traversal.

Graphs persist as a directory of line-delimited JSON files guarded by a
checksummed manifest; see :meth:`CausalGraph.save`.
"""

from __future__ import annotations

import base64
import hashlib
import heapq
import json
import math
import os
import threading
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CorruptFile,
    EmptyText,
    FormatVersionMismatch,
    InvalidEmbedding,
    SelfLoop,
    UnknownNode,
)

EMBEDDING_DIM = 384
FORMAT_VERSION = 1
NORM_TOLERANCE = 1e-6


class Polarity(str, Enum):
    INCREASE = "increase"
    DECREASE = "decrease"
    PRESENCE = "presence"
    ABSENCE = "absence"
    NEUTRAL = "neutral"


def normalize_text(text: str) -> str:
    """NFC-normalize and collapse runs of whitespace."""
    return " ".join(unicodedata.normalize("NFC", text).split())


def node_id_for(text: str) -> str:
    key = normalize_text(text).lower()
    if not key:
        raise EmptyText("event text is empty")
    return hashlib.sha256(key.encode("utf-8")).hexdigest()


def as_embedding(values: Sequence[float] | np.ndarray) -> np.ndarray:
    """Validate and L2-normalize a vector, returning a read-only float32 array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != EMBEDDING_DIM:
        raise InvalidEmbedding(f"expected {EMBEDDING_DIM} values, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidEmbedding("embedding contains non-finite values")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise InvalidEmbedding("zero vector cannot be normalized")
    if getattr(values, "dtype", None) == np.float32 and abs(norm - 1.0) <= NORM_TOLERANCE:
        # already a stored-form vector: keep its bits so re-validation is idempotent
        out = np.array(values, dtype=np.float32)
    else:
        out = (arr / norm).astype(np.float32)
    out.flags.writeable = False
    return out


def encode_embedding(vec: np.ndarray) -> str:
    return base64.b64encode(np.asarray(vec, dtype="<f4").tobytes()).decode("ascii")


def decode_embedding(blob: str) -> np.ndarray:
    arr = np.frombuffer(base64.b64decode(blob), dtype="<f4").astype(np.float32)
    arr.flags.writeable = False
    return arr


def exact_dot(a: Iterable[float], b: Iterable[float]) -> float:
    # float32 x float32 products are exact in float64; fsum rounds the sum
    # correctly, so the score does not depend on summation order or BLAS.
    return math.fsum(x * y for x, y in zip(a, b))


@dataclass(frozen=True)
class SourceRef:
    doc_id: str
    chunk_index: int
    char_start: int
    char_end: int
    excerpt: str

    def __post_init__(self):
        if self.chunk_index < 0:
            raise ValueError("chunk_index must be >= 0")
        if not self.char_start < self.char_end:
            raise ValueError("char_start must be < char_end")

    @property
    def sort_key(self) -> tuple:
        return (self.doc_id, self.char_start, self.char_end, self.chunk_index, self.excerpt)

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "chunk_index": self.chunk_index,
            "char_start": self.char_start,
            "char_end": self.char_end,
            "excerpt": self.excerpt,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SourceRef":
        return cls(d["doc_id"], int(d["chunk_index"]), int(d["char_start"]), int(d["char_end"]), d["excerpt"])


@dataclass(eq=False)
class EventNode:
    id: str
    text: str
    embedding: np.ndarray
    polarity: Polarity
    sources: list[SourceRef] = field(default_factory=list)


@dataclass(frozen=True)
class CausalEdge:
    cause_id: str
    effect_id: str
    source: SourceRef

    @property
    def sort_key(self) -> tuple:
        return (self.cause_id, self.effect_id, self.source.sort_key)


@dataclass(frozen=True)
class CausalChain:
    """A simple path through the graph, root cause first."""

    path: tuple[str, ...]
    edges: tuple[CausalEdge, ...]

    def __len__(self) -> int:
        return len(self.edges)


class CausalGraph:
    """In-memory causal graph with directory persistence.

    Mutations are serialized by an internal lock, so one instance can be shared
    between threads.
    """

    def __init__(self):
        self._lock = threading.RLock()
        self._nodes: dict[str, EventNode] = {}
        self._edges: dict[tuple[str, str], list[CausalEdge]] = {}
        self._edge_set: set[CausalEdge] = set()
        self._succ: dict[str, set[str]] = {}
        self._pred: dict[str, set[str]] = {}
        self._index: tuple[list[str], list[list[float]]] | None = None

    # -- mutation -----------------------------------------------------------

    def add_node(self, text: str, embedding, polarity: Polarity | str, source: SourceRef) -> str:
        canonical = normalize_text(text)
        if not canonical:
            raise EmptyText("event text is empty")
        vec = as_embedding(embedding)
        polarity = Polarity(polarity)
        nid = node_id_for(canonical)
        with self._lock:
            node = self._nodes.get(nid)
            if node is None:
                self._nodes[nid] = EventNode(nid, canonical, vec, polarity, [source])
                self._succ[nid] = set()
                self._pred[nid] = set()
                self._index = None
            elif source not in node.sources:
                node.sources.append(source)
        return nid

    def add_source(self, node_id: str, source: SourceRef) -> None:
        with self._lock:
            node = self._require(node_id)
            if source not in node.sources:
                node.sources.append(source)

    def add_edge(self, cause_id: str, effect_id: str, source: SourceRef) -> CausalEdge:
        if cause_id == effect_id:
            raise SelfLoop(f"edge {cause_id} -> itself")
        edge = CausalEdge(cause_id, effect_id, source)
        with self._lock:
            self._require(cause_id)
            self._require(effect_id)
            if edge in self._edge_set:
                return edge
            self._edge_set.add(edge)
            self._edges.setdefault((cause_id, effect_id), []).append(edge)
            self._succ[cause_id].add(effect_id)
            self._pred[effect_id].add(cause_id)
        return edge

    # -- queries ------------------------------------------------------------

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def node_count(self) -> int:
        return len(self._nodes)

    @property
    def edge_count(self) -> int:
        return len(self._edge_set)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._nodes

    def node(self, node_id: str) -> EventNode:
        return self._require(node_id)

    def nodes(self) -> list[EventNode]:
        with self._lock:
            return [self._nodes[k] for k in sorted(self._nodes)]

    def edges(self) -> list[CausalEdge]:
        with self._lock:
            return sorted(self._edge_set, key=lambda e: e.sort_key)

    def edges_between(self, cause_id: str, effect_id: str) -> list[CausalEdge]:
        with self._lock:
            return sorted(self._edges.get((cause_id, effect_id), []), key=lambda e: e.sort_key)

    def _require(self, node_id: str) -> EventNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def _matrix(self) -> tuple[list[str], list[list[float]]]:
        with self._lock:
            if self._index is None:
                ids = sorted(self._nodes)
                rows = [self._nodes[i].embedding.astype(np.float64).tolist() for i in ids]
                self._index = (ids, rows)
            return self._index

    def vector_search(self, query, k: int) -> list[tuple[str, float]]:
        """Exact top-k by cosine; ties go to the smaller node id."""
        if k < 1:
            raise ValueError("k must be >= 1")
        q = as_embedding(query).astype(np.float64).tolist()
        ids, rows = self._matrix()
        scored = (
            (-min(1.0, max(-1.0, exact_dot(row, q))), nid) for nid, row in zip(ids, rows)
        )
        return [(nid, -neg) for neg, nid in heapq.nsmallest(k, scored)]

    def _walk(self, start: str, max_depth: int, upstream: bool) -> list[CausalChain]:
        if max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        with self._lock:
            self._require(start)
            adj = self._pred if upstream else self._succ
            found: list[tuple[str, ...]] = []
            stack: list[tuple[str, ...]] = [(start,)]
            while stack:
                walk = stack.pop()
                if len(walk) > 1:
                    found.append(walk[::-1] if upstream else walk)
                if len(walk) - 1 >= max_depth:
                    continue
                for nxt in adj[walk[-1]]:
                    if nxt not in walk:
                        stack.append(walk + (nxt,))
            found.sort()
            return [self._chain(p) for p in found]

    def _chain(self, path: tuple[str, ...]) -> CausalChain:
        edges = tuple(
            min(self._edges[(a, b)], key=lambda e: e.sort_key) for a, b in zip(path, path[1:])
        )
        return CausalChain(path, edges)

    def traverse_upstream(self, node_id: str, max_depth: int) -> list[CausalChain]:
        """All simple paths of 1..max_depth edges ending at ``node_id``."""
        return self._walk(node_id, max_depth, upstream=True)

    def traverse_downstream(self, node_id: str, max_depth: int) -> list[CausalChain]:
        """All simple paths of 1..max_depth edges starting at ``node_id``."""
        return self._walk(node_id, max_depth, upstream=False)

    # -- comparison ---------------------------------------------------------

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CausalGraph):
            return NotImplemented
        if self._nodes.keys() != other._nodes.keys() or self._edge_set != other._edge_set:
            return False
        for nid, a in self._nodes.items():
            b = other._nodes[nid]
            if (a.text, a.polarity, a.sources) != (b.text, b.polarity, b.sources):
                return False
            if a.embedding.tobytes() != b.embedding.tobytes():
                return False
        return True

    __hash__ = None  # type: ignore[assignment]

    # -- persistence --------------------------------------------------------

    def _serialize(self) -> tuple[bytes, bytes]:
        node_lines = []
        for n in self.nodes():
            rec = {
                "id": n.id,
                "text": n.text,
                "polarity": n.polarity.value,
                "embedding": encode_embedding(n.embedding),
                "sources": [s.to_dict() for s in n.sources],
            }
            node_lines.append(_dumps(rec))
        edge_lines = [
            _dumps({"cause_id": e.cause_id, "effect_id": e.effect_id, "source": e.source.to_dict()})
            for e in self.edges()
        ]
        return _join_lines(node_lines), _join_lines(edge_lines)

    def save(self, path: str | os.PathLike) -> None:
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        with self._lock:
            nodes_blob, edges_blob = self._serialize()
            manifest = {
                "format_version": FORMAT_VERSION,
                "node_count": self.node_count,
                "edge_count": self.edge_count,
                "checksum": checksum_of(nodes_blob, edges_blob),
            }
        write_atomic(root / "nodes", nodes_blob)
        write_atomic(root / "edges", edges_blob)
        write_atomic(root / "manifest", (_dumps(manifest) + "\n").encode("utf-8"))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CausalGraph":
        root = Path(path)
        manifest = read_manifest(root / "manifest")
        nodes_blob = (root / "nodes").read_bytes()
        edges_blob = (root / "edges").read_bytes()
        if manifest.get("checksum") != checksum_of(nodes_blob, edges_blob):
            raise CorruptFile(f"{root}: checksum mismatch")
        g = cls()
        try:
            for rec in iter_records(nodes_blob):
                emb = decode_embedding(rec["embedding"])
                if emb.shape[0] != EMBEDDING_DIM or abs(float(np.linalg.norm(emb.astype(np.float64))) - 1.0) > NORM_TOLERANCE:
                    raise CorruptFile(f"{root}: node {rec['id']} has an invalid embedding")
                nid = rec["id"]
                if nid != node_id_for(rec["text"]):
                    raise CorruptFile(f"{root}: node id {nid} does not match its text")
                g._nodes[nid] = EventNode(
                    nid,
                    rec["text"],
                    emb,
                    Polarity(rec["polarity"]),
                    [SourceRef.from_dict(s) for s in rec["sources"]],
                )
                g._succ[nid] = set()
                g._pred[nid] = set()
            for rec in iter_records(edges_blob):
                g.add_edge(rec["cause_id"], rec["effect_id"], SourceRef.from_dict(rec["source"]))
        except (KeyError, ValueError, TypeError) as exc:
            raise CorruptFile(f"{root}: {exc}") from exc
        if (g.node_count, g.edge_count) != (manifest.get("node_count"), manifest.get("edge_count")):
            raise CorruptFile(f"{root}: record counts disagree with manifest")
        return g

    def export_dot(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_dot(), encoding="utf-8")

    def to_dot(self) -> str:
        lines = ["digraph ckg {"]
        for n in self.nodes():
            lines.append(f'  "{n.id}" [label="{_dot_escape(n.text)}"];')
        for e in self.edges():
            lines.append(
                f'  "{e.cause_id}" -> "{e.effect_id}" [tooltip="{_dot_escape(e.source.doc_id)}"];'
            )
        lines.append("}")
        return "\n".join(lines) + "\n"


def read_manifest(path: Path, expected_version: int = FORMAT_VERSION) -> dict:
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"{path}: unreadable manifest") from exc
    if not isinstance(manifest, dict):
        raise CorruptFile(f"{path}: manifest is not an object")
    if manifest.get("format_version") != expected_version:
        raise FormatVersionMismatch(
            f"{path}: format_version {manifest.get('format_version')!r}, expected {expected_version}"
        )
    return manifest


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def _join_lines(lines: list[str]) -> bytes:
    return "".join(line + "\n" for line in lines).encode("utf-8")


def iter_records(blob: bytes):
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptFile("record file is not UTF-8") from exc
    for line in text.splitlines():
        if line.strip():
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorruptFile(f"bad record: {exc}") from exc


def checksum_of(*blobs: bytes) -> str:
    h = hashlib.sha256()
    for b in blobs:
        h.update(hashlib.sha256(b).digest())
    return h.hexdigest()


def write_atomic(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')
