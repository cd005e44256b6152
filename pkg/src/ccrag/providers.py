"""Embedding and chat-model boundary.

Every chat request is one :class:`PromptKind`, rendered from a versioned
template in ``ccrag/prompts`` and validated against a strict response schema.
Requests are fingerprinted so a :class:`Transcript` can record live responses
and replay them later, which makes whole pipeline runs reproducible offline.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import re
import threading
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable, Literal, Optional, Protocol, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import CorruptFile, EmptyInput, MalformedAfterRetries, ProviderUnavailable
from .store import EMBEDDING_DIM, as_embedding, encode_embedding, normalize_text

log = logging.getLogger(__name__)

DEFAULT_MAX_RETRIES = 3


class PromptKind(str, Enum):
    EXTRACT_PAIRS = "extract_pairs"
    VERIFY_EQUIVALENCE = "verify_equivalence"
    PARSE_QUERY = "parse_query"
    GENERATE_COUNTERFACTUAL = "generate_counterfactual"
    SYNTHESIZE_ANSWER = "synthesize_answer"
    JUDGE_ANSWER = "judge_answer"
    BASELINE_ANSWER = "baseline_answer"


class Mode(str, Enum):
    LIVE = "live"
    RECORD = "record"
    REPLAY = "replay"


# -- response schemas ---------------------------------------------------------


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True, frozen=True)


PolarityLiteral = Literal["increase", "decrease", "presence", "absence", "neutral"]


class EventOut(_Strict):
    text: str = Field(min_length=1)
    polarity: PolarityLiteral


class PairOut(_Strict):
    cause: EventOut
    effect: EventOut
    evidence: str = Field(min_length=1)


class ExtractPairsResponse(_Strict):
    pairs: list[PairOut]


class VerifyEquivalenceResponse(_Strict):
    same_event: bool
    same_polarity: bool

    @property
    def passed(self) -> bool:
        return self.same_event and self.same_polarity


class ParseQueryResponse(_Strict):
    evidences: list[str]
    interventions: list[str]
    query_variable: str
    main_event: str = Field(min_length=1)


class CounterfactualResponse(_Strict):
    counterfactual: str = Field(min_length=1)


class SynthesisResponse(_Strict):
    answer: str = Field(min_length=1)
    necessary_causes: list[str]


class JudgeScores(_Strict):
    correctness: int = Field(ge=1, le=5)
    faithfulness_reasoning: int = Field(ge=1, le=5)

    @property
    def c_score(self) -> int:
        return self.correctness

    @property
    def fr_score(self) -> int:
        return self.faithfulness_reasoning


class BaselineAnswerResponse(_Strict):
    answer: str = Field(min_length=1)


SCHEMAS: dict[PromptKind, type[_Strict]] = {
    PromptKind.EXTRACT_PAIRS: ExtractPairsResponse,
    PromptKind.VERIFY_EQUIVALENCE: VerifyEquivalenceResponse,
    PromptKind.PARSE_QUERY: ParseQueryResponse,
    PromptKind.GENERATE_COUNTERFACTUAL: CounterfactualResponse,
    PromptKind.SYNTHESIZE_ANSWER: SynthesisResponse,
    PromptKind.JUDGE_ANSWER: JudgeScores,
    PromptKind.BASELINE_ANSWER: BaselineAnswerResponse,
}


# -- templates ----------------------------------------------------------------


@dataclass(frozen=True)
class PromptTemplate:
    kind: PromptKind
    version: str
    system: str
    body: str

    @property
    def digest(self) -> str:
        return hashlib.sha256(f"{self.system}\n{self.body}".encode("utf-8")).hexdigest()[:16]


def _parse_template(kind: PromptKind, raw: str) -> PromptTemplate:
    header, sep, body = raw.partition("\n---\n")
    if not sep:
        raise ValueError(f"prompt template {kind.value} has no '---' separator")
    meta = {}
    for line in header.splitlines():
        key, _, value = line.partition(":")
        meta[key.strip()] = value.strip()
    return PromptTemplate(kind, meta["version"], meta["system"], body.strip())


def load_templates(directory: str | os.PathLike | None = None) -> dict[PromptKind, PromptTemplate]:
    out = {}
    for kind in PromptKind:
        if directory is None:
            raw = resources.files("ccrag.prompts").joinpath(f"{kind.value}.txt").read_text("utf-8")
        else:
            raw = Path(directory, f"{kind.value}.txt").read_text("utf-8")
        out[kind] = _parse_template(kind, raw)
    return out


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


# -- transcript ---------------------------------------------------------------


class Transcript:
    """Fingerprint -> raw response map, optionally backed by a JSONL file.

    New entries are appended to the file immediately; existing entries are
    never rewritten.
    """

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, tuple[str, str]] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    try:
                        rec = json.loads(line)
                        entry = (rec["fingerprint"], (rec["kind"], rec["response"]))
                    except (json.JSONDecodeError, KeyError, TypeError) as exc:
                        raise CorruptFile(f"{self.path}:{lineno}: bad transcript record") from exc
                    self._entries.setdefault(*entry)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, fingerprint: str) -> bool:
        return fingerprint in self._entries

    def get(self, fingerprint: str) -> Optional[str]:
        hit = self._entries.get(fingerprint)
        return None if hit is None else hit[1]

    def append(self, fingerprint: str, kind: str, response: str) -> None:
        with self._lock:
            if fingerprint in self._entries:
                return
            self._entries[fingerprint] = (kind, response)
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(canonical_json({"fingerprint": fingerprint, "kind": kind, "response": response}) + "\n")

    def digest(self) -> str:
        """Order-independent content hash, used for report provenance."""
        h = hashlib.sha256()
        for fp in sorted(self._entries):
            h.update(canonical_json([fp, *self._entries[fp]]).encode("utf-8"))
        return h.hexdigest()


# -- chat -----------------------------------------------------------------------


@dataclass(frozen=True)
class ChatRequest:
    kind: PromptKind
    payload: dict
    attempt: int
    system: str
    user: str
    fingerprint: str


class ChatBackend(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


class HttpChatBackend:
    """Generic chat-completions client (``POST {base_url}/chat/completions``)."""

    def __init__(self, base_url: str, model: str, api_key: str | None = None, timeout: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout

    @classmethod
    def from_env(cls, prefix: str = "CKG_PROVIDER") -> "HttpChatBackend":
        url = os.environ.get(f"{prefix}_URL")
        if not url:
            raise ProviderUnavailable(f"{prefix}_URL is not set")
        return cls(url, os.environ.get(f"{prefix}_MODEL", "default"), os.environ.get(f"{prefix}_KEY"))

    def complete(self, request: ChatRequest) -> str:
        import httpx

        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        body = {
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
        }
        try:
            resp = httpx.post(f"{self.base_url}/chat/completions", json=body, headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
            raise ProviderUnavailable(f"chat backend {self.base_url}: {exc}") from exc


_FENCE = re.compile(r"^```(?:json)?\s*\n(.*)\n```$", re.DOTALL)


def parse_strict(kind: PromptKind, raw: str) -> _Strict:
    text = raw.strip()
    m = _FENCE.match(text)
    if m:
        text = m.group(1).strip()
    obj = json.loads(text)
    if not isinstance(obj, dict):
        raise ValueError("response is not a JSON object")
    return SCHEMAS[kind].model_validate(obj)


Check = Callable[[_Strict], None]


class ChatProvider:
    def __init__(
        self,
        mode: Mode | str = Mode.REPLAY,
        transcript: Transcript | None = None,
        backend: ChatBackend | None = None,
        max_retries: int = DEFAULT_MAX_RETRIES,
        templates: dict[PromptKind, PromptTemplate] | None = None,
    ):
        self.mode = Mode(mode)
        self.transcript = transcript if transcript is not None else Transcript()
        self.backend = backend
        if max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        self.max_retries = max_retries
        self.templates = templates or load_templates()
        if self.mode is not Mode.REPLAY and backend is None:
            raise ValueError(f"{self.mode.value} mode needs a chat backend")

    def request(self, kind: PromptKind, payload: dict, attempt: int = 0, reason: str = "") -> ChatRequest:
        tpl = self.templates[kind]
        fingerprint = hashlib.sha256(
            canonical_json(
                {
                    "kind": kind.value,
                    "template": [tpl.version, tpl.digest],
                    "payload": payload,
                    "attempt": attempt,
                }
            ).encode("utf-8")
        ).hexdigest()
        user = f"{tpl.body}\n\nInput:\n{canonical_json(payload)}"
        if attempt:
            user += (
                f"\n\nYour previous reply was rejected ({reason}). "
                "Reply again with only a JSON object in exactly the required format."
            )
        return ChatRequest(kind, payload, attempt, tpl.system, user, fingerprint)

    def _raw(self, req: ChatRequest) -> str:
        if self.mode is Mode.LIVE:
            return self.backend.complete(req)
        hit = self.transcript.get(req.fingerprint)
        if hit is not None:
            return hit
        if self.mode is Mode.REPLAY:
            raise ProviderUnavailable(f"replay miss for {req.kind.value}: fingerprint {req.fingerprint}")
        raw = self.backend.complete(req)
        self.transcript.append(req.fingerprint, req.kind.value, raw)
        return raw

    def chat(self, kind: PromptKind | str, payload: dict, check: Check | None = None):
        """Send one request and return its validated response model.

        ``check`` may add payload-dependent validation; it raises ``ValueError``
        to reject a response, which then counts as a malformed attempt.
        """
        kind = PromptKind(kind)
        attempts: list[str] = []
        reasons: list[str] = []
        for attempt in range(self.max_retries + 1):
            req = self.request(kind, payload, attempt, reasons[-1] if reasons else "")
            raw = self._raw(req)
            attempts.append(raw)
            try:
                parsed = parse_strict(kind, raw)
                if check is not None:
                    check(parsed)
                return parsed
            except ValidationError as exc:
                reasons.append(f"schema: {exc.errors()[0]['msg']} at {exc.errors()[0]['loc']}")
            except ValueError as exc:
                reasons.append(str(exc) or type(exc).__name__)
            log.debug("%s attempt %d rejected: %s", kind.value, attempt, reasons[-1])
        raise MalformedAfterRetries(kind.value, attempts, reasons)


# -- embeddings -------------------------------------------------------------------


def mock_embed(text: str) -> np.ndarray:
    """Deterministic pseudo-random unit vector keyed by normalized text."""
    key = normalize_text(text)
    if not key:
        raise EmptyInput("cannot embed empty text")
    raw = hashlib.shake_256(b"ccrag-mock-v1\x00" + key.encode("utf-8")).digest(4 * EMBEDDING_DIM)
    u = np.frombuffer(raw, dtype="<u4").astype(np.float64)
    return as_embedding(u / 2.0**31 - 1.0)


class EmbeddingBackend(Protocol):
    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


class MockEmbedder:
    name = "mock"

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [mock_embed(t) for t in texts]


class HttpEmbedder:
    """Generic embeddings client (``POST {base_url}/embeddings``)."""

    def __init__(self, base_url: str, model: str, api_key: str | None = None, timeout: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        import httpx

        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = httpx.post(
                f"{self.base_url}/embeddings",
                json={"model": self.model, "input": list(texts)},
                headers=headers,
                timeout=self.timeout,
            )
            resp.raise_for_status()
            data = sorted(resp.json()["data"], key=lambda d: d["index"])
            return [np.asarray(d["embedding"], dtype=np.float64) for d in data]
        except (httpx.HTTPError, KeyError, TypeError, ValueError) as exc:
            raise ProviderUnavailable(f"embedding backend {self.base_url}: {exc}") from exc


class SentenceTransformerEmbedder:
    """Local embedder; needs the optional ``sentence-transformers`` package."""

    def __init__(self, model_name: str = "all-MiniLM-L6-v2"):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise ProviderUnavailable("sentence-transformers is not installed") from exc
        try:
            self._model = SentenceTransformer(model_name)
        except Exception as exc:  # model download / load failures
            raise ProviderUnavailable(f"cannot load {model_name}: {exc}") from exc

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        return list(self._model.encode(list(texts), normalize_embeddings=True))


class EmbeddingProvider:
    def __init__(
        self,
        backend: EmbeddingBackend | None = None,
        mode: Mode | str = Mode.LIVE,
        transcript: Transcript | None = None,
    ):
        self.backend = backend if backend is not None else MockEmbedder()
        self.mode = Mode(mode)
        self.transcript = transcript if transcript is not None else Transcript()

    @staticmethod
    def fingerprint(text: str) -> str:
        return hashlib.sha256(canonical_json({"kind": "embed", "text": text}).encode("utf-8")).hexdigest()

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        texts = list(texts)
        if any(not t or not t.strip() for t in texts):
            raise EmptyInput("cannot embed empty text")
        if self.mode is Mode.LIVE:
            return [as_embedding(v) for v in self.backend.embed(texts)]
        out: list[np.ndarray | None] = []
        missing: list[int] = []
        for i, t in enumerate(texts):
            hit = self.transcript.get(self.fingerprint(t))
            if hit is None:
                missing.append(i)
                out.append(None)
            else:
                out.append(_decode_vector(hit))
        if missing:
            if self.mode is Mode.REPLAY:
                fp = self.fingerprint(texts[missing[0]])
                raise ProviderUnavailable(f"replay miss for embed: fingerprint {fp}")
            fresh = self.backend.embed([texts[i] for i in missing])
            for i, vec in zip(missing, fresh):
                vec = as_embedding(vec)
                self.transcript.append(self.fingerprint(texts[i]), "embed", encode_embedding(vec))
                out[i] = vec
        return out  # type: ignore[return-value]

    def embed_one(self, text: str) -> np.ndarray:
        return self.embed([text])[0]


def _decode_vector(blob: str) -> np.ndarray:
    return as_embedding(np.frombuffer(base64.b64decode(blob), dtype="<f4").astype(np.float32))


@dataclass
class Providers:
    """The embedder plus chat endpoints; ``judge`` defaults to ``chat``."""

    embedder: EmbeddingProvider
    chat: ChatProvider
    judge: ChatProvider | None = None
    meta: dict = field(default_factory=dict)

    @property
    def judge_chat(self) -> ChatProvider:
        return self.judge if self.judge is not None else self.chat

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        return self.embedder.embed(texts)

    def embed_one(self, text: str) -> np.ndarray:
        return self.embedder.embed_one(text)


def verify_equivalence(chat: ChatProvider, event: str, candidate: str) -> bool:
    """Ask whether ``candidate`` is the same core event with the same polarity."""
    verdict = chat.chat(PromptKind.VERIFY_EQUIVALENCE, {"event": event, "candidate": candidate})
    return verdict.passed
