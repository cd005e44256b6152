"""Retrieval and answer-quality metrics and the system comparison harness.

Per question and system the harness records document precision/recall, the
embedding similarity between generated and ideal answers, the LLM-judge
score, the chain-integrity score and (for counterfactual questions) the
counterfactual-robustness score. Aggregates are means on a percent scale.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence

from .config import EvalConfig
from .errors import CkgError, DatasetError, EmptyInput, NoRelevantDocs, QuestionKindMismatch
from .pipeline import SystemAnswer
from .providers import JudgeScores, PromptKind, Providers, canonical_json
from .store import exact_dot

log = logging.getLogger(__name__)

KINDS = ("causal", "counterfactual")


@dataclass(frozen=True)
class EvalQuestion:
    id: str
    question: str
    ideal_answer: str
    relevant_doc_ids: frozenset[str]
    kind: str = "causal"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "question": self.question,
            "ideal_answer": self.ideal_answer,
            "relevant_doc_ids": sorted(self.relevant_doc_ids),
            "kind": self.kind,
        }


def load_dataset(path: str | os.PathLike, corpus_doc_ids: Iterable[str] | None = None) -> list[EvalQuestion]:
    """Read a JSONL dataset, rejecting malformed questions by id."""
    known = set(corpus_doc_ids) if corpus_doc_ids is not None else None
    out: list[EvalQuestion] = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                q = EvalQuestion(
                    str(rec["id"]),
                    rec["question"],
                    rec["ideal_answer"],
                    frozenset(rec["relevant_doc_ids"]),
                    rec.get("kind", "causal"),
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: bad record ({exc})") from exc
            if q.id in seen:
                raise DatasetError(f"duplicate question id {q.id!r}")
            if not q.relevant_doc_ids:
                raise NoRelevantDocs(f"question {q.id!r} lists no relevant documents")
            if not q.ideal_answer.strip() or not q.question.strip():
                raise DatasetError(f"question {q.id!r} has an empty question or ideal answer")
            if q.kind not in KINDS:
                raise DatasetError(f"question {q.id!r}: kind must be one of {KINDS}")
            if known is not None and not q.relevant_doc_ids <= known:
                missing = sorted(q.relevant_doc_ids - known)
                raise DatasetError(f"question {q.id!r} cites unknown documents {missing}")
            seen.add(q.id)
            out.append(q)
    if not out:
        raise DatasetError(f"{path}: dataset is empty")
    return out


# -- metric primitives ----------------------------------------------------------


@dataclass(frozen=True)
class RetrievalJudgment:
    retrieved: frozenset[str]
    relevant: frozenset[str]

    @classmethod
    def of(cls, retrieved: Iterable[str], relevant: Iterable[str]) -> "RetrievalJudgment":
        return cls(frozenset(retrieved), frozenset(relevant))

    @property
    def relevant_retrieved(self) -> frozenset[str]:
        return self.retrieved & self.relevant

    @property
    def relevant_total(self) -> int:
        return len(self.relevant)

    @property
    def empty_retrieval(self) -> bool:
        return not self.retrieved


def precision(j: RetrievalJudgment) -> float:
    """|relevant retrieved| / |retrieved|; 0.0 for an empty retrieval (see ``empty_retrieval``)."""
    if j.empty_retrieval:
        return 0.0
    return len(j.relevant_retrieved) / len(j.retrieved)


def recall(j: RetrievalJudgment) -> float:
    if j.relevant_total == 0:
        raise NoRelevantDocs("recall is undefined without relevant documents")
    return len(j.relevant_retrieved) / j.relevant_total


def answer_similarity(generated: str, ideal: str, providers: Providers) -> float:
    """Cosine between answer embeddings, floored at 0."""
    if not generated.strip() or not ideal.strip():
        raise EmptyInput("answers must be non-empty")
    a, b = providers.embed([generated, ideal])
    cos = exact_dot(a.astype(float).tolist(), b.astype(float).tolist())
    return min(1.0, max(0.0, cos))


def judge(question: str, ideal: str, generated: str, context: str, providers: Providers) -> JudgeScores:
    for name, value in (("question", question), ("ideal", ideal), ("generated", generated), ("context", context)):
        if not value or not value.strip():
            raise EmptyInput(f"judge input {name} is empty")
    payload = {"question": question, "ideal_answer": ideal, "generated_answer": generated, "context": context}
    return providers.judge_chat.chat(PromptKind.JUDGE_ANSWER, payload)


def lj_score(scores: JudgeScores) -> float:
    return (scores.c_score + scores.fr_score) / 10


def ccis(sim: float, lj: float, cfg: EvalConfig | None = None) -> float:
    cfg = cfg or EvalConfig()
    return cfg.w1 * sim + cfg.w2 * lj


def crs(sim: float, lj: float, cfg: EvalConfig | None = None, kind: str = "counterfactual") -> float:
    """Same weighted blend as :func:`ccis`, defined only for counterfactual questions."""
    if kind != "counterfactual":
        raise QuestionKindMismatch(f"robustness score needs a counterfactual question, got {kind!r}")
    return ccis(sim, lj, cfg)


# -- harness ----------------------------------------------------------------------


class AnsweringSystem(Protocol):
    name: str

    def answer(self, question: str) -> SystemAnswer: ...


@dataclass
class MetricsRecord:
    question_id: str
    system: str
    kind: str
    precision: Optional[float] = None
    recall: Optional[float] = None
    sim: Optional[float] = None
    lj: Optional[float] = None
    ccis: Optional[float] = None
    crs: Optional[float] = None
    c_score: Optional[int] = None
    fr_score: Optional[int] = None
    retrieved_doc_ids: list[str] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    error: Optional[str] = None
    answer: str = ""

    @property
    def complete(self) -> bool:
        return self.error is None


METRICS = ("precision", "recall", "ccis", "crs")


@dataclass
class MetricsReport:
    records: list[MetricsRecord]
    aggregates: dict[str, dict[str, Optional[float]]]
    counts: dict[str, dict[str, int]]
    config: dict
    provenance: dict

    def to_dict(self) -> dict:
        return {
            "aggregates": self.aggregates,
            "counts": self.counts,
            "config": self.config,
            "provenance": self.provenance,
            "records": [asdict(r) for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["question_id", "system", "kind", "precision", "recall", "sim", "lj", "ccis", "crs",
                "c_score", "fr_score", "error"]
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for r in self.records:
            writer.writerow(["" if getattr(r, c) is None else getattr(r, c) for c in cols])
        return buf.getvalue()

    def write(self, path: str | os.PathLike, csv_path: str | os.PathLike | None = None) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json(), encoding="utf-8")
        if csv_path is not None:
            Path(csv_path).write_text(self.to_csv(), encoding="utf-8")


def evaluate_one(q: EvalQuestion, system: AnsweringSystem, providers: Providers, cfg: EvalConfig) -> MetricsRecord:
    rec = MetricsRecord(q.id, system.name, q.kind)
    try:
        out = system.answer(q.question)
        rec.answer = out.text
        rec.retrieved_doc_ids = sorted(set(out.retrieved_doc_ids))
        j = RetrievalJudgment.of(out.retrieved_doc_ids, q.relevant_doc_ids)
        if j.empty_retrieval:
            rec.flags.append("empty_retrieval")
        rec.precision = precision(j)
        rec.recall = recall(j)
        rec.sim = answer_similarity(out.text, q.ideal_answer, providers)
        scores = judge(q.question, q.ideal_answer, out.text, out.context, providers)
        rec.c_score, rec.fr_score = scores.c_score, scores.fr_score
        rec.lj = lj_score(scores)
        rec.ccis = ccis(rec.sim, rec.lj, cfg)
        if q.kind == "counterfactual":
            rec.crs = crs(rec.sim, rec.lj, cfg, q.kind)
    except CkgError as exc:
        log.warning("question %s on %s failed: %s", q.id, system.name, exc)
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


def aggregate(records: Sequence[MetricsRecord], systems: Sequence[str]) -> tuple[dict, dict]:
    aggregates: dict[str, dict[str, Optional[float]]] = {}
    counts: dict[str, dict[str, int]] = {}
    for name in systems:
        mine = [r for r in records if r.system == name]
        done = [r for r in mine if r.complete]
        aggregates[name] = {}
        for metric in METRICS:
            values = [getattr(r, metric) for r in done if getattr(r, metric) is not None]
            aggregates[name][metric] = 100 * math.fsum(values) / len(values) if values else None
        counts[name] = {
            "questions": len(mine),
            "complete": len(done),
            "incomplete": len(mine) - len(done),
            "counterfactual": sum(r.kind == "counterfactual" for r in done),
        }
    return aggregates, counts


def run_eval(
    dataset: Sequence[EvalQuestion],
    systems: Sequence[AnsweringSystem],
    providers: Providers,
    cfg: EvalConfig | None = None,
    config_snapshot: dict | None = None,
) -> MetricsReport:
    cfg = cfg or EvalConfig()
    cfg.validate()
    if not dataset:
        raise DatasetError("dataset is empty")
    if not systems:
        raise ValueError("no systems to evaluate")
    records = [
        evaluate_one(q, system, providers, cfg)
        for q in sorted(dataset, key=lambda q: q.id)
        for system in systems
    ]
    aggregates, counts = aggregate(records, [s.name for s in systems])
    dataset_digest = hashlib.sha256(
        canonical_json([q.to_dict() for q in sorted(dataset, key=lambda q: q.id)]).encode("utf-8")
    ).hexdigest()
    provenance = {
        "dataset_digest": dataset_digest,
        "chat_transcript_digest": providers.chat.transcript.digest(),
        "judge_transcript_digest": providers.judge_chat.transcript.digest(),
        "embed_transcript_digest": providers.embedder.transcript.digest(),
        "systems": [s.name for s in systems],
    }
    snapshot = dict(config_snapshot or {})
    snapshot.setdefault("evaluation", {"w1": cfg.w1, "w2": cfg.w2})
    return MetricsReport(records, aggregates, counts, snapshot, provenance)
