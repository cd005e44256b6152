"""End-to-end causal-counterfactual question answering over a loaded graph."""

from __future__ import annotations

from dataclasses import dataclass

from .config import RetrievalConfig
from .counterfactual import probe_all
from .providers import Providers
from .query import parse_query, retrieve_factual
from .store import CausalGraph
from .synthesis import EvidencePackage, FinalAnswer, build_package, render_chain, synthesize_answer


@dataclass
class SystemAnswer:
    """What the evaluator needs from any answering system."""

    text: str
    retrieved_doc_ids: list[str]
    context: str


class CausalRAG:
    name = "causal_counterfactual_rag"

    def __init__(self, store: CausalGraph, providers: Providers, cfg: RetrievalConfig | None = None, workers: int = 1):
        self.store = store
        self.providers = providers
        self.cfg = cfg or RetrievalConfig()
        self.workers = workers

    def run(self, query: str) -> tuple[FinalAnswer, EvidencePackage]:
        parsed = parse_query(query, self.providers)
        factual = retrieve_factual(parsed, self.store, self.providers, self.cfg)
        probes = probe_all(factual.causes, factual.outcome_nodes, self.store, self.providers, self.cfg, self.workers)
        package = build_package(parsed, factual, probes)
        return synthesize_answer(package, self.store, self.providers), package

    def answer(self, question: str) -> SystemAnswer:
        final, package = self.run(question)
        return SystemAnswer(final.answer_text, final.cited_doc_ids(), self.context_text(package))

    def context_text(self, package: EvidencePackage) -> str:
        lines = ["Causal chains:"]
        lines += [f"- {render_chain(self.store, c)}" for c in package.factual.chains]
        lines.append("Counterfactual tests:")
        for r in package.probes:
            lines.append(
                f"- {r.cause.text} -> {r.probe.counterfactual_text or '?'}: {r.verdict.verdict.value}"
            )
        lines.append("Sources:")
        lines += [f"- [{s.doc_id}] {s.excerpt}" for s in package.sources]
        return "\n".join(lines)
