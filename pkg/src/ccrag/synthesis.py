"""Evidence packages and the final, necessity-aware answer."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .counterfactual import ProbeResult, Rationale, Verdict
from .errors import InconsistentInputs
from .providers import PromptKind, Providers
from .query import FactualContext, ParsedQuery
from .store import CausalGraph, SourceRef

NO_EVIDENCE_TEXT = (
    "No grounded causal account was found: the knowledge graph holds no verified "
    "event matching the outcome in question, or no recorded causes for it."
)


@dataclass
class EvidencePackage:
    parsed: ParsedQuery
    factual: FactualContext
    probes: list[ProbeResult]
    sources: list[SourceRef]

    @property
    def insufficient_evidence(self) -> bool:
        return self.factual.insufficient_evidence


@dataclass(frozen=True)
class CauseSummary:
    node_id: str
    text: str
    verdict: str
    rationale: str
    counterfactual: str = ""
    error: str | None = None

    def to_dict(self) -> dict:
        d = {"node_id": self.node_id, "text": self.text, "verdict": self.verdict, "rationale": self.rationale,
             "counterfactual": self.counterfactual}
        if self.error:
            d["error"] = self.error
        return d


@dataclass
class FinalAnswer:
    query: str
    answer_text: str
    validated_causes: list[CauseSummary] = field(default_factory=list)
    unvalidated: list[CauseSummary] = field(default_factory=list)
    citations: list[SourceRef] = field(default_factory=list)
    insufficient_evidence: bool = False

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "answer_text": self.answer_text,
            "validated_causes": [c.to_dict() for c in self.validated_causes],
            "unvalidated": [c.to_dict() for c in self.unvalidated],
            "citations": [s.to_dict() for s in self.citations],
            "insufficient_evidence": self.insufficient_evidence,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, indent=2) + "\n"

    def cited_doc_ids(self) -> list[str]:
        return sorted({s.doc_id for s in self.citations})


def build_package(parsed: ParsedQuery, factual: FactualContext, probes: list[ProbeResult]) -> EvidencePackage:
    cause_ids = {c.node_id for c in factual.causes}
    probe_ids = [p.cause.node_id for p in probes]
    if len(set(probe_ids)) != len(probe_ids) or set(probe_ids) != cause_ids:
        raise InconsistentInputs(
            f"probes cover {sorted(set(probe_ids))}, factual causes are {sorted(cause_ids)}"
        )
    sources: set[SourceRef] = {e.source for e in factual.rules}
    for chain in factual.chains:
        sources.update(e.source for e in chain.edges)
    for result in probes:
        for chain in result.probe.downstream:
            sources.update(e.source for e in chain.edges)
    return EvidencePackage(
        parsed,
        factual,
        sorted(probes, key=lambda p: p.cause.node_id),
        sorted(sources, key=lambda s: s.sort_key),
    )


def _summaries(package: EvidencePackage) -> list[CauseSummary]:
    return [
        CauseSummary(
            r.cause.node_id,
            r.cause.text,
            r.verdict.verdict.value,
            r.verdict.rationale.value,
            r.probe.counterfactual_text,
            r.probe.error,
        )
        for r in package.probes
    ]


def justification(c: CauseSummary) -> str:
    if c.rationale == Rationale.OUTCOME_ABSENT_IN_CF.value:
        return f'- {c.text}: necessary; with "{c.counterfactual}" instead, the outcome does not follow in the graph.'
    if c.rationale == Rationale.OUTCOME_PRESENT_IN_CF.value:
        return f'- {c.text}: not shown necessary; with "{c.counterfactual}" instead, the outcome still follows.'
    if c.error:
        return f"- {c.text}: untested; the counterfactual could not be evaluated."
    return f'- {c.text}: untested; no event in the graph matches "{c.counterfactual}".'


def render_chain(store: CausalGraph, chain) -> str:
    return " -> ".join(store.node(n).text for n in chain.path)


def synthesis_payload(package: EvidencePackage, store: CausalGraph) -> tuple[dict, dict[str, str]]:
    labels = {}
    causes = []
    outcome_text = {"reached": "outcome still occurs", "absent": "outcome does not occur", "none": "no matching event"}
    for i, r in enumerate(package.probes, 1):
        label = f"C{i}"
        labels[label] = r.cause.node_id
        if r.verdict.verdict is Verdict.UNDETERMINED:
            cf_result = outcome_text["none"]
        elif r.probe.outcome_reached:
            cf_result = outcome_text["reached"]
        else:
            cf_result = outcome_text["absent"]
        causes.append(
            {
                "label": label,
                "event": r.cause.text,
                "counterfactual": r.probe.counterfactual_text,
                "counterfactual_result": cf_result,
                "verdict": r.verdict.verdict.value,
            }
        )
    payload = {
        "question": package.parsed.raw_query,
        "main_event": package.parsed.main_event,
        "evidences": list(package.parsed.evidences),
        "interventions": list(package.parsed.interventions),
        "causal_chains": [render_chain(store, c) for c in package.factual.chains],
        "causes": causes,
    }
    return payload, labels


def synthesize_answer(package: EvidencePackage, store: CausalGraph, providers: Providers) -> FinalAnswer:
    summaries = _summaries(package)
    if package.insufficient_evidence:
        return FinalAnswer(
            package.parsed.raw_query,
            NO_EVIDENCE_TEXT,
            [],
            summaries,
            list(package.sources),
            insufficient_evidence=True,
        )
    payload, labels = synthesis_payload(package, store)
    necessary = {lbl for lbl, nid in labels.items()
                 if any(s.node_id == nid and s.verdict == Verdict.NECESSARY.value for s in summaries)}

    def check(resp) -> None:
        claimed = set(resp.necessary_causes)
        if claimed != necessary:
            raise ValueError(
                f"necessary_causes {sorted(claimed)} disagrees with the counterfactual verdicts {sorted(necessary)}"
            )

    resp = providers.chat.chat(PromptKind.SYNTHESIZE_ANSWER, payload, check=check)
    validated = [s for s in summaries if s.verdict == Verdict.NECESSARY.value]
    unvalidated = [s for s in summaries if s.verdict != Verdict.NECESSARY.value]
    lines = [resp.answer.strip(), "", "Cause-by-cause check:"] + [justification(s) for s in summaries]
    return FinalAnswer(
        package.parsed.raw_query,
        "\n".join(lines),
        validated,
        unvalidated,
        list(package.sources),
        insufficient_evidence=False,
    )
