"""Query parsing and two-stage resolution of query events to graph nodes."""

from __future__ import annotations

from dataclasses import dataclass, field

from .config import RetrievalConfig
from .errors import EmptyInput
from .providers import PromptKind, Providers, verify_equivalence
from .store import CausalChain, CausalEdge, CausalGraph, normalize_text


@dataclass(frozen=True)
class ParsedQuery:
    raw_query: str
    main_event: str
    query_variable: str = ""
    evidences: tuple[str, ...] = ()
    interventions: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "raw_query": self.raw_query,
            "main_event": self.main_event,
            "query_variable": self.query_variable,
            "evidences": list(self.evidences),
            "interventions": list(self.interventions),
        }


@dataclass(frozen=True)
class Match:
    node_id: str
    score: float
    verdict: bool


@dataclass(frozen=True)
class ResolvedEvent:
    query_text: str
    matches: tuple[Match, ...] = ()

    @property
    def accepted(self) -> list[str]:
        return [m.node_id for m in self.matches if m.verdict]


@dataclass(frozen=True)
class CauseEvidence:
    node_id: str
    text: str
    chains: tuple[CausalChain, ...]


@dataclass
class FactualContext:
    resolution: ResolvedEvent
    causes: list[CauseEvidence] = field(default_factory=list)
    rules: list[CausalEdge] = field(default_factory=list)

    @property
    def outcome_nodes(self) -> list[str]:
        return self.resolution.accepted

    @property
    def insufficient_evidence(self) -> bool:
        return not self.outcome_nodes or not self.causes

    @property
    def chains(self) -> list[CausalChain]:
        seen = {}
        for cause in self.causes:
            for chain in cause.chains:
                seen[chain.path] = chain
        return [seen[p] for p in sorted(seen)]


def parse_query(text: str, providers: Providers) -> ParsedQuery:
    if not text or not text.strip():
        raise EmptyInput("query is empty")
    resp = providers.chat.chat(PromptKind.PARSE_QUERY, {"query": text})
    clean = lambda items: tuple(t for t in (normalize_text(i) for i in items) if t)
    main = normalize_text(resp.main_event)
    if not main:
        raise EmptyInput("parsed main_event is blank")
    return ParsedQuery(
        raw_query=text,
        main_event=main,
        query_variable=normalize_text(resp.query_variable),
        evidences=clean(resp.evidences),
        interventions=clean(resp.interventions),
    )


def resolve_event(event_text: str, store: CausalGraph, providers: Providers, cfg: RetrievalConfig | None = None) -> ResolvedEvent:
    """Vector search for candidates, then keep those the verifier accepts.

    Used for query events and counterfactual events alike.
    """
    cfg = cfg or RetrievalConfig()
    if store.node_count == 0:
        return ResolvedEvent(event_text)
    hits = store.vector_search(providers.embed_one(event_text), cfg.retrieve_k)
    matches = tuple(
        Match(nid, score, verify_equivalence(providers.chat, event_text, store.node(nid).text))
        for nid, score in hits
    )
    return ResolvedEvent(event_text, matches)


def retrieve_factual(parsed: ParsedQuery, store: CausalGraph, providers: Providers, cfg: RetrievalConfig | None = None) -> FactualContext:
    cfg = cfg or RetrievalConfig()
    resolution = resolve_event(parsed.main_event, store, providers, cfg)
    outcomes = set(resolution.accepted)
    by_cause: dict[str, dict[tuple, CausalChain]] = {}
    rules: dict[CausalEdge, None] = {}
    for outcome in resolution.accepted:
        for chain in store.traverse_upstream(outcome, cfg.d_factual):
            for nid in chain.path[:-1]:
                if nid not in outcomes:
                    by_cause.setdefault(nid, {})[chain.path] = chain
            for a, b in zip(chain.path, chain.path[1:]):
                for edge in store.edges_between(a, b):
                    rules[edge] = None
    causes = [
        CauseEvidence(nid, store.node(nid).text, tuple(chains[p] for p in sorted(chains)))
        for nid, chains in sorted(by_cause.items())
    ]
    return FactualContext(resolution, causes, sorted(rules, key=lambda e: e.sort_key))
