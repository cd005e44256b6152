"""Counterfactual probes: replace a cause by its opposite and check whether the
outcome is still reachable in the graph."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from .config import RetrievalConfig
from .errors import CkgError, EmptyInput
from .providers import PromptKind, Providers
from .query import CauseEvidence, ResolvedEvent, resolve_event
from .store import CausalChain, CausalGraph, normalize_text

log = logging.getLogger(__name__)


class Verdict(str, Enum):
    NECESSARY = "necessary"
    NOT_NECESSARY = "not_necessary"
    UNDETERMINED = "undetermined"


class Rationale(str, Enum):
    OUTCOME_ABSENT_IN_CF = "outcome_absent_in_cf"
    OUTCOME_PRESENT_IN_CF = "outcome_present_in_cf"
    NO_CF_NODE_FOUND = "no_cf_node_found"


@dataclass(frozen=True)
class NecessityVerdict:
    verdict: Verdict
    rationale: Rationale


@dataclass
class CounterfactualProbe:
    cause_id: str
    cause_text: str
    counterfactual_text: str = ""
    resolution: Optional[ResolvedEvent] = None
    downstream: list[CausalChain] = field(default_factory=list)
    outcome_reached: bool = False
    error: Optional[str] = None

    @property
    def matched_nodes(self) -> list[str]:
        return self.resolution.accepted if self.resolution else []


@dataclass
class ProbeResult:
    cause: CauseEvidence
    probe: CounterfactualProbe
    verdict: NecessityVerdict


def _is_bare_negation(candidate: str, original: str) -> bool:
    for prefix in ("not ", "no ", "non-", "not-"):
        if candidate == prefix + original:
            return True
    return False


def generate_counterfactual(cause_text: str, providers: Providers) -> str:
    original = normalize_text(cause_text).lower()
    if not original:
        raise EmptyInput("cause text is empty")

    def check(resp) -> None:
        cf = normalize_text(resp.counterfactual).lower()
        if not cf:
            raise ValueError("counterfactual is blank")
        if cf == original:
            raise ValueError("counterfactual repeats the cause")
        if _is_bare_negation(cf, original):
            raise ValueError("counterfactual is a bare negation; describe the opposite state")

    resp = providers.chat.chat(PromptKind.GENERATE_COUNTERFACTUAL, {"cause": cause_text}, check=check)
    return normalize_text(resp.counterfactual)


def simulate(
    counterfactual_text: str,
    outcome_nodes: Sequence[str],
    store: CausalGraph,
    providers: Providers,
    cfg: RetrievalConfig | None = None,
) -> tuple[ResolvedEvent, list[CausalChain], bool]:
    """Resolve the counterfactual event and follow its downstream effects."""
    cfg = cfg or RetrievalConfig()
    resolution = resolve_event(counterfactual_text, store, providers, cfg)
    outcomes = set(outcome_nodes)
    downstream = [c for nid in resolution.accepted for c in store.traverse_downstream(nid, cfg.cf_depth)]
    reached = any(outcomes.intersection(c.path) for c in downstream)
    return resolution, downstream, reached


def necessity_verdict(probe: CounterfactualProbe) -> NecessityVerdict:
    if not probe.matched_nodes:
        return NecessityVerdict(Verdict.UNDETERMINED, Rationale.NO_CF_NODE_FOUND)
    if probe.outcome_reached:
        return NecessityVerdict(Verdict.NOT_NECESSARY, Rationale.OUTCOME_PRESENT_IN_CF)
    return NecessityVerdict(Verdict.NECESSARY, Rationale.OUTCOME_ABSENT_IN_CF)


def probe_cause(
    cause: CauseEvidence,
    outcome_nodes: Sequence[str],
    store: CausalGraph,
    providers: Providers,
    cfg: RetrievalConfig | None = None,
) -> CounterfactualProbe:
    probe = CounterfactualProbe(cause.node_id, cause.text)
    try:
        probe.counterfactual_text = generate_counterfactual(cause.text, providers)
        probe.resolution, probe.downstream, probe.outcome_reached = simulate(
            probe.counterfactual_text, outcome_nodes, store, providers, cfg
        )
    except CkgError as exc:
        log.warning("probe for %r degraded: %s", cause.text, exc)
        probe.resolution, probe.downstream, probe.outcome_reached = None, [], False
        probe.error = f"{type(exc).__name__}: {exc}"
    return probe


def probe_all(
    causes: Sequence[CauseEvidence],
    outcome_nodes: Sequence[str],
    store: CausalGraph,
    providers: Providers,
    cfg: RetrievalConfig | None = None,
    workers: int = 1,
) -> list[ProbeResult]:
    """One probe per distinct cause, ordered by cause node id."""
    distinct = {c.node_id: c for c in causes}
    ordered = [distinct[k] for k in sorted(distinct)]
    run = lambda c: probe_cause(c, outcome_nodes, store, providers, cfg)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            probes = list(pool.map(run, ordered))
    else:
        probes = [run(c) for c in ordered]
    return [ProbeResult(c, p, necessity_verdict(p)) for c, p in zip(ordered, probes)]
