"""Authored stand-ins for the hosted models, used only to (re)record the
fixture transcript.

``LexiconEmbedder`` maps a small vocabulary of concepts to fixed random base
vectors, so phrases naming the same concepts land close together whatever
their direction words. ``ScriptedBackend`` answers each prompt kind from the
tables below or from simple, documented rules over the request payload.
Nothing here is imported by the package.
"""

from __future__ import annotations

import json
import math
import re

import numpy as np

from ccrag.providers import ChatRequest, mock_embed

LEXICON = {
    "drought": "drought",
    "rain": "rainfall", "rainfall": "rainfall",
    "harvest": "harvest", "harvests": "harvest", "yields": "harvest", "crop": "harvest", "crops": "harvest",
    "food": "food",
    "price": "price", "prices": "price",
    "interest": "interest",
    "rate": "rate", "rates": "rate",
    "borrowing": "borrowing",
    "cost": "cost", "costs": "cost",
    "business": "business",
    "investment": "investment",
    "regulation": "regulation",
    "compliance": "compliance",
    "profit": "profit", "profits": "profit", "reported": "profit", "financial": "profit", "report": "profit",
    "debt": "debt",
    "fertilizer": "fertilizer",
}

UP = {"rose", "rise", "rises", "rising", "risen", "raised", "raise", "increase", "increased", "increases",
      "higher", "abundant", "heavier", "more", "climbed", "mounted"}
DOWN = {"fell", "fall", "falls", "falling", "fallen", "reduced", "reduce", "lowered", "lower", "decrease",
        "decreased", "decreases", "cut", "less", "lighter", "declined", "poor"}
PRESENCE = {"occurred", "occur", "enacted", "struck", "new"}
ABSENCE = {"no", "not", "without", "absence"}

STOP = {"the", "a", "an", "of", "in", "on", "to", "and", "or", "for", "by", "with", "which", "that", "this",
        "was", "were", "is", "are", "be", "been", "had", "has", "have", "did", "do", "does", "would", "could",
        "if", "why", "what", "when", "how", "it", "its", "as", "at", "into", "also", "turn", "s", "there"}

DIRECTION_WEIGHT = 0.3
WORD_WEIGHT = 0.15
TEXT_WEIGHT = 0.05


def tokens(text: str) -> list[str]:
    return re.findall(r"[a-z]+", text.lower().replace("'s", ""))


def concepts(text: str) -> frozenset[str]:
    return frozenset(LEXICON[t] for t in tokens(text) if t in LEXICON)


def direction(text: str) -> str:
    toks = tokens(text)
    if any(t in ABSENCE for t in toks):
        return "absence"
    for t in toks:
        if t in UP:
            return "increase"
        if t in DOWN:
            return "decrease"
        if t in PRESENCE:
            return "presence"
    return "neutral"


def _base(key: str) -> np.ndarray:
    return mock_embed(key).astype(np.float64)


class LexiconEmbedder:
    def vector(self, text: str) -> np.ndarray:
        acc = np.zeros(384)
        for c in sorted(concepts(text)):
            acc += _base("concept:" + c)
        d = direction(text)
        if d != "neutral":
            acc += DIRECTION_WEIGHT * _base("direction:" + d)
        skip = set(LEXICON) | UP | DOWN | PRESENCE | ABSENCE | STOP
        for t in sorted(set(tokens(text)) - skip):
            acc += WORD_WEIGHT * _base("word:" + t)
        acc += TEXT_WEIGHT * _base("text:" + text)
        return (acc / np.linalg.norm(acc)).astype(np.float32)

    def embed(self, texts):
        return [self.vector(t) for t in texts]


# -- authored tables ------------------------------------------------------------

# (evidence quote, (cause text, polarity), (effect text, polarity))
PAIRS = [
    ("The drought reduced harvests, which raised food prices.",
     ("the drought", "presence"), ("reduced harvests", "decrease")),
    ("The drought reduced harvests, which raised food prices.",
     ("reduced harvests", "decrease"), ("raised food prices", "increase")),
    ("Normal rainfall across the eastern plains produced abundant harvests in 2019.",
     ("normal rainfall", "neutral"), ("abundant harvests", "increase")),
    ("Abundant harvests in turn lowered food prices throughout the region.",
     ("abundant harvests", "increase"), ("lower food prices", "decrease")),
    ("Higher interest rates increased borrowing costs for firms.",
     ("higher interest rates", "increase"), ("increased borrowing costs", "increase")),
    ("Rising borrowing costs reduced business investment over the following year.",
     ("rising borrowing costs", "increase"), ("reduced business investment", "decrease")),
    ("The new regulation raised compliance costs for the company.",
     ("the new regulation", "presence"), ("higher compliance costs", "increase")),
    ("Higher compliance costs lowered the company's reported profits.",
     ("higher compliance costs", "increase"), ("lower reported profits", "decrease")),
    ("Rising interest rates also cut into reported profits.",
     ("rising interest rates", "increase"), ("lower reported profits", "decrease")),
    ("When interest rates fell in 2020, the company took on more debt.",
     ("falling interest rates", "decrease"), ("more company debt", "increase")),
    ("The heavier debt load lowered reported profits as interest payments mounted.",
     ("heavier debt load", "increase"), ("lower reported profits", "decrease")),
    ("Higher fertilizer costs reduced harvests on smallholder farms.",
     ("higher fertilizer costs", "increase"), ("reduced harvests", "decrease")),
]

PARSES = {
    "Why did food prices rise in the eastern plains?":
        dict(evidences=[], interventions=[], query_variable="food prices", main_event="food prices rose"),
    "Would food prices have risen if the drought had not occurred?":
        dict(evidences=[], interventions=["the drought did not occur"], query_variable="food prices",
             main_event="food prices rose"),
    "What was the impact of the new regulation on the company's financial report?":
        dict(evidences=["new regulation enacted"], interventions=[], query_variable="the company's financial report",
             main_event="impact on the company's financial report"),
    "Would the company's reported profits have fallen if interest rates had not risen?":
        dict(evidences=[], interventions=["interest rates did not rise"], query_variable="reported profits",
             main_event="reported profits fell"),
    "Why did business investment decrease?":
        dict(evidences=[], interventions=[], query_variable="business investment",
             main_event="business investment decreased"),
    "Would harvests have decreased without the drought?":
        dict(evidences=[], interventions=["no drought"], query_variable="harvests", main_event="harvests decreased"),
    "What caused compliance costs to increase?":
        dict(evidences=[], interventions=[], query_variable="compliance costs", main_event="compliance costs increased"),
    "If interest rates had not fallen in 2020, would the company have taken on more debt?":
        dict(evidences=["interest rates fell in 2020"], interventions=["interest rates did not fall"],
             query_variable="company debt", main_event="the company took on more debt"),
    "Would prices have risen if the drought had not occurred?":
        dict(evidences=[], interventions=["no drought"], query_variable="prices", main_event="prices rose"),
    "Why did the harbour freeze?":
        dict(evidences=[], interventions=[], query_variable="harbour", main_event="the harbour froze"),
}

COUNTERFACTUALS = {
    "the drought": "normal rainfall",
    "the drought occurred": "normal rainfall",
    "normal rainfall": "a severe drought",
    "the new regulation": "the new regulation was not enacted",
}

# the first reply for these causes is a bare negation, which the caller must reject
BARE_FIRST = {"the new regulation"}

FLIPS = {
    "higher": "lower", "lower": "higher", "rising": "falling", "falling": "rising", "rise": "fall",
    "fall": "rise", "rose": "fell", "fell": "rose", "increased": "decreased", "decreased": "increased",
    "raised": "lowered", "lowered": "raised", "reduced": "abundant", "abundant": "reduced",
    "more": "less", "less": "more", "heavier": "lighter", "lighter": "heavier",
}


def flip(text: str) -> str:
    words = text.split()
    out = [FLIPS.get(w.lower(), w) for w in words]
    if out == words:
        return f"the absence of {text}"
    return " ".join(out)


# -- rules ------------------------------------------------------------------------


def same_event(a: str, b: str) -> bool:
    ca, cb = concepts(a), concepts(b)
    return bool(ca) and ca == cb


def same_polarity(a: str, b: str) -> bool:
    da, db = direction(a), direction(b)
    if da == db:
        return True
    # an unspecified direction is compatible with any state except absence
    return "neutral" in (da, db) and "absence" not in (da, db)


def _sentences(text: str) -> list[str]:
    return [s.strip() for s in re.split(r"(?<=[.!?])\s+", text) if s.strip()]


def _join(items: list[str]) -> str:
    quoted = [f'"{i}"' for i in items]
    if len(quoted) == 1:
        return quoted[0]
    return ", ".join(quoted[:-1]) + " and " + quoted[-1]


def _scale(fraction: float) -> int:
    return 1 + math.floor(4 * fraction + 0.5)


class ScriptedBackend:
    def __init__(self) -> None:
        self.calls = 0

    def complete(self, request: ChatRequest) -> str:
        self.calls += 1
        handler = getattr(self, "_" + request.kind.value)
        return json.dumps(handler(request.payload, request.attempt), sort_keys=True)

    def _extract_pairs(self, payload, attempt):
        text = payload["text"]
        found = [(text.index(ev), i) for i, (ev, _, _) in enumerate(PAIRS) if ev in text]
        pairs = []
        for _, i in sorted(found):
            ev, (ct, cp), (et, ep) = PAIRS[i]
            pairs.append({"cause": {"text": ct, "polarity": cp}, "effect": {"text": et, "polarity": ep},
                          "evidence": ev})
        return {"pairs": pairs}

    def _verify_equivalence(self, payload, attempt):
        a, b = payload["event"], payload["candidate"]
        return {"same_event": same_event(a, b), "same_polarity": same_polarity(a, b)}

    def _parse_query(self, payload, attempt):
        return PARSES[payload["query"]]

    def _generate_counterfactual(self, payload, attempt):
        cause = payload["cause"]
        key = cause.lower()
        if key in BARE_FIRST and attempt == 0:
            return {"counterfactual": "not " + cause}
        return {"counterfactual": COUNTERFACTUALS.get(key) or flip(cause)}

    def _synthesize_answer(self, payload, attempt):
        causes = payload["causes"]
        by = lambda v: [c for c in causes if c["verdict"] == v]
        necessary, weaker, untested = by("necessary"), by("not_necessary"), by("undetermined")
        parts = [f'The graph traces "{payload["main_event"]}" back to {_join([c["event"] for c in causes])}.']
        if necessary:
            verb = "was" if len(necessary) == 1 else "were"
            parts.append(f"Counterfactual tests show that {_join([c['event'] for c in necessary])} {verb} necessary for it.")
        if weaker:
            parts.append(f"The outcome still follows without {_join([c['event'] for c in weaker])}, so "
                         f"{'that cause' if len(weaker) == 1 else 'those causes'} contributed but "
                         f"{'was' if len(weaker) == 1 else 'were'} not necessary.")
        if untested:
            parts.append(f"The role of {_join([c['event'] for c in untested])} could not be tested against the graph.")
        claimed = [c["label"] for c in necessary]
        if weaker and attempt == 0:
            # overclaims on the first try; the caller must reject it
            claimed = [c["label"] for c in necessary + weaker]
        return {"answer": " ".join(parts), "necessary_causes": claimed}

    def _judge_answer(self, payload, attempt):
        ideal = concepts(payload["ideal_answer"])
        generated = concepts(payload["generated_answer"])
        shared = ideal & generated
        c = _scale(len(shared) / len(ideal)) if ideal else 1
        fr = _scale(len(shared) / len(generated)) if generated else 1
        return {"correctness": c, "faithfulness_reasoning": fr}

    def _baseline_answer(self, payload, attempt):
        wanted = concepts(payload["question"])
        scored = []
        for sentence in (s for chunk in payload["context"] for s in _sentences(chunk)):
            overlap = len(concepts(sentence) & wanted)
            if overlap and sentence not in {s for _, _, s in scored}:
                scored.append((-overlap, len(scored), sentence))
        best = [s for _, _, s in sorted(scored)[:3]]
        if not best:
            return {"answer": "The retrieved passages do not answer the question."}
        return {"answer": "According to the retrieved passages: " + " ".join(best)}
