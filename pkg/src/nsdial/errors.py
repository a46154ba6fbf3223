"""Attribute failed turns to the first pipeline stage that went wrong."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

from .hypothesis import CANDIDATE_SLOT, StructureType
from .kb import KnowledgeBase

_BY_LABEL = {s.label: s for s in StructureType}


class ErrorCategory(str, enum.Enum):
    STRUCTURE = "structure"
    QUERY_STATES = "query_states"
    CANDIDATES = "candidates"
    BELIEF_SCORE = "belief_score"


@dataclass
class ErrorRecord:
    category: ErrorCategory
    turn: int  # index into the evaluated samples
    step: int | None
    trace: dict = field(default_factory=dict)
    detail: str = ""


@dataclass(frozen=True)
class OracleHypothesis:
    """A gold-consistent hypothesis; ``None`` state slots match anything."""

    structure: StructureType
    states: tuple[str | None, str | None]

    def states_match(self, states: Sequence[str]) -> bool:
        return all(o is None or o == s for o, s in zip(self.states, states))


def oracle_hypotheses(gold: str, kb: KnowledgeBase, query: tuple[str, str] | None = None) -> list[OracleHypothesis]:
    """Hypotheses whose unknown slot is ``gold``: its KB triples plus the multi-hop query shape."""
    out: list[OracleHypothesis] = []
    if gold in kb:
        g = kb.id(gold)
        for h, r, t in kb.triples:
            if h == g:
                out.append(OracleHypothesis(StructureType.H, (kb.name(r), kb.name(t))))
            if t == g:
                out.append(OracleHypothesis(StructureType.T, (kb.name(h), kb.name(r))))
            if r == g:
                out.append(OracleHypothesis(StructureType.R, (kb.name(h), kb.name(t))))
    if query is not None:
        head, tail = query
        # the path relation is not a single KB relation, so it is left open
        if head == gold:
            out.append(OracleHypothesis(StructureType.H, (None, tail)))
        if tail == gold:
            out.append(OracleHypothesis(StructureType.T, (head, None)))
    return out


def _focus_step(trace: list[dict]) -> dict | None:
    """The step emitted by the KB channel, else the one where the gate leaned hardest towards it."""
    for st in trace:
        if st.get("kb_channel"):
            return st
    return min(trace, key=lambda st: st["p_gen"]) if trace else None


def categorize_turn(trace: list[dict], gold: str, kb: KnowledgeBase, query=None, turn: int = 0) -> ErrorRecord:
    st = _focus_step(trace)
    if st is None:
        return ErrorRecord(ErrorCategory.STRUCTURE, turn, None, {}, "empty response")
    slice_ = {k: st.get(k) for k in ("step", "token", "structure", "states", "candidates", "hypotheses")}
    oracle = oracle_hypotheses(gold, kb, query)
    structure = _BY_LABEL[st["structure"]]
    same = [o for o in oracle if o.structure is structure]
    if not same:
        return ErrorRecord(ErrorCategory.STRUCTURE, turn, st["step"], slice_, f"predicted {structure.label}")
    states = [s["token"] for s in st["states"]]
    if not any(o.states_match(states) for o in same):
        return ErrorRecord(ErrorCategory.QUERY_STATES, turn, st["step"], slice_, f"states {states}")
    cands = [c["token"] for c in st["candidates"]]
    if gold not in cands:
        return ErrorRecord(ErrorCategory.CANDIDATES, turn, st["step"], slice_, f"{gold} not among {cands}")
    hyps = st["hypotheses"]
    key = "belief" if hyps and hyps[0].get("belief") is not None else "cp_prob"
    ranked = sorted(hyps, key=lambda h: -h[key])
    rank = next(i for i, h in enumerate(ranked) if h["triple"][CANDIDATE_SLOT[structure]] == gold)
    return ErrorRecord(ErrorCategory.BELIEF_SCORE, turn, st["step"], slice_, f"gold hypothesis ranked {rank + 1} by {key}")


def categorize_errors(traces: Sequence[list[dict]], gold: Sequence, kb: KnowledgeBase) -> list[ErrorRecord]:
    """One record per failed turn.

    ``gold`` items are ``(entities, predicted_tokens, query)`` with ``query``
    the ``(head, tail)`` of the reasoning path or ``None``. A turn fails when
    its predicted entity set differs from the gold set; turns without gold
    entities are not attributed.
    """
    from .metrics import extract_entities

    if len(traces) != len(gold):
        raise ValueError(f"{len(traces)} traces but {len(gold)} gold turns")
    out = []
    for i, (trace, g) in enumerate(zip(traces, gold)):
        entities, predicted, query = g
        if not entities or set(entities) == extract_entities(predicted, kb):
            continue
        out.append(categorize_turn(trace, entities[0], kb, query, i))
    return out


def summarize(records: Sequence[ErrorRecord]) -> dict[str, int]:
    counts = {c.value: 0 for c in ErrorCategory}
    for r in records:
        counts[r.category.value] += 1
    return counts
