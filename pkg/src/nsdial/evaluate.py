"""Batched decoding over samples and evaluation reports for trained models."""

from __future__ import annotations

from typing import Sequence

import torch

from .metrics import EvalReport, F1Counts, bucketed_eval, extract_entities
from .model import DecodeResult, NSDialModel
from .train import Sample


def predict(
    model: NSDialModel,
    samples: Sequence[Sample],
    batch_size: int = 64,
    max_len: int = 20,
    trace: bool = False,
) -> list[DecodeResult]:
    """Greedy responses for ``samples``, batched; order follows the input."""
    model.eval()
    out: list[DecodeResult] = []
    with torch.no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i : i + batch_size]
            hist = [model.enc_vocab.encode(s.history) for s in chunk]
            out.extend(model.greedy_decode(hist, max_len=max_len, trace=trace))
    return out


def evaluate(
    model: NSDialModel,
    samples: Sequence[Sample],
    batch_size: int = 64,
    max_len: int = 20,
    smooth: bool = False,
    trace: bool = False,
) -> tuple[EvalReport, list[DecodeResult]]:
    results = predict(model, samples, batch_size, max_len, trace)
    report = bucketed_eval(samples, [r.tokens for r in results], model.kb, smooth)
    return report, results


def dev_entity_f1(model: NSDialModel, samples: Sequence[Sample]) -> float:
    """Entity F1 on ``samples``; used for checkpoint selection during training."""
    counts = F1Counts()
    for s, r in zip(samples, predict(model, samples)):
        counts.add(set(s.entities), extract_entities(r.tokens, model.kb))
    return counts.f1


STRUCTURE_LABELS = ("H-Hypothesis", "T-Hypothesis", "R-Hypothesis")


def _num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and x == x


def check_step(step: dict, K: int) -> list[str]:
    """Schema problems of one KB-channel trace step (empty when complete)."""
    where = f"step {step.get('step')}"
    probs = []
    if step.get("structure") not in STRUCTURE_LABELS:
        probs.append(f"{where}: structure {step.get('structure')!r}")
    states = step.get("states")
    if not isinstance(states, list) or [s.get("k") for s in states] != [0, 1] or not all(isinstance(s.get("token"), str) for s in states):
        probs.append(f"{where}: states {states!r}")
    cands = step.get("candidates")
    if not isinstance(cands, list) or len(cands) != K or not all(isinstance(c.get("token"), str) and _num(c.get("prob")) for c in cands):
        probs.append(f"{where}: expected {K} candidates with probabilities")
    hyps = step.get("hypotheses")
    if not isinstance(hyps, list) or len(hyps) != K:
        probs.append(f"{where}: expected {K} hypotheses")
    else:
        for h in hyps:
            if not (_num(h.get("belief")) and 0.0 <= h["belief"] <= 1.0):
                probs.append(f"{where}: hypothesis {h.get('triple')} lacks a belief score in [0, 1]")
            if len(h.get("triple", ())) != 3:
                probs.append(f"{where}: hypothesis triple {h.get('triple')!r}")
    return probs


def check_traces(traces: Sequence[list[dict]], K: int) -> list[str]:
    """Check every KB-channel step of every turn; the turn index prefixes each problem."""
    out = []
    for i, trace in enumerate(traces):
        for st in trace:
            if st.get("kb_channel"):
                out += [f"turn {i}, {p}" for p in check_step(st, K)]
    return out
