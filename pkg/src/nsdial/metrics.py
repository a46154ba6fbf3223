"""BLEU, entity F1 and hop-bucketed evaluation reports."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .kb import KnowledgeBase, TokenKind

MAX_N = 4


def _tokens(x) -> list[str]:
    return x.split() if isinstance(x, str) else list(x)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class BleuStats:
    """Sufficient statistics for corpus BLEU; they add up across corpora."""

    matches: list[int] = field(default_factory=lambda: [0] * MAX_N)
    totals: list[int] = field(default_factory=lambda: [0] * MAX_N)
    hyp_len: int = 0
    ref_len: int = 0

    def add(self, reference, hypothesis) -> None:
        ref, hyp = _tokens(reference), _tokens(hypothesis)
        self.hyp_len += len(hyp)
        self.ref_len += len(ref)
        for n in range(1, MAX_N + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            self.matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            self.totals[n - 1] += max(0, len(hyp) - n + 1)

    def __iadd__(self, other: "BleuStats") -> "BleuStats":
        self.matches = [a + b for a, b in zip(self.matches, other.matches)]
        self.totals = [a + b for a, b in zip(self.totals, other.totals)]
        self.hyp_len += other.hyp_len
        self.ref_len += other.ref_len
        return self

    def score(self, smooth: bool = False) -> float:
        if self.hyp_len == 0:
            return 0.0
        log_p = 0.0
        for n in range(MAX_N):
            m, t = self.matches[n], self.totals[n]
            if smooth and n > 0:
                m, t = m + 1, t + 1  # add-one for n >= 2
            if m == 0 or t == 0:
                return 0.0
            log_p += math.log(m / t) / MAX_N
        bp = 1.0 if self.hyp_len > self.ref_len else math.exp(1.0 - self.ref_len / self.hyp_len)
        return 100.0 * bp * math.exp(log_p)


def corpus_bleu(references: Sequence, hypotheses: Sequence, smooth: bool = False) -> float:
    """Corpus BLEU-4 with uniform weights and a brevity penalty, on a 0-100 scale.

    Items are token lists or whitespace-separated strings, one reference per
    hypothesis. ``smooth`` adds one to the 2- to 4-gram counts.
    """
    if len(references) != len(hypotheses):
        raise ValueError(f"{len(references)} references but {len(hypotheses)} hypotheses")
    stats = BleuStats()
    for r, h in zip(references, hypotheses):
        stats.add(r, h)
    return stats.score(smooth)


@dataclass
class F1Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    turns: int = 0  # turns that entered the micro counts

    def add(self, gold: set[str], pred: set[str]) -> None:
        if not gold and not pred:
            return
        self.turns += 1
        self.tp += len(gold & pred)
        self.fp += len(pred - gold)
        self.fn += len(gold - pred)

    def __iadd__(self, other: "F1Counts") -> "F1Counts":
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        self.turns += other.turns
        return self

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 0.0


def extract_entities(text, kb: KnowledgeBase) -> set[str]:
    """KB entity surface forms occurring as whole tokens of ``text``."""
    return {w for w in _tokens(text) if w in kb and kb.kind(kb.id(w)) is TokenKind.ENTITY}


def entity_f1(gold_sets: Sequence[Iterable[str]], predicted_texts: Sequence, kb: KnowledgeBase) -> float:
    """Micro-averaged, set-wise entity F1; turns with no gold and no predicted entity are skipped."""
    if len(gold_sets) != len(predicted_texts):
        raise ValueError(f"{len(gold_sets)} gold sets but {len(predicted_texts)} predictions")
    counts = F1Counts()
    for g, p in zip(gold_sets, predicted_texts):
        counts.add(set(g), extract_entities(p, kb))
    return counts.f1


@dataclass
class Bucket:
    n: int = 0
    bleu_stats: BleuStats = field(default_factory=BleuStats)
    f1_counts: F1Counts = field(default_factory=F1Counts)

    def add(self, reference, hypothesis, gold: set[str], pred: set[str]) -> None:
        self.n += 1
        self.bleu_stats.add(reference, hypothesis)
        self.f1_counts.add(gold, pred)

    def __iadd__(self, other: "Bucket") -> "Bucket":
        self.n += other.n
        self.bleu_stats += other.bleu_stats
        self.f1_counts += other.f1_counts
        return self

    def to_json(self, smooth: bool = False) -> dict:
        c = self.f1_counts
        return {
            "n": self.n,
            "bleu": self.bleu_stats.score(smooth),
            "entity_f1": c.f1,
            "tp": c.tp,
            "fp": c.fp,
            "fn": c.fn,
        }


@dataclass
class EvalReport:
    overall: Bucket
    by_hop: dict[int, Bucket]
    by_domain: dict[str, Bucket]
    smooth: bool = False

    @property
    def bleu(self) -> float:
        return self.overall.bleu_stats.score(self.smooth)

    @property
    def entity_f1(self) -> float:
        return self.overall.f1_counts.f1

    def hop_f1(self, hop: int) -> float | None:
        b = self.by_hop.get(hop)
        return b.f1_counts.f1 if b is not None else None

    def reconciles(self) -> bool:
        """Bucket counts add up to the overall counts."""
        total = Bucket()
        for b in self.by_hop.values():
            total += b
        o = self.overall
        return (
            total.n == o.n
            and total.bleu_stats == o.bleu_stats
            and (total.f1_counts.tp, total.f1_counts.fp, total.f1_counts.fn) == (o.f1_counts.tp, o.f1_counts.fp, o.f1_counts.fn)
        )

    def to_json(self) -> dict:
        return {
            "bleu": self.bleu,
            "entity_f1": self.entity_f1,
            "n": self.overall.n,
            "overall": self.overall.to_json(self.smooth),
            "by_hop": {str(k): b.to_json(self.smooth) for k, b in sorted(self.by_hop.items())},
            "by_domain": {k: b.to_json(self.smooth) for k, b in sorted(self.by_domain.items())},
        }

    def table(self) -> str:
        rows = [("all", self.overall)] + [(f"{k}-hop", b) for k, b in sorted(self.by_hop.items())]
        rows += [(d, b) for d, b in sorted(self.by_domain.items())]
        lines = [f"{'bucket':<12}{'n':>6}{'BLEU':>9}{'EntF1':>9}"]
        for name, b in rows:
            j = b.to_json(self.smooth)
            lines.append(f"{name:<12}{j['n']:>6}{j['bleu']:>9.2f}{100 * j['entity_f1']:>9.2f}")
        return "\n".join(lines)


def bucketed_eval(samples: Sequence, predictions: Sequence, kb: KnowledgeBase, smooth: bool = False) -> EvalReport:
    """Overall, per-hop and per-domain BLEU and entity F1.

    ``samples`` need ``response``, ``entities``, ``hop`` and ``domain``
    attributes; turns without a hop label land in bucket 0.
    """
    if len(samples) != len(predictions):
        raise ValueError(f"{len(samples)} samples but {len(predictions)} predictions")
    overall, by_hop, by_domain = Bucket(), {}, {}
    for s, p in zip(samples, predictions):
        gold, pred = set(s.entities), extract_entities(p, kb)
        args = (s.response, _tokens(p), gold, pred)
        overall.add(*args)
        by_hop.setdefault(s.hop if s.hop is not None else 0, Bucket()).add(*args)
        by_domain.setdefault(s.domain or "unknown", Bucket()).add(*args)
    return EvalReport(overall, by_hop, by_domain, smooth)
