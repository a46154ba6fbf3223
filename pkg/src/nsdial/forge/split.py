"""Entity-disjoint train/test splits with a target entity overlap."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path


class UnreachableOverlap(ValueError):
    """No cut of the entity ranking meets the target; ``closest`` holds the best attempt."""

    def __init__(self, message: str, closest: "UnseenSplit"):
        super().__init__(message)
        self.closest = closest


@dataclass
class UnseenSplit:
    train_entities: list[str]
    test_entities: list[str]
    samples: list[str]  # "<dialogue>:<turn>" ids
    assignments: list[str]  # "train" | "dev" | "test" per sample
    achieved_overlap: float
    target_overlap: float
    threshold: float = 0.0  # accumulated sample percentage at the cut
    counts: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "train_entities": self.train_entities,
            "test_entities": self.test_entities,
            "samples": self.samples,
            "assignments": self.assignments,
            "achieved_overlap": self.achieved_overlap,
            "target_overlap": self.target_overlap,
            "threshold": self.threshold,
            "counts": self.counts,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")


def response_entities(dialogues: list[dict]) -> tuple[list[str], list[set[str]]]:
    """One sample per turn: its id and the gold entities of its system response."""
    ids, ents = [], []
    for di, d in enumerate(dialogues):
        for ti, turn in enumerate(d["turns"]):
            ids.append(f"{di}:{ti}")
            ents.append(set(turn.get("entities", [])))
    return ids, ents


def entity_overlap(train_sets: list[set[str]], test_sets: list[set[str]]) -> float:
    """|train entities & test entities| / |all entities|."""
    tr = set().union(*train_sets) if train_sets else set()
    te = set().union(*test_sets) if test_sets else set()
    total = tr | te
    return len(tr & te) / len(total) if total else 0.0


def make_unseen_split(
    dialogues: list[dict],
    target_overlap: float,
    dev_fraction: float = 0.1,
    seed: int = 0,
    test_fraction: float = 0.3,
) -> UnseenSplit:
    """Split turn-level samples so test entities are mostly unseen in training.

    Entities are ranked by the share of samples whose response mentions them.
    The most frequent ones up to an accumulated-share threshold form the
    training entity set, and a sample goes to test only when all of its
    response entities lie outside it. Every threshold is tried; among those meeting the target
    overlap the one whose test share is closest to ``test_fraction`` wins. A dev set is then drawn from train.
    """
    if not 0.0 <= target_overlap <= 1.0:
        raise ValueError("target overlap must be in [0, 1]")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test fraction must be in (0, 1)")
    if not 0.0 <= dev_fraction < 1.0:
        raise ValueError("dev fraction must be in [0, 1)")
    ids, ents = response_entities(dialogues)
    n = len(ids)
    if n < 2:
        raise ValueError("need at least two samples to split")
    count: dict[str, int] = {}
    for s in ents:
        for e in s:
            count[e] = count.get(e, 0) + 1
    ranked = sorted(count, key=lambda e: (-count[e], e))
    best = closest = None
    acc = 0.0
    for cut in range(1, len(ranked)):
        acc += count[ranked[cut - 1]] / n
        train_set = set(ranked[:cut])
        is_test = [bool(s) and not (s & train_set) for s in ents]
        n_test = sum(is_test)
        if n_test == 0 or n_test == n:
            continue
        ov = entity_overlap([s for s, t in zip(ents, is_test) if not t], [s for s, t in zip(ents, is_test) if t])
        cand = (cut, acc, is_test, ov, n_test)
        if closest is None or abs(ov - target_overlap) < abs(closest[3] - target_overlap):
            closest = cand
        if ov <= target_overlap and (best is None or abs(n_test / n - test_fraction) < abs(best[4] / n - test_fraction)):
            best = cand
    if closest is None:
        raise ValueError("no entity threshold separates the samples into nonempty train and test sets")
    if best is None:
        raise UnreachableOverlap(
            f"target overlap {target_overlap:.4f} unreachable; closest achievable is {closest[3]:.4f}",
            _finish(closest, ids, ents, target_overlap, dev_fraction, seed),
        )
    return _finish(best, ids, ents, target_overlap, dev_fraction, seed)


def _finish(cand, ids, ents, target, dev_fraction, seed) -> UnseenSplit:
    cut, acc, is_test, ov, _ = cand
    assign = ["test" if t else "train" for t in is_test]
    train_idx = [i for i, a in enumerate(assign) if a == "train"]
    n_dev = int(round(len(train_idx) * dev_fraction))
    for i in random.Random(seed).sample(train_idx, n_dev):
        assign[i] = "dev"
    test_ents = sorted(set().union(*[s for s, t in zip(ents, is_test) if t]))
    train_ents = sorted(set().union(*[s for s, t in zip(ents, is_test) if not t]))
    counts = {k: assign.count(k) for k in ("train", "dev", "test")}
    return UnseenSplit(train_ents, test_ents, list(ids), assign, ov, target, acc, counts)
