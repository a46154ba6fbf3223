"""Hierarchical reasoning engine: proof-tree expansion, belief scores, decoding.

A hypothesis ``[H, R, T]`` lives in the candidate-embedding space as three
vectors. Each expansion predicts a bridge entity ``Z`` and two relations and
replaces the node by ``[H, R1, Z]`` and ``[Z, R2, T]``. Levels are kept as
tensors whose node axis is in DFS leaf order (children of node ``i`` are
``2i`` and ``2i + 1``).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .kb import KnowledgeBase, TokenKind, Triple

MAX_DEPTH = 5
_BLOCK = 1 << 22  # max elements of one distance matrix block


class ScoreMode(str, enum.Enum):
    FIXED_DEPTH = "fixed_depth"
    BEST_DEPTH = "best_depth"


@dataclass(frozen=True)
class ReasonerConfig:
    depth: int = 3
    mode: ScoreMode = ScoreMode.BEST_DEPTH

    def __post_init__(self):
        if not 1 <= self.depth <= MAX_DEPTH:
            raise ValueError(f"reasoning depth must be in [1, {MAX_DEPTH}], got {self.depth}")
        object.__setattr__(self, "mode", ScoreMode(self.mode))


def _mlp(d_in: int, d_hidden: int, d_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d_in, d_hidden), nn.LeakyReLU(0.01), nn.Linear(d_hidden, d_out))


class ReasoningEngine(nn.Module):
    def __init__(self, emb_dim: int, hidden: int):
        super().__init__()
        self.bridge = _mlp(3 * emb_dim, hidden, emb_dim)
        self.rel_left = _mlp(3 * emb_dim, hidden, emb_dim)
        self.rel_right = _mlp(3 * emb_dim, hidden, emb_dim)

    def expand(self, nodes: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """``(..., 3, E)`` nodes to their left and right sub-hypotheses."""
        flat = nodes.flatten(-2)
        z = self.bridge(flat)
        r1 = self.rel_left(flat)
        r2 = self.rel_right(flat)
        h, t = nodes[..., 0, :], nodes[..., 2, :]
        left = torch.stack([h, r1, z], dim=-2)
        right = torch.stack([z, r2, t], dim=-2)
        return left, right

    def build_levels(self, root: torch.Tensor, depth: int) -> list[torch.Tensor]:
        """All tree levels for ``root`` of shape ``(..., 3, E)``; level ``l`` is ``(..., 2**l, 3, E)``."""
        levels = [root.unsqueeze(-3)]
        for _ in range(depth):
            left, right = self.expand(levels[-1])
            levels.append(torch.stack([left, right], dim=-3).flatten(-4, -3))
        return levels


def kb_matrix(emb_cp: torch.Tensor, triples: torch.Tensor) -> torch.Tensor:
    """``(T, 3E)`` concatenated ``[h, r, t]`` embeddings of the KB triples."""
    return emb_cp[triples].flatten(-2)


def nearest_triples(x: torch.Tensor, kbm: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Euclidean distance from each row of ``x`` to its nearest KB triple.

    The argmin is found by a blocked scan without gradient; the returned
    distance is recomputed from the difference vector along the chosen
    branch, so it is exact and carries the min's subgradient.
    """
    if kbm.shape[0] == 0:
        raise ValueError("belief score needs a nonempty KB")
    rows = x.reshape(-1, x.shape[-1])
    idx = torch.empty(rows.shape[0], dtype=torch.long)
    step = max(1, _BLOCK // kbm.shape[0])
    with torch.no_grad():
        kd = kbm.detach()
        k2 = (kd * kd).sum(-1)
        for s in range(0, rows.shape[0], step):
            block = rows[s : s + step].detach()
            # |x|^2 is constant per row and does not affect the argmin
            idx[s : s + step] = (k2 - 2.0 * block @ kd.T).argmin(-1)
    diff = rows - kbm[idx]
    sq = (diff * diff).sum(-1)
    # sqrt has an infinite slope at 0; exact matches get a zero gradient instead
    dist = torch.sqrt(sq.clamp_min(1e-30))
    return dist.reshape(x.shape[:-1]), idx.reshape(x.shape[:-1])


@dataclass
class BeliefTensors:
    log_alpha: torch.Tensor  # (...,)
    best_depth: torch.Tensor  # (...,) long
    level_dist: list[torch.Tensor]  # per level (..., 2**l) nearest-triple distances
    level_idx: list[torch.Tensor]  # per level (..., 2**l) nearest-triple indices

    @property
    def alpha(self) -> torch.Tensor:
        return self.log_alpha.exp()


def belief(levels: list[torch.Tensor], kbm: torch.Tensor, mode: ScoreMode | str = ScoreMode.BEST_DEPTH) -> BeliefTensors:
    """Min over frontier nodes of max over KB triples of ``exp(-d)``, kept in log space.

    ``fixed_depth`` scores the deepest level only; ``best_depth`` treats every
    level as a candidate frontier and keeps the best one.
    """
    mode = ScoreMode(mode)
    dists, idxs, scores = [], [], []
    for lvl in levels:
        d, i = nearest_triples(lvl.flatten(-2), kbm)
        dists.append(d)
        idxs.append(i)
        scores.append(-d.max(dim=-1).values)
    stacked = torch.stack(scores, dim=-1)
    if mode is ScoreMode.FIXED_DEPTH:
        log_alpha = stacked[..., -1]
        best = torch.full(log_alpha.shape, len(levels) - 1, dtype=torch.long)
    else:
        log_alpha, best = stacked.max(dim=-1)
    return BeliefTensors(log_alpha, best, dists, idxs)


def decode_vector(h: torch.Tensor, emb_cp: torch.Tensor, allowed: torch.Tensor | None = None) -> torch.Tensor:
    """Nearest KB token (squared Euclidean) for each vector in ``h``; ties go to the smaller id."""
    with torch.no_grad():
        d2 = ((h.unsqueeze(-2) - emb_cp) ** 2).sum(-1)
        if allowed is not None:
            d2 = d2.masked_fill(~allowed, float("inf"))
        return d2.argmin(-1)


def kind_mask(kb: KnowledgeBase, kind: TokenKind) -> torch.Tensor:
    return torch.tensor([kb.kind(i) is kind for i in range(kb.n)])


def kb_distribution(candidates: list[int], alphas: list[float], n: int) -> list[float]:
    """Per-KB-token weights: each candidate takes its belief, collisions keep the max."""
    if len(candidates) != len(alphas):
        raise ValueError(f"{len(candidates)} candidates but {len(alphas)} belief scores")
    out = [0.0] * n
    for tok, a in zip(candidates, alphas):
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"belief score {a} outside [0, 1]")
        out[tok] = max(out[tok], a)
    return out


def kb_log_distribution(candidates: torch.Tensor, log_alpha: torch.Tensor, n: int) -> torch.Tensor:
    """Tensor form of :func:`kb_distribution` in log space, ``-inf`` for absent tokens."""
    lead = candidates.shape[:-1]
    out = log_alpha.new_full((*lead, n), float("-inf"))
    return out.scatter_reduce(-1, candidates, log_alpha, reduce="amax", include_self=True)


# -- symbolic proof trees ----------------------------------------------------

@dataclass
class ProofNode:
    decoded: Triple
    depth: int
    vectors: torch.Tensor | None = None  # (3, E)
    children: list["ProofNode"] = field(default_factory=list)
    kb_match: Triple | None = None
    distance: float | None = None

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class ProofTree:
    root: ProofNode
    depth: int

    def level(self, depth: int) -> list[ProofNode]:
        nodes = [self.root]
        for _ in range(depth):
            nodes = [c for nd in nodes for c in nd.children]
        return nodes

    @property
    def leaves(self) -> list[ProofNode]:
        out: list[ProofNode] = []

        def walk(nd: ProofNode):
            if nd.is_leaf:
                out.append(nd)
            for c in nd.children:
                walk(c)

        walk(self.root)
        return out

    def nodes(self) -> list[ProofNode]:
        out: list[ProofNode] = []

        def walk(nd: ProofNode):
            out.append(nd)
            for c in nd.children:
                walk(c)

        walk(self.root)
        return out


@dataclass
class BeliefScore:
    alpha: float
    best_depth: int
    per_leaf_best: list[tuple[int, Triple, float]]


def tree_from_levels(
    levels: list[torch.Tensor],
    emb_cp: torch.Tensor,
    kb: KnowledgeBase,
    root_triple: Triple | None = None,
    level_dist: list[torch.Tensor] | None = None,
    level_idx: list[torch.Tensor] | None = None,
) -> ProofTree:
    """Decode one hypothesis' level tensors (``(2**l, 3, E)`` each) into a proof tree."""
    built: list[list[ProofNode]] = []
    for depth, lvl in enumerate(levels):
        toks = decode_vector(lvl, emb_cp).tolist()
        row = []
        for j, (h, r, t) in enumerate(toks):
            decoded = Triple(h, r, t)
            if depth == 0 and root_triple is not None:
                decoded = Triple(*root_triple)
            node = ProofNode(decoded=decoded, depth=depth, vectors=lvl[j].detach())
            if level_dist is not None:
                node.distance = float(level_dist[depth][j])
                node.kb_match = kb.triples[int(level_idx[depth][j])]
            row.append(node)
        if built:
            for j, parent in enumerate(built[-1]):
                parent.children = [row[2 * j], row[2 * j + 1]]
        built.append(row)
    return ProofTree(root=built[0][0], depth=len(levels) - 1)


def build_proof_tree(
    engine: ReasoningEngine,
    hyp_vectors: torch.Tensor,
    cfg: ReasonerConfig,
    emb_cp: torch.Tensor,
    kb: KnowledgeBase,
    root_triple: Triple | None = None,
) -> ProofTree:
    """Expand one embedded hypothesis ``(3, E)`` to depth ``cfg.depth`` and decode every node."""
    with torch.no_grad():
        levels = [lvl for lvl in engine.build_levels(hyp_vectors, cfg.depth)]
        triples = torch.tensor([list(t) for t in kb.triples], dtype=torch.long)
        kbm = kb_matrix(emb_cp, triples) if len(kb) else None
        dists = idxs = None
        if kbm is not None:
            bt = belief(levels, kbm, cfg.mode)
            dists, idxs = bt.level_dist, bt.level_idx
    return tree_from_levels(levels, emb_cp, kb, root_triple, dists, idxs)


def belief_score(tree: ProofTree, kb: KnowledgeBase, emb_cp: torch.Tensor, cfg: ReasonerConfig) -> BeliefScore:
    """Belief of a decoded tree whose nodes carry their embedding vectors."""
    if len(kb) == 0:
        raise ValueError("belief score needs a nonempty KB")
    triples = torch.tensor([list(t) for t in kb.triples], dtype=torch.long)
    kbm = kb_matrix(emb_cp, triples)
    levels = [torch.stack([nd.vectors for nd in tree.level(d)]) for d in range(tree.depth + 1)]
    with torch.no_grad():
        bt = belief(levels, kbm, cfg.mode)
    best = int(bt.best_depth)
    d = bt.level_dist[best].tolist()
    ix = bt.level_idx[best].tolist()
    per_leaf = [(j, kb.triples[ix[j]], d[j]) for j in range(len(d))]
    return BeliefScore(alpha=math.exp(float(bt.log_alpha)), best_depth=best, per_leaf_best=per_leaf)
