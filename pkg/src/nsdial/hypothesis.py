"""Hypothesis generator: structure, query-state and candidate prediction."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .kb import KBError, Triple
from .numeric import gumbel_softmax, leaky_relu, sigmoid


class StructureType(enum.IntEnum):
    H = 0  # [?, R, T]
    T = 1  # [H, R, ?]
    R = 2  # [H, ?, T]

    @property
    def label(self) -> str:
        return f"{self.name}-Hypothesis"


# slot (0=head, 1=relation, 2=tail) taken by the candidate; states fill the rest in order
CANDIDATE_SLOT = {StructureType.H: 0, StructureType.T: 2, StructureType.R: 1}


def state_slots(structure: StructureType) -> tuple[int, int]:
    """Triple slots filled by the query states k=0 and k=1."""
    free = [s for s in range(3) if s != CANDIDATE_SLOT[structure]]
    return free[0], free[1]


@dataclass(frozen=True)
class Hypothesis:
    structure: StructureType
    triple: Triple
    candidate: int
    cp_prob: float

    def template(self) -> tuple[int | None, int | None, int | None]:
        slots: list[int | None] = list(self.triple)
        slots[CANDIDATE_SLOT[self.structure]] = None
        return tuple(slots)


def synthesize(structure: StructureType, states: tuple[int, int], candidates: list[tuple[int, float]]) -> list[Hypothesis]:
    """Fill the unknown slot of the structure's template with each candidate."""
    structure = StructureType(structure)
    k0, k1 = state_slots(structure)
    out = []
    for tok, prob in candidates:
        slots = [0, 0, 0]
        slots[k0], slots[k1] = states
        slots[CANDIDATE_SLOT[structure]] = tok
        out.append(Hypothesis(structure, Triple(*slots), tok, float(prob)))
    return out


def _mlp(d_in: int, d_hidden: int, d_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d_in, d_hidden), nn.LeakyReLU(0.01), nn.Linear(d_hidden, d_out))


@dataclass
class GeneratorOutput:
    h_share: torch.Tensor  # (N, E)
    sp_logits: torch.Tensor  # (N, 3)
    sp_soft: torch.Tensor  # (N, 3)
    structure: torch.Tensor  # (N,) long
    qsp_logits: tuple[torch.Tensor, torch.Tensor]  # (N, n) each
    qsp_soft: tuple[torch.Tensor, torch.Tensor]
    states: torch.Tensor  # (N, 2) long
    cp_logits: torch.Tensor  # (N, n), sigmoid gives the candidate scores
    candidates: torch.Tensor  # (N, K) long, ordered by (-score, id)
    cand_probs: torch.Tensor  # (N, K)
    root: torch.Tensor  # (N, K, 3, E) embedded root hypotheses
    root_tokens: torch.Tensor  # (N, K, 3) long, symbolic root triples


class HypothesisGenerator(nn.Module):
    """Shared-private heads over the decoder context vector.

    ``emb_cp`` (the candidate embedding table) is owned by the caller because
    the reasoning engine embeds triples with the same table.
    """

    def __init__(self, ctx_dim: int, hidden: int, emb_dim: int, n_tokens: int, straight_through: bool = False):
        super().__init__()
        self.straight_through = straight_through
        self.W1 = nn.Linear(ctx_dim, hidden)
        self.W2 = nn.Linear(hidden, emb_dim)
        self.sp = _mlp(emb_dim, hidden, 3)
        self.qsp = nn.ModuleList([_mlp(emb_dim, hidden, n_tokens), _mlp(emb_dim, hidden, n_tokens)])
        self.n_tokens = n_tokens

    def shared_features(self, context: torch.Tensor) -> torch.Tensor:
        return self.W2(leaky_relu(self.W1(context)))

    def predict_structure(self, h_share, tau, generator=None, noise=None, sample=True):
        logits = self.sp(h_share)
        return (logits, *_select(logits, tau, generator, noise, sample, self.straight_through))

    def predict_query_states(self, h_share, tau, generator=None, noises=(None, None), sample=True, mask=None):
        outs = []
        for k in range(2):
            logits = self.qsp[k](h_share)
            if mask is not None:
                logits = logits.masked_fill(~mask[k], -1e9)
            outs.append((logits, *_select(logits, tau, generator, noises[k], sample, self.straight_through)))
        return outs

    def candidate_logits(self, h_share: torch.Tensor, emb_cp: torch.Tensor) -> torch.Tensor:
        return h_share @ emb_cp.T

    def forward(
        self,
        context: torch.Tensor,
        emb_cp: torch.Tensor,
        K: int,
        tau: float,
        generator: torch.Generator | None = None,
        sample: bool = True,
        noise: dict | None = None,
        relation_mask: torch.Tensor | None = None,
    ) -> GeneratorOutput:
        n = emb_cp.shape[0]
        if not 1 <= K <= n:
            raise KBError(f"need 1 <= K <= n, got K={K}, n={n}")
        noise = noise or {}
        h_share = self.shared_features(context)
        sp_logits, sp_soft, structure = self.predict_structure(h_share, tau, generator, noise.get("sp"), sample)
        qmask = None
        if relation_mask is not None:
            qmask = _qsp_masks(structure, relation_mask)
        (l0, s0, t0), (l1, s1, t1) = [
            o for o in self.predict_query_states(h_share, tau, generator, (noise.get("qsp0"), noise.get("qsp1")), sample, qmask)
        ]
        cp_logits = self.candidate_logits(h_share, emb_cp)
        probs = sigmoid(cp_logits)
        order = torch.sort(-probs.detach(), dim=-1, stable=True).indices[..., :K]
        cand_probs = probs.gather(-1, order)

        e0, e1 = s0 @ emb_cp, s1 @ emb_cp
        ec = emb_cp[order]  # (N, K, E)
        E0 = e0.unsqueeze(1).expand_as(ec)
        E1 = e1.unsqueeze(1).expand_as(ec)
        templates = torch.stack(
            [
                torch.stack([ec, E0, E1], dim=2),  # H: [c, k0, k1]
                torch.stack([E0, E1, ec], dim=2),  # T: [k0, k1, c]
                torch.stack([E0, ec, E1], dim=2),  # R: [k0, c, k1]
            ],
            dim=1,
        )  # (N, 3, K, 3, E)
        root = torch.einsum("ns,nskje->nkje", sp_soft, templates)

        tk0 = t0.unsqueeze(1).expand_as(order)
        tk1 = t1.unsqueeze(1).expand_as(order)
        tok_templates = torch.stack(
            [
                torch.stack([order, tk0, tk1], dim=-1),
                torch.stack([tk0, tk1, order], dim=-1),
                torch.stack([tk0, order, tk1], dim=-1),
            ],
            dim=1,
        )  # (N, 3, K, 3)
        idx = structure.view(-1, 1, 1, 1).expand(-1, 1, *tok_templates.shape[2:])
        root_tokens = tok_templates.gather(1, idx).squeeze(1)
        return GeneratorOutput(
            h_share=h_share,
            sp_logits=sp_logits,
            sp_soft=sp_soft,
            structure=structure,
            qsp_logits=(l0, l1),
            qsp_soft=(s0, s1),
            states=torch.stack([t0, t1], dim=-1),
            cp_logits=cp_logits,
            candidates=order,
            cand_probs=cand_probs,
            root=root,
            root_tokens=root_tokens,
        )


def _select(logits, tau, generator, noise, sample, straight_through=False):
    """Soft selection vector plus the hard index it stands for."""
    if sample:
        soft = gumbel_softmax(logits, tau, generator, noise=noise, straight_through=straight_through)
    else:
        soft = F.one_hot(logits.argmax(-1), logits.shape[-1]).to(logits.dtype)
    return soft, soft.detach().argmax(-1)


def _qsp_masks(structure: torch.Tensor, relation_mask: torch.Tensor):
    """Allowed tokens per state head: relation slots take relations, others entities."""
    rel, ent = relation_mask, ~relation_mask
    # k0 is the relation for H; k1 is the relation for T; R has entity states only
    m0 = torch.where((structure == StructureType.H).unsqueeze(-1), rel, ent)
    m1 = torch.where((structure == StructureType.T).unsqueeze(-1), rel, ent)
    return m0, m1
