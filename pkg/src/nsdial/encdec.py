"""Dialogue encoder, attention, vocabulary head and the soft-switch fusion."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .numeric import ShapeError, linear, sigmoid, softmax
from .vocab import CLS_ID, PAD_ID


@dataclass
class EncoderOutput:
    h_cls_proj: torch.Tensor  # (B, H)
    states_proj: torch.Tensor  # (B, L, H), L = M + 1 including the sentinel
    mask: torch.Tensor  # (B, L) bool, True on real positions


@dataclass
class DecoderStep:
    h_dec: torch.Tensor
    h_dec_attn: torch.Tensor
    context: torch.Tensor  # [h_dec, h_dec_attn]
    attn: torch.Tensor


@dataclass
class StepDistributions:
    p_vocab: torch.Tensor
    p_kb: torch.Tensor  # normalised KB channel over KB tokens
    p_gen: torch.Tensor  # (..., 1)
    p_final: torch.Tensor  # over the joint output space


class Encoder(nn.Module):
    """Bidirectional GRU over ``[CLS] + history`` projected into decoder space."""

    def __init__(self, vocab_size: int, emb_dim: int, hidden: int, dec_hidden: int, dropout: float = 0.0):
        super().__init__()
        self.embed = nn.Embedding(vocab_size, emb_dim, padding_idx=PAD_ID)
        self.rnn = nn.GRU(emb_dim, hidden, batch_first=True, bidirectional=True)
        self.proj = nn.Linear(2 * hidden, dec_hidden)
        self.drop = nn.Dropout(dropout)

    def forward(self, histories: list[list[int]]) -> EncoderOutput:
        if any(len(h) == 0 for h in histories):
            raise ValueError("encode: empty dialogue history")
        seqs = [[CLS_ID] + list(h) for h in histories]
        lengths = torch.tensor([len(s) for s in seqs])
        L = int(lengths.max())
        ids = torch.full((len(seqs), L), PAD_ID, dtype=torch.long)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = torch.tensor(s)
        mask = ids != PAD_ID
        mask[:, 0] = True
        x = self.drop(self.embed(ids))
        packed = nn.utils.rnn.pack_padded_sequence(x, lengths, batch_first=True, enforce_sorted=False)
        out, _ = self.rnn(packed)
        out, _ = nn.utils.rnn.pad_packed_sequence(out, batch_first=True, total_length=L)
        states = self.proj(out)
        return EncoderOutput(h_cls_proj=states[:, 0], states_proj=states, mask=mask)


def attend(h_dec: torch.Tensor, enc: EncoderOutput) -> DecoderStep:
    """Dot-product attention of decoder states over the projected encoder states.

    ``h_dec`` is ``(B, H)`` for one step or ``(B, T, H)`` for a teacher-forced
    sequence.
    """
    states, mask = enc.states_proj, enc.mask
    if h_dec.shape[-1] != states.shape[-1]:
        raise ShapeError(f"attend: decoder dim {h_dec.shape[-1]} != encoder dim {states.shape[-1]}")
    single = h_dec.dim() == 2
    q = h_dec.unsqueeze(1) if single else h_dec
    scores = torch.einsum("bth,blh->btl", q, states)
    scores = scores.masked_fill(~mask.unsqueeze(1), float("-inf"))
    attn = softmax(scores)
    h_attn = torch.einsum("btl,blh->bth", attn, states)
    if single:
        q, h_attn, attn = q.squeeze(1), h_attn.squeeze(1), attn.squeeze(1)
    return DecoderStep(h_dec=q, h_dec_attn=h_attn, context=torch.cat([q, h_attn], dim=-1), attn=attn)


def vocab_distribution(step: DecoderStep, U1: nn.Linear) -> torch.Tensor:
    return softmax(linear(U1.weight, U1.bias, step.context))


def gate(step: DecoderStep, U2: nn.Linear) -> torch.Tensor:
    # note the [h_attn, h_dec] order here versus [h_dec, h_attn] for the context
    return sigmoid(linear(U2.weight, U2.bias, torch.cat([step.h_dec_attn, step.h_dec], dim=-1)))


def fuse(
    p_vocab: torch.Tensor,
    p_kb: torch.Tensor,
    p_gen: torch.Tensor,
    kb_to_out: torch.Tensor,
    out_size: int,
    soft_switch: bool = True,
) -> torch.Tensor:
    """Mix vocabulary and KB channels into one distribution over the output space.

    ``p_kb`` must already be normalised over KB tokens (rows that carry no KB
    mass may be all zero; their gate is forced to the vocabulary). Without the
    soft switch the two channels are summed and renormalised.
    """
    if (p_kb < 0).any() or (p_kb > 1 + 1e-6).any():
        raise ValueError("fuse: p_kb entries must lie in [0, 1]")
    lead = p_vocab.shape[:-1]
    v = p_vocab.shape[-1]
    has_kb = p_kb.sum(-1, keepdim=True) > 0
    p_kb_out = p_vocab.new_zeros(*lead, out_size).index_add(-1, kb_to_out, p_kb)
    p_vocab_out = torch.cat([p_vocab, p_vocab.new_zeros(*lead, out_size - v)], dim=-1)
    if not soft_switch:
        total = p_vocab_out + p_kb_out
        return total / total.sum(-1, keepdim=True)
    g = torch.where(has_kb, p_gen, torch.ones_like(p_gen))
    return g * p_vocab_out + (1 - g) * p_kb_out
