"""The full dialogue model: encoder, decoder, hypothesis generator and reasoner."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .encdec import EncoderOutput, attend, fuse, gate, vocab_distribution, DecoderStep, Encoder
from .hypothesis import GeneratorOutput, HypothesisGenerator, StructureType
from .kb import KnowledgeBase, TokenKind
from .reasoning import (
    BeliefTensors,
    ReasonerConfig,
    ReasoningEngine,
    ScoreMode,
    belief,
    kb_log_distribution,
    kb_matrix,
    kind_mask,
    tree_from_levels,
)
from .vocab import EOS_ID, PAD_ID, SOS_ID, OutputSpace, Vocab

PROB_FLOOR = 1e-12


class Ablation(str, enum.Enum):
    FULL = "full"
    NO_HRE = "no_hre"
    NO_SOFT_SWITCH = "no_softswitch"


@dataclass
class ModelConfig:
    emb_dim: int = 128
    hidden: int = 128
    dropout: float = 0.1
    candidates: int = 5
    depth: int = 3
    mode: str = ScoreMode.BEST_DEPTH.value
    tau: float = 0.1
    ablation: str = Ablation.FULL.value
    relation_mask: bool = False
    straight_through: bool = False
    eval_noise: bool = False
    emb_init_std: float = 0.1


@dataclass
class ChannelOutput:
    gen: GeneratorOutput
    belief: BeliefTensors | None
    levels: list[torch.Tensor] | None
    p_vocab: torch.Tensor
    p_kb: torch.Tensor
    p_gen: torch.Tensor
    p_final: torch.Tensor


@dataclass
class DecodeResult:
    tokens: list[str]
    out_ids: list[int]
    trace: list[dict] = field(default_factory=list)


class NSDialModel(nn.Module):
    def __init__(self, cfg: ModelConfig, enc_vocab: Vocab, out_space: OutputSpace, kb: KnowledgeBase):
        super().__init__()
        self.cfg = cfg
        self.enc_vocab = enc_vocab
        self.out_space = out_space
        self.kb = kb
        self.reasoner_cfg = ReasonerConfig(cfg.depth, cfg.mode)
        E, H = cfg.emb_dim, cfg.hidden
        self.encoder = Encoder(len(enc_vocab), E, H, H, cfg.dropout)
        self.dec_embed = nn.Embedding(out_space.size, E, padding_idx=PAD_ID)
        self.decoder = nn.GRU(E, H, batch_first=True)
        self.drop = nn.Dropout(cfg.dropout)
        self.U1 = nn.Linear(2 * H, out_space.v)
        self.U2 = nn.Linear(2 * H, 1)
        self.emb_cp = nn.Parameter(torch.randn(kb.n, E) * cfg.emb_init_std)
        self.generator = HypothesisGenerator(2 * H, H, E, kb.n, cfg.straight_through)
        self.reasoner = ReasoningEngine(E, H)

        self.register_buffer("kb_triples", torch.tensor([list(t) for t in kb.triples], dtype=torch.long).reshape(-1, 3), persistent=False)
        self.register_buffer("kb_to_out", torch.tensor(out_space.kb_to_out, dtype=torch.long), persistent=False)
        out_to_kb = torch.full((out_space.size,), -1, dtype=torch.long)
        for i, o in enumerate(out_space.kb_to_out):
            out_to_kb[o] = i
        self.register_buffer("out_to_kb", out_to_kb, persistent=False)
        self.register_buffer("relation_tokens", kind_mask(kb, TokenKind.RELATION), persistent=False)

    @property
    def ablation(self) -> Ablation:
        return Ablation(self.cfg.ablation)

    def encode(self, histories: list[list[int]]) -> EncoderOutput:
        return self.encoder(histories)

    # -- the KB channel ----------------------------------------------------
    def channel(self, step: DecoderStep, generator: torch.Generator | None = None, sample: bool | None = None, noise=None) -> ChannelOutput:
        """Step distributions for a flat batch of decoder positions."""
        cfg = self.cfg
        if sample is None:
            sample = self.training or cfg.eval_noise
        gen = self.generator(
            step.context,
            self.emb_cp,
            cfg.candidates,
            cfg.tau,
            generator=generator,
            sample=sample,
            noise=noise,
            relation_mask=self.relation_tokens if cfg.relation_mask else None,
        )
        n = self.kb.n
        bel = levels = None
        if self.ablation is Ablation.NO_HRE:
            scores = torch.sigmoid(gen.cp_logits)
            p_kb = scores / scores.sum(-1, keepdim=True)
        else:
            levels = self.reasoner.build_levels(gen.root, cfg.depth)
            bel = belief(levels, kb_matrix(self.emb_cp, self.kb_triples), cfg.mode)
            # normalising beliefs in log space avoids underflow of exp(-d)
            p_kb = torch.softmax(kb_log_distribution(gen.candidates, bel.log_alpha, n), dim=-1)
        p_vocab = vocab_distribution(step, self.U1)
        p_gen = gate(step, self.U2)
        p_final = fuse(
            p_vocab, p_kb, p_gen, self.kb_to_out, self.out_space.size, soft_switch=self.ablation is not Ablation.NO_SOFT_SWITCH
        )
        return ChannelOutput(gen, bel, levels, p_vocab, p_kb, p_gen, p_final)

    # -- training ----------------------------------------------------------
    def teacher_forced(self, histories: list[list[int]], targets: list[list[int]], generator=None, noise=None):
        """Per-position losses under teacher forcing.

        Returns ``(gen_loss, cp_loss, batch_index)`` over the flattened valid
        positions; ``targets`` include the end token.
        """
        B = len(histories)
        enc = self.encode(histories)
        T = max(len(t) for t in targets)
        gold = torch.full((B, T), PAD_ID, dtype=torch.long)
        dec_in = torch.full((B, T), PAD_ID, dtype=torch.long)
        for i, tgt in enumerate(targets):
            gold[i, : len(tgt)] = torch.tensor(tgt)
            dec_in[i, 0] = SOS_ID
            dec_in[i, 1 : len(tgt)] = torch.tensor(tgt[:-1])
        x = self.drop(self.dec_embed(dec_in))
        h, _ = self.decoder(x, enc.h_cls_proj.unsqueeze(0).contiguous())
        step = attend(h, enc)
        valid = gold != PAD_ID
        flat = DecoderStep(step.h_dec[valid], step.h_dec_attn[valid], step.context[valid], step.attn[valid])
        ch = self.channel(flat, generator=generator, noise=noise)
        g = gold[valid]
        l_gen = gen_loss(ch.p_final, g)
        l_cp = cp_loss(ch.gen.cp_logits, self.out_to_kb[g])
        batch_index = torch.arange(B).unsqueeze(1).expand(B, T)[valid]
        return l_gen, l_cp, batch_index

    # -- inference ---------------------------------------------------------
    @torch.no_grad()
    def greedy_decode(self, histories: list[list[int]], max_len: int = 20, trace: bool = False, generator=None) -> list[DecodeResult]:
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        self.eval()
        B = len(histories)
        enc = self.encode(histories)
        h = enc.h_cls_proj.unsqueeze(0).contiguous()
        prev = torch.full((B,), SOS_ID, dtype=torch.long)
        results = [DecodeResult([], []) for _ in range(B)]
        alive = torch.ones(B, dtype=torch.bool)
        for t in range(max_len):
            out, h = self.decoder(self.dec_embed(prev).unsqueeze(1), h)
            step = attend(out.squeeze(1), enc)
            ch = self.channel(step, generator=generator)
            choice = ch.p_final.argmax(-1)
            for b in range(B):
                if not alive[b]:
                    continue
                o = int(choice[b])
                if o == EOS_ID:
                    alive[b] = False
                    continue
                results[b].out_ids.append(o)
                results[b].tokens.append(self.out_space.word(o))
                if trace:
                    results[b].trace.append(self._trace_step(ch, b, t, o))
            prev = choice
            if not alive.any():
                break
        return results

    def _trace_step(self, ch: ChannelOutput, b: int, t: int, out_id: int) -> dict:
        kb, space, gen = self.kb, self.out_space, ch.gen
        kb_tok = space.kb_token(out_id)
        p_gen = float(ch.p_gen[b])
        from_kb = kb_tok is not None and (1 - p_gen) * float(ch.p_kb[b, kb_tok]) >= (
            p_gen * float(ch.p_vocab[b, out_id]) if out_id < space.v else 0.0
        )
        pv, iv = ch.p_vocab[b].topk(min(10, space.v))
        structure = StructureType(int(gen.structure[b]))
        states = gen.states[b].tolist()
        cands = gen.candidates[b].tolist()
        probs = gen.cand_probs[b].tolist()
        hyps, trees = [], {}
        for k, tok in enumerate(cands):
            triple = [int(x) for x in gen.root_tokens[b, k].tolist()]
            rec = {"triple": [kb.name(x) for x in triple], "candidate": kb.name(tok), "cp_prob": probs[k]}
            if ch.belief is not None:
                tree_id = f"{t}:{k}"
                rec["belief"] = math.exp(float(ch.belief.log_alpha[b, k]))
                rec["best_depth"] = int(ch.belief.best_depth[b, k])
                rec["proof_tree"] = tree_id
                tree = tree_from_levels(
                    [lvl[b, k] for lvl in ch.levels],
                    self.emb_cp.detach(),
                    kb,
                    root_triple=tuple(triple),
                    level_dist=[d[b, k] for d in ch.belief.level_dist],
                    level_idx=[i[b, k] for i in ch.belief.level_idx],
                )
                trees[tree_id] = tree_to_json(tree, kb)
            else:
                rec["belief"] = None
            hyps.append(rec)
        support = (ch.p_kb[b] > 0).nonzero().flatten().tolist()
        raw = {}
        if ch.belief is not None:
            for k, tok in enumerate(cands):
                raw[tok] = max(raw.get(tok, 0.0), math.exp(float(ch.belief.log_alpha[b, k])))
        else:
            sig = torch.sigmoid(gen.cp_logits[b])
            raw = {i: float(sig[i]) for i in support}
        p_kb = sorted(
            ({"token": kb.name(i), "weight": float(ch.p_kb[b, i]), "belief": raw.get(i, 0.0)} for i in support),
            key=lambda r: -r["weight"],
        )
        return {
            "step": t,
            "token": space.word(out_id),
            "kb_token": kb_tok is not None,
            "kb_channel": bool(from_kb),
            "p_gen": p_gen,
            "p_vocab_top10": [[space.vocab.itos[i], float(p)] for p, i in zip(pv.tolist(), iv.tolist())],
            "p_kb": p_kb,
            "structure": structure.label,
            "states": [{"k": 0, "token": kb.name(states[0])}, {"k": 1, "token": kb.name(states[1])}],
            "candidates": [{"token": kb.name(c), "prob": p} for c, p in zip(cands, probs)],
            "hypotheses": hyps,
            "proof_trees": trees,
        }


def gen_loss(p_final: torch.Tensor, gold: torch.Tensor) -> torch.Tensor:
    """Per-position ``-log p_final[gold]`` with a probability floor."""
    if (gold < 0).any() or (gold >= p_final.shape[-1]).any():
        raise ValueError("gold token outside the output space")
    p = p_final.gather(-1, gold.unsqueeze(-1)).squeeze(-1)
    return -torch.log(p.clamp_min(PROB_FLOOR))


def cp_loss(cp_logits: torch.Tensor, gold_kb: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy over KB tokens per position.

    ``gold_kb`` is the KB id of the gold token or ``-1`` when the gold token
    is not a KB token (all labels zero).
    """
    labels = torch.zeros_like(cp_logits)
    hit = gold_kb >= 0
    labels[hit, gold_kb[hit]] = 1.0
    return F.binary_cross_entropy_with_logits(cp_logits, labels, reduction="none").mean(-1)


def tree_to_json(tree, kb: KnowledgeBase) -> dict:
    def node(nd):
        rec = {"triple": [kb.name(x) for x in nd.decoded], "depth": nd.depth}
        if nd.kb_match is not None:
            rec["kb_match"] = [kb.name(x) for x in nd.kb_match]
            rec["distance"] = nd.distance
        if nd.children:
            rec["children"] = [node(c) for c in nd.children]
        return rec

    return node(tree.root)
