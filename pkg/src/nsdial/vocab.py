"""Word vocabularies and the joint output space (vocabulary words + KB tokens)."""

from __future__ import annotations

from typing import Iterable

from .kb import KnowledgeBase, TokenKind

PAD, UNK, SOS, EOS, CLS = "<pad>", "<unk>", "<sos>", "<eos>", "[cls]"
SPECIALS = (PAD, UNK, SOS, EOS, CLS)
PAD_ID, UNK_ID, SOS_ID, EOS_ID, CLS_ID = range(5)


def tokenize(text: str) -> list[str]:
    return text.lower().split()


class Vocab:
    def __init__(self, words: Iterable[str] = ()):
        self.itos: list[str] = list(SPECIALS)
        self.stoi: dict[str, int] = {w: i for i, w in enumerate(self.itos)}
        for w in words:
            self.add(w)

    def add(self, word: str) -> int:
        idx = self.stoi.get(word)
        if idx is None:
            idx = len(self.itos)
            self.stoi[word] = idx
            self.itos.append(word)
        return idx

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, word: str) -> bool:
        return word in self.stoi

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]


class OutputSpace:
    """Indices ``[0, |V|)`` are vocabulary words, ``|V| + i`` is KB token ``i``.

    A KB token whose surface form is also a vocabulary word is routed to the
    vocabulary index, so both channels add their mass on one output.
    """

    def __init__(self, vocab: Vocab, kb: KnowledgeBase):
        self.vocab = vocab
        self.kb = kb
        v = len(vocab)
        self.kb_to_out = [vocab.stoi.get(tok, v + i) for i, tok in enumerate(kb.tokens)]
        self.size = v + kb.n
        self._out_to_kb = {o: i for i, o in enumerate(self.kb_to_out)}

    @property
    def v(self) -> int:
        return len(self.vocab)

    def word(self, out_id: int) -> str:
        if out_id < self.v:
            return self.vocab.itos[out_id]
        return self.kb.name(out_id - self.v)

    def kb_token(self, out_id: int) -> int | None:
        """KB token id routed to ``out_id`` (``None`` for plain vocabulary words)."""
        return self._out_to_kb.get(out_id)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        out = []
        for t in tokens:
            if t in self.kb:
                out.append(self.kb_to_out[self.kb.id(t)])
            else:
                out.append(self.vocab.stoi.get(t, UNK_ID))
        return out

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.word(i) for i in ids]


def build_vocabs(texts_in: Iterable[list[str]], texts_out: Iterable[list[str]], kb: KnowledgeBase):
    """Encoder vocabulary (history words plus every KB token) and output space.

    Output vocabulary words exclude KB entities: entities reach the response
    only through the KB channel. Relation names used as plain words stay in
    the vocabulary.
    """
    enc = Vocab()
    for tok in kb.tokens:
        enc.add(tok)
    for toks in texts_in:
        for t in toks:
            enc.add(t)
    out = Vocab()
    for toks in texts_out:
        for t in toks:
            if t in kb and kb.kind(kb.id(t)) is TokenKind.ENTITY:
                continue
            out.add(t)
    return enc, OutputSpace(out, kb)
