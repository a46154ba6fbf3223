"""Knowledge-base token table, triple store and graph queries."""

from __future__ import annotations

import enum
import json
from collections import deque
from pathlib import Path
from typing import Iterable, NamedTuple


class KBError(ValueError):
    """Raised for malformed KB files or invalid KB queries."""


class TokenKind(enum.Enum):
    ENTITY = "entity"
    RELATION = "relation"


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class KnowledgeBase:
    """A frozen KB: interned tokens plus a deduplicated set of directed triples.

    Token ids are dense and assigned in first-appearance order. Instances are
    immutable after construction; build them with :class:`KBBuilder` or
    :func:`load_kb`.
    """

    def __init__(self, tokens: list[str], kinds: list[TokenKind], triples: list[Triple]):
        self._tokens = tuple(tokens)
        self._kinds = tuple(kinds)
        self._index = {tok: i for i, tok in enumerate(tokens)}
        self._triples = tuple(triples)
        self._triple_set = frozenset(triples)
        adj: dict[int, list[tuple[int, int]]] = {}
        for h, r, t in triples:
            adj.setdefault(h, []).append((t, r))
        self._adjacency = {h: tuple(sorted(v)) for h, v in adj.items()}

    # -- token table -------------------------------------------------------
    @property
    def n(self) -> int:
        return len(self._tokens)

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    @property
    def triples(self) -> tuple[Triple, ...]:
        return self._triples

    def __len__(self) -> int:
        return len(self._triples)

    def __contains__(self, item) -> bool:
        if isinstance(item, str):
            return item in self._index
        return tuple(item) in self._triple_set

    def id(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise KBError(f"unknown KB token {token!r}") from None

    def name(self, token_id: int) -> str:
        self._check(token_id)
        return self._tokens[token_id]

    def kind(self, token_id: int) -> TokenKind:
        self._check(token_id)
        return self._kinds[token_id]

    def ids_of_kind(self, kind: TokenKind) -> list[int]:
        return [i for i, k in enumerate(self._kinds) if k is kind]

    def entities(self) -> list[int]:
        return self.ids_of_kind(TokenKind.ENTITY)

    def relations(self) -> list[int]:
        return self.ids_of_kind(TokenKind.RELATION)

    def format_triple(self, triple: Iterable[int]) -> str:
        h, r, t = triple
        return f"[{self.name(h)}, {self.name(r)}, {self.name(t)}]"

    def _check(self, token_id: int) -> None:
        if not 0 <= token_id < len(self._tokens):
            raise KBError(f"unknown token id {token_id}")

    # -- graph queries -----------------------------------------------------
    def neighbors(self, entity: int, relation: int | None = None) -> list[Triple]:
        """Outgoing triples of ``entity``, ordered by tail id then relation id."""
        self._check(entity)
        if relation is not None:
            self._check(relation)
        out = []
        for t, r in self._adjacency.get(entity, ()):
            if relation is None or r == relation:
                out.append(Triple(entity, r, t))
        return out

    def hop_distance(self, head: int, tail: int, max_hops: int = 5) -> tuple[int, list[Triple]] | None:
        """Shortest directed path from ``head`` to ``tail`` with at most ``max_hops`` edges.

        Returns ``(k, path)`` or ``None``. Among shortest paths the one with the
        lexicographically smallest sequence of token ids wins.
        """
        for tok in (head, tail):
            if self.kind(tok) is not TokenKind.ENTITY:
                raise KBError(f"hop_distance endpoint {self.name(tok)!r} is a relation")
        if max_hops < 1:
            raise KBError("max_hops must be >= 1")
        if head == tail:
            return 0, []
        parent: dict[int, Triple] = {}
        frontier = deque([(head, 0)])
        seen = {head}
        while frontier:
            node, depth = frontier.popleft()
            if depth == max_hops:
                continue
            for t, r in self._adjacency.get(node, ()):
                if t in seen:
                    continue
                seen.add(t)
                parent[t] = Triple(node, r, t)
                if t == tail:
                    path = []
                    cur = tail
                    while cur != head:
                        edge = parent[cur]
                        path.append(edge)
                        cur = edge.head
                    path.reverse()
                    return len(path), path
                frontier.append((t, depth + 1))
        return None

    def to_json(self) -> list[dict[str, str]]:
        return [{"head": self.name(h), "relation": self.name(r), "tail": self.name(t)} for h, r, t in self._triples]


class KBBuilder:
    """Mutable accumulator that interns tokens in first-appearance order."""

    def __init__(self, base: KnowledgeBase | None = None):
        self._tokens: list[str] = []
        self._kinds: list[TokenKind] = []
        self._index: dict[str, int] = {}
        self._triples: list[Triple] = []
        self._seen: set[Triple] = set()
        if base is not None:
            for i, tok in enumerate(base.tokens):
                self._intern(tok, base.kind(i))
            for tr in base.triples:
                self._append(tr)

    def _intern(self, token: str, kind: TokenKind, where: str = "") -> int:
        idx = self._index.get(token)
        if idx is None:
            idx = len(self._tokens)
            self._index[token] = idx
            self._tokens.append(token)
            self._kinds.append(kind)
        elif self._kinds[idx] is not kind:
            raise KBError(
                f"{where}token {token!r} used as {kind.value} but already interned as {self._kinds[idx].value}"
            )
        return idx

    def _append(self, triple: Triple) -> None:
        if triple not in self._seen:
            self._seen.add(triple)
            self._triples.append(triple)

    def add(self, head: str, relation: str, tail: str, where: str = "") -> Triple:
        for tok in (head, relation, tail):
            if not tok:
                raise KBError(f"{where}empty token")
        tr = Triple(
            self._intern(head, TokenKind.ENTITY, where),
            self._intern(relation, TokenKind.RELATION, where),
            self._intern(tail, TokenKind.ENTITY, where),
        )
        self._append(tr)
        return tr

    def freeze(self) -> KnowledgeBase:
        return KnowledgeBase(list(self._tokens), list(self._kinds), list(self._triples))


def parse_kb(text: str) -> KnowledgeBase:
    """Parse pipe-delimited triples (``#`` comments allowed) or a JSON record array."""
    builder = KBBuilder()
    stripped = text.lstrip()
    if stripped.startswith("["):
        try:
            records = json.loads(text)
        except json.JSONDecodeError as exc:
            raise KBError(f"invalid JSON KB: {exc}") from exc
        for i, rec in enumerate(records):
            try:
                builder.add(str(rec["head"]), str(rec["relation"]), str(rec["tail"]), where=f"record {i}: ")
            except (KeyError, TypeError):
                raise KBError(f"record {i}: expected object with head, relation, tail") from None
        return builder.freeze()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split("|")]
        if len(fields) != 3:
            raise KBError(f"line {lineno}: expected 3 '|'-separated fields, got {len(fields)}")
        builder.add(*fields, where=f"line {lineno}: ")
    return builder.freeze()


def load_kb(path: str | Path) -> KnowledgeBase:
    return parse_kb(Path(path).read_text(encoding="utf-8"))


def dump_kb(kb: KnowledgeBase) -> str:
    return "".join(f"{kb.name(h)}|{kb.name(r)}|{kb.name(t)}\n" for h, r, t in kb.triples)


def save_kb(kb: KnowledgeBase, path: str | Path) -> None:
    Path(path).write_text(dump_kb(kb), encoding="utf-8")
