"""Synthetic multi-hop dialogue generation over a location-enriched KB."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from ..kb import KBBuilder, KnowledgeBase, TokenKind, load_kb, save_kb

DATA = resources.files("nsdial") / "data"
SPLITS = ("train", "dev", "test")
DEFAULT_SIZES = (300, 50, 50)
PEOPLE = {"director", "actor"}
TYPE_NOUNS = {
    "movie": ("movie", "film"),
    "theatre": ("theatre", "cinema"),
    "hotel": ("hotel",),
    "restaurant": ("restaurant",),
    "director": ("director",),
}


class ForgeError(ValueError):
    pass


class InfeasibleHopMix(ForgeError):
    pass


@dataclass(frozen=True)
class QATemplate:
    id: str
    domain: str
    given: str
    answer: str
    relation: str | None
    answer_is: str  # which slot of the reasoning path the answer occupies
    questions: tuple[str, ...]
    answers: tuple[str, ...]
    guided_next: tuple[str, ...]

    @property
    def is_location(self) -> bool:
        return self.relation is None


@dataclass(frozen=True)
class DomainSpec:
    name: str
    kb_file: str
    venue: str
    venue_relation: str
    schema: dict[str, tuple[str, str]]
    hop_mix: tuple[float, float, float]


@dataclass
class Turn:
    user: str
    system: str
    entities: list[str]
    hop: int
    template: str
    head: str
    tail: str
    given: str
    given_type: str
    pronoun: dict | None = None

    def to_json(self) -> dict:
        rec = {
            "user": self.user,
            "system": self.system,
            "entities": list(self.entities),
            "hop": self.hop,
            "template": self.template,
            "query": {"head": self.head, "tail": self.tail},
        }
        if self.pronoun is not None:
            rec["pronoun"] = dict(self.pronoun)
        return rec


@dataclass
class Dialogue:
    domain: str
    turns: list[Turn]
    kb_file: str

    def to_json(self) -> dict:
        return {"domain": self.domain, "turns": [t.to_json() for t in self.turns], "kb_file": self.kb_file}


# -- bundled data ------------------------------------------------------------

def load_templates(path: str | Path | None = None) -> dict[str, QATemplate]:
    raw = json.loads(Path(path).read_text() if path else (DATA / "templates.json").read_text())
    out = {}
    for rec in raw:
        t = QATemplate(
            id=rec["id"],
            domain=rec["domain"],
            given=rec["given"],
            answer=rec["answer"],
            relation=rec.get("relation"),
            answer_is=rec.get("answer_is", "tail"),
            questions=tuple(rec["questions"]),
            answers=tuple(rec["answers"]),
            guided_next=tuple(rec.get("guided_next", ())),
        )
        for q in t.questions:
            if f"@{t.given}" not in q.split():
                raise ForgeError(f"template {t.id}: question {q!r} lacks @{t.given}")
        for a in t.answers:
            if f"@{t.answer}" not in a.split():
                raise ForgeError(f"template {t.id}: answer {a!r} lacks @{t.answer}")
        out[t.id] = t
    for t in out.values():
        missing = [g for g in t.guided_next if g not in out]
        if missing:
            raise ForgeError(f"template {t.id}: unknown guided_next {missing}")
    return out


def load_domains() -> dict[str, DomainSpec]:
    raw = json.loads((DATA / "domains.json").read_text())
    return {
        name: DomainSpec(
            name=name,
            kb_file=d["kb_file"],
            venue=d["venue"],
            venue_relation=d["venue_relation"],
            schema={r: tuple(ht) for r, ht in d["schema"].items()},
            hop_mix=tuple(d["hop_mix"]),
        )
        for name, d in raw.items()
    }


def load_places(path: str | Path | None = None) -> list[dict]:
    raw = json.loads(Path(path).read_text() if path else (DATA / "places.json").read_text())
    return raw["levels"]


def base_kb(domain: str) -> KnowledgeBase:
    spec = load_domains()[domain]
    with resources.as_file(DATA / spec.kb_file) as p:
        return load_kb(p)


# -- KB extension ------------------------------------------------------------

def extend_kb_with_hierarchy(kb: KnowledgeBase, venues: list[str], levels: list[dict], rng: random.Random) -> KnowledgeBase:
    """Attach every venue to a leaf place and chain the place levels upwards.

    ``levels`` is ordered from the level adjacent to the venues outwards; each
    entry gives the place ``names`` and the ``relation`` linking the level
    below to it. Every place receives at least one child when there are
    enough children to go round.
    """
    if not venues:
        raise ForgeError("hierarchy needs at least one venue")
    for lvl in levels:
        if not lvl.get("names"):
            raise ForgeError(f"empty hierarchy level {lvl.get('type', '?')!r}")
    builder = KBBuilder(kb)
    children = list(venues)
    for lvl in levels:
        names = list(lvl["names"])
        order = list(children)
        rng.shuffle(order)
        used = set()
        for i, child in enumerate(order):
            parent = names[i] if i < len(names) else rng.choice(names)
            builder.add(child, lvl["relation"], parent)
            used.add(parent)
        # only places that received a child continue the chain
        children = [n for n in names if n in used]
    return builder.freeze()


def entity_types(kb: KnowledgeBase, spec: DomainSpec, levels: list[dict]) -> dict[int, str]:
    """Entity type per KB token from the domain schema and the place levels."""
    types: dict[int, str] = {}
    rel_types = dict(spec.schema)
    below = spec.venue
    for lvl in levels:
        rel_types[lvl["relation"]] = (below, lvl["type"])
        below = lvl["type"]
    for h, r, t in kb.triples:
        ht = rel_types.get(kb.name(r))
        if ht is None:
            continue
        types.setdefault(h, ht[0])
        types.setdefault(t, ht[1])
    return types


# -- dialogue construction ---------------------------------------------------

def sample_skeleton(n_rounds: int, templates: dict[str, QATemplate], rng: random.Random) -> list[QATemplate]:
    """First template uniformly at random, each next one from the guided-next list."""
    if n_rounds < 1:
        raise ForgeError("n_rounds must be >= 1")
    if not templates:
        raise ForgeError("no templates to sample from")
    ids = sorted(templates)
    seq = [templates[rng.choice(ids)]]
    while len(seq) < n_rounds:
        nxt = [g for g in seq[-1].guided_next if g in templates]
        if not nxt:
            raise ForgeError(f"template {seq[-1].id} has no guided next type before the final round")
        seq.append(templates[rng.choice(nxt)])
    return seq


@dataclass
class World:
    """A KB plus the typing information the templates need."""

    kb: KnowledgeBase
    spec: DomainSpec
    levels: list[dict]
    types: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.types:
            self.types = entity_types(self.kb, self.spec, self.levels)
        self.by_type: dict[str, list[int]] = {}
        for tok, ty in sorted(self.types.items()):
            self.by_type.setdefault(ty, []).append(tok)
        self.place_level = {lvl["type"]: i + 1 for i, lvl in enumerate(self.levels)}
        self.parent = {}
        level_rels = {lvl["relation"] for lvl in self.levels}
        for h, r, t in self.kb.triples:
            if self.kb.name(r) in level_rels:
                self.parent[h] = t

    def ancestor(self, venue: int, hops: int) -> int | None:
        cur = venue
        for _ in range(hops):
            cur = self.parent.get(cur)
            if cur is None:
                return None
        return cur


def _fill(text: str, placeholder: str, token: str) -> str:
    return " ".join(token if w == f"@{placeholder}" else w for w in text.split())


def instantiate_template(
    t: QATemplate,
    world: World,
    context: list[int],
    rng: random.Random,
    hop: int = 1,
) -> Turn:
    """Fill a template from the KB; ``context`` lists mentioned entities, oldest first.

    Relation templates prefer the most recently mentioned entity of the
    required type; location templates pick a venue and the enclosing place
    ``hop`` levels above it.
    """
    kb = world.kb
    if t.is_location:
        venues = [v for v in world.by_type.get(t.answer, []) if world.ancestor(v, hop) is not None]
        if not venues:
            raise ForgeError(f"template {t.id}: no {t.answer} with a place {hop} hop(s) above it")
        answer = rng.choice(venues)
        given = world.ancestor(answer, hop)
        head, tail = answer, given
    else:
        rel = kb.id(t.relation) if t.relation in kb else None
        if rel is None:
            raise ForgeError(f"template {t.id}: relation {t.relation!r} not in KB")
        pool = world.by_type.get(t.given, [])
        if t.answer_is == "tail":
            options = {g: [tr.tail for tr in kb.neighbors(g, rel) if world.types.get(tr.tail) == t.answer] for g in pool}
        else:
            options = {g: [] for g in pool}
            for h, r, tl in kb.triples:
                if r == rel and tl in options and world.types.get(h) == t.answer:
                    options[tl].append(h)
        options = {g: a for g, a in options.items() if a}
        if not options:
            raise ForgeError(f"template {t.id}: no {t.given} entity satisfies relation {t.relation!r}")
        recent = [e for e in reversed(context) if e in options]
        given = recent[0] if recent else rng.choice(sorted(options))
        answer = rng.choice(sorted(options[given]))
        head, tail = (given, answer) if t.answer_is == "tail" else (answer, given)
    found = kb.hop_distance(head, tail, max_hops=max(hop, 1) + 2)
    if found is None:
        raise ForgeError(f"template {t.id}: no path from {kb.name(head)} to {kb.name(tail)}")
    k = found[0]
    if t.is_location and k != hop:
        raise ForgeError(f"template {t.id}: designed {hop} hop(s) but the shortest path has {k}")
    question = _fill(rng.choice(t.questions), t.given, kb.name(given))
    answer_text = _fill(rng.choice(t.answers), t.answer, kb.name(answer))
    return Turn(
        user=question,
        system=answer_text,
        entities=[kb.name(answer)],
        hop=k,
        template=t.id,
        head=kb.name(head),
        tail=kb.name(tail),
        given=kb.name(given),
        given_type=t.given,
    )


def pronominalize(d: Dialogue, rng: random.Random, rate: float = 0.3) -> Dialogue:
    """Replace already-mentioned given entities in user turns with ``it``/``they``."""
    if not 0.0 <= rate <= 1.0:
        raise ForgeError("pronoun rate must be in [0, 1]")
    mentioned: set[str] = set()
    turns = []
    for turn in d.turns:
        new = turn
        words = turn.user.split()
        if turn.given in mentioned and turn.given in words:
            if rng.random() < rate:
                new = _replace_entity(turn, words, turn.given_type in PEOPLE)
        turns.append(new)
        mentioned.update(turn.user.split())
        mentioned.update(turn.system.split())
    return Dialogue(d.domain, turns, d.kb_file)


def _replace_entity(turn: Turn, words: list[str], person: bool) -> Turn:
    i = words.index(turn.given)
    start = i
    nouns = TYPE_NOUNS.get(turn.given_type, ())
    if i >= 2 and words[i - 2] == "the" and words[i - 1] in nouns:
        start = i - 2
    # people become "they" as subjects and "them" elsewhere
    subject = start == 0 or words[start - 1] in {"did", "does", "do"}
    pronoun = ("they" if subject else "them") if person else "it"
    out = words[:start] + [pronoun] + words[i + 1 :]
    return Turn(
        user=" ".join(out),
        system=turn.system,
        entities=list(turn.entities),
        hop=turn.hop,
        template=turn.template,
        head=turn.head,
        tail=turn.tail,
        given=turn.given,
        given_type=turn.given_type,
        pronoun={"entity": turn.given, "pronoun": pronoun},
    )


# -- whole datasets ----------------------------------------------------------

@dataclass
class Dataset:
    domain: str
    kb: KnowledgeBase
    kb_file: str
    splits: dict[str, list[Dialogue]]

    def jsonl(self, split: str) -> str:
        return "".join(json.dumps(d.to_json(), ensure_ascii=False) + "\n" for d in self.splits[split])

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_kb(self.kb, out_dir / self.kb_file)
        paths = {"kb": out_dir / self.kb_file}
        for split in self.splits:
            p = out_dir / f"{split}.jsonl"
            p.write_text(self.jsonl(split), encoding="utf-8")
            paths[split] = p
        return paths


def build_world(domain: str, seed: int = 0, kb: KnowledgeBase | None = None, places: list[dict] | None = None) -> World:
    domains = load_domains()
    if domain not in domains:
        raise ForgeError(f"unknown domain {domain!r}; choose from {sorted(domains)}")
    spec = domains[domain]
    levels = places if places is not None else load_places()
    kb = kb if kb is not None else base_kb(domain)
    rel = kb.id(spec.venue_relation)
    venues = sorted({tr.head for tr in kb.triples if tr.relation == rel})
    extended = extend_kb_with_hierarchy(kb, [kb.name(v) for v in venues], levels, random.Random(f"{seed}:kb"))
    return World(extended, spec, levels)


def generate_dataset(
    domain: str = "movie",
    sizes: tuple[int, int, int] = DEFAULT_SIZES,
    hop_mix: tuple[float, float, float] | None = None,
    seed: int = 0,
    pronoun_rate: float = 0.3,
    world: World | None = None,
) -> Dataset:
    """Generate train/dev/test dialogues whose turns follow the requested hop mix.

    Only location templates can need more than one hop, so the multi-hop
    quota is spread over the location turns of each split; if there are not
    enough of them the mix is infeasible.
    """
    world = world or build_world(domain, seed)
    templates = {k: t for k, t in load_templates().items() if t.domain == domain}
    mix = tuple(hop_mix) if hop_mix is not None else world.spec.hop_mix
    if len(mix) != 3 or abs(sum(mix) - 1.0) > 1e-6 or min(mix) < 0:
        raise ForgeError(f"hop mix must be three non-negative fractions summing to 1, got {mix}")
    kb_file = f"{domain}_kb.txt"
    splits: dict[str, list[Dialogue]] = {}
    for split, size in zip(SPLITS, sizes):
        skeletons = []
        for i in range(size):
            rng = random.Random(f"{seed}:{split}:{i}:skeleton")
            skeletons.append(sample_skeleton(rng.choice((3, 4)), templates, rng))
        plan = _hop_plan(skeletons, mix, random.Random(f"{seed}:{split}:hops"), split)
        dialogues = []
        for i, skel in enumerate(skeletons):
            rng = random.Random(f"{seed}:{split}:{i}")
            context: list[int] = []
            turns = []
            for j, t in enumerate(skel):
                turn = instantiate_template(t, world, context, rng, hop=plan.get((i, j), 1))
                context += [world.kb.id(turn.given), world.kb.id(turn.entities[0])]
                turns.append(turn)
            dialogues.append(pronominalize(Dialogue(domain, turns, kb_file), rng, pronoun_rate))
        splits[split] = dialogues
    return Dataset(domain, world.kb, kb_file, splits)


def _hop_plan(skeletons, mix, rng: random.Random, split: str) -> dict[tuple[int, int], int]:
    slots = [(i, j) for i, sk in enumerate(skeletons) for j, t in enumerate(sk) if t.is_location]
    total = sum(len(sk) for sk in skeletons)
    n2, n3 = round(total * mix[1]), round(total * mix[2])
    if n2 + n3 > len(slots):
        raise InfeasibleHopMix(
            f"{split}: mix {mix} needs {n2 + n3} multi-hop turns but only {len(slots)} of {total} turns are location turns"
        )
    rng.shuffle(slots)
    plan = {s: 2 for s in slots[:n2]}
    plan.update({s: 3 for s in slots[n2 : n2 + n3]})
    return plan


# -- audits ------------------------------------------------------------------

@dataclass
class Audit:
    turns: int = 0
    hop_mismatches: int = 0
    missing_entities: int = 0
    pronoun_violations: int = 0
    hop_counts: dict[int, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.turns > 0 and not (self.hop_mismatches or self.missing_entities or self.pronoun_violations)


def audit_dialogues(dialogues: list[dict], kb: KnowledgeBase, max_hops: int = 5) -> Audit:
    """Re-check hop labels with BFS, gold entities against the KB and the pronoun rule."""
    audit = Audit()
    for d in dialogues:
        seen: set[str] = set()
        for turn in d["turns"]:
            audit.turns += 1
            audit.hop_counts[turn["hop"]] = audit.hop_counts.get(turn["hop"], 0) + 1
            for e in turn["entities"]:
                if e not in kb or kb.kind(kb.id(e)) is not TokenKind.ENTITY:
                    audit.missing_entities += 1
            q = turn.get("query")
            found = None
            if q and q["head"] in kb and q["tail"] in kb:
                found = kb.hop_distance(kb.id(q["head"]), kb.id(q["tail"]), max_hops)
            if found is None or found[0] != turn["hop"]:
                audit.hop_mismatches += 1
            pr = turn.get("pronoun")
            if pr is not None and (pr["entity"] not in seen or pr["pronoun"] not in turn["user"].split()):
                audit.pronoun_violations += 1
            seen.update(turn["user"].split())
            seen.update(turn["system"].split())
    return audit
