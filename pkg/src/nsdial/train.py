"""End-to-end training loop, configuration files and checkpoints."""

from __future__ import annotations

import copy
import csv
import dataclasses
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import tomli
import tomli_w
import torch

from .kb import KnowledgeBase, load_kb
from .model import Ablation, ModelConfig, NSDialModel
from .numeric import NonFiniteError, adam_step, backward, check_finite, load_tensors, make_adam, save_tensors
from .reasoning import MAX_DEPTH, ScoreMode
from .vocab import EOS_ID, OutputSpace, Vocab, build_vocabs, tokenize

log = logging.getLogger(__name__)

USER, SYSTEM = "$u", "$s"


@dataclass
class TrainConfig:
    gamma_g: float = 1.0
    gamma_c: float = 1.0
    lr: float = 1e-3
    dropout: float = 0.1
    tau: float = 0.1
    candidates: int = 5
    depth: int = 3
    mode: str = ScoreMode.BEST_DEPTH.value
    hidden: int = 128
    emb_dim: int = 128
    ablation: str = Ablation.FULL.value
    relation_mask: bool = False
    straight_through: bool = False
    eval_noise: bool = False
    seed: int = 0
    epochs: int = 30
    batch_size: int = 16
    max_grad_norm: float = 5.0
    max_decode_len: int = 20

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 1 <= self.candidates <= 10:
            raise ValueError("candidates (K) must be in [1, 10]")
        if not 1 <= self.depth <= MAX_DEPTH:
            raise ValueError(f"depth (D) must be in [1, {MAX_DEPTH}]")
        ScoreMode(self.mode)
        Ablation(self.ablation)
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    def model_config(self) -> ModelConfig:
        names = {f.name for f in dataclasses.fields(ModelConfig)}
        return ModelConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def load_config(path: str | Path, **overrides) -> TrainConfig:
    with open(path, "rb") as fh:
        raw = tomli.load(fh)
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**raw)


def save_config(cfg: TrainConfig, path: str | Path) -> None:
    Path(path).write_text(tomli_w.dumps(dataclasses.asdict(cfg)), encoding="utf-8")


# -- data --------------------------------------------------------------------

@dataclass
class Sample:
    history: list[str]
    response: list[str]
    entities: list[str]
    hop: int | None
    dialogue: int
    turn: int
    domain: str = ""
    query: tuple[str, str] | None = None  # (head, tail) of the reasoning path, when known


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def dialogues_to_samples(dialogues: Iterable[dict]) -> list[Sample]:
    out = []
    for di, d in enumerate(dialogues):
        history: list[str] = []
        for ti, turn in enumerate(d["turns"]):
            history = history + [USER] + tokenize(turn["user"])
            out.append(
                Sample(
                    history=list(history),
                    response=tokenize(turn["system"]),
                    entities=[e.lower() for e in turn.get("entities", [])],
                    hop=turn.get("hop"),
                    dialogue=di,
                    turn=ti,
                    domain=d.get("domain", ""),
                    query=(turn["query"]["head"], turn["query"]["tail"]) if "query" in turn else None,
                )
            )
            history = history + [SYSTEM] + tokenize(turn["system"])
    return out


def resolve_kb(jsonl_path: str | Path, dialogues: list[dict]) -> KnowledgeBase:
    kb_files = {d.get("kb_file") for d in dialogues}
    if len(kb_files) != 1 or None in kb_files:
        raise ValueError(f"dataset must reference exactly one kb_file, found {sorted(map(str, kb_files))}")
    kb_path = Path(kb_files.pop())
    if not kb_path.is_absolute():
        kb_path = Path(jsonl_path).parent / kb_path
    return load_kb(kb_path)


@dataclass
class Encoded:
    history: list[int]
    target: list[int]


def encode_samples(samples: list[Sample], enc_vocab: Vocab, space: OutputSpace) -> list[Encoded]:
    return [Encoded(enc_vocab.encode(s.history), space.encode(s.response) + [EOS_ID]) for s in samples]


# -- losses ------------------------------------------------------------------

@dataclass
class LossReport:
    l_gen: list[float] = field(default_factory=list)
    l_cp: list[float] = field(default_factory=list)
    l_total: list[float] = field(default_factory=list)

    def add(self, l_gen: float, l_cp: float, l_total: float) -> None:
        self.l_gen.append(l_gen)
        self.l_cp.append(l_cp)
        self.l_total.append(l_total)

    def mean(self) -> dict[str, float]:
        n = max(1, len(self.l_total))
        return {"l_gen": sum(self.l_gen) / n, "l_cp": sum(self.l_cp) / n, "l_total": sum(self.l_total) / n}


def batch_losses(model: NSDialModel, batch: list[Encoded], cfg: TrainConfig, generator=None, noise=None):
    """Summed-over-tokens, averaged-over-batch ``(l_gen, l_cp, l_total)`` tensors."""
    l_gen, l_cp, _ = model.teacher_forced([e.history for e in batch], [e.target for e in batch], generator=generator, noise=noise)
    B = len(batch)
    g = l_gen.sum() / B
    c = l_cp.sum() / B
    return g, c, cfg.gamma_g * g + cfg.gamma_c * c


def train_epoch(
    model: NSDialModel,
    data: list[Encoded],
    cfg: TrainConfig,
    optimizer: torch.optim.Optimizer,
    rng: random.Random,
    generator: torch.Generator,
    epoch: int = 0,
) -> LossReport:
    if not data:
        raise ValueError("train_epoch: empty dataset")
    model.train()
    order = list(range(len(data)))
    rng.shuffle(order)
    report = LossReport()
    for bi in range(0, len(order), cfg.batch_size):
        batch = [data[i] for i in order[bi : bi + cfg.batch_size]]
        g, c, total = batch_losses(model, batch, cfg, generator=generator)
        try:
            check_finite(total, "loss")
        except NonFiniteError:
            raise NonFiniteError(
                f"non-finite loss at epoch {epoch}, batch {bi // cfg.batch_size}: l_gen={g.item()}, l_cp={c.item()}"
            ) from None
        backward(total)
        adam_step(optimizer, cfg.max_grad_norm)
        report.add(g.item(), c.item(), total.item())
    return report


# -- orchestration -----------------------------------------------------------

def build_model(cfg: TrainConfig, train_samples: list[Sample], kb: KnowledgeBase) -> NSDialModel:
    torch.manual_seed(cfg.seed)
    enc_vocab, space = build_vocabs((s.history for s in train_samples), (s.response for s in train_samples), kb)
    return NSDialModel(cfg.model_config(), enc_vocab, space, kb)


@dataclass
class TrainResult:
    model: NSDialModel
    history: list[dict]
    best_epoch: int


def train(
    cfg: TrainConfig,
    train_samples: list[Sample],
    kb: KnowledgeBase,
    dev_samples: list[Sample] | None = None,
    dev_metric: Callable[[NSDialModel, list[Sample]], float] | None = None,
    metrics_csv: str | Path | None = None,
) -> TrainResult:
    """Train for ``cfg.epochs`` epochs, keeping the weights with the best dev score.

    ``dev_metric`` defaults to none, in which case the final epoch is kept.
    """
    torch.set_num_threads(1)
    model = build_model(cfg, train_samples, kb)
    data = encode_samples(train_samples, model.enc_vocab, model.out_space)
    optimizer = make_adam(model.parameters(), cfg.lr)
    rng = random.Random(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    history = []
    best_score, best_state, best_epoch = float("-inf"), None, cfg.epochs
    writer = None
    fh = None
    if metrics_csv is not None:
        fh = open(metrics_csv, "w", newline="", encoding="utf-8")
        writer = csv.DictWriter(fh, fieldnames=["epoch", "l_gen", "l_cp", "l_total", "dev_entity_f1"])
        writer.writeheader()
    try:
        for epoch in range(1, cfg.epochs + 1):
            rep = train_epoch(model, data, cfg, optimizer, rng, gen, epoch)
            row = {"epoch": epoch, **rep.mean(), "dev_entity_f1": ""}
            if dev_samples and dev_metric is not None:
                score = dev_metric(model, dev_samples)
                row["dev_entity_f1"] = score
                if score > best_score:
                    best_score, best_epoch = score, epoch
                    best_state = copy.deepcopy(model.state_dict())
            log.info("epoch %d %s", epoch, row)
            history.append(row)
            if writer is not None:
                writer.writerow(row)
                fh.flush()
    finally:
        if fh is not None:
            fh.close()
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, history, best_epoch)


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(model: NSDialModel, path: str | Path) -> None:
    meta = {
        "config": dataclasses.asdict(model.cfg),
        "enc_vocab": model.enc_vocab.itos,
        "out_vocab": model.out_space.vocab.itos,
        "kb": model.kb.to_json(),
    }
    save_tensors(dict(model.named_parameters()), path, meta)


def load_checkpoint(path: str | Path) -> NSDialModel:
    from .kb import parse_kb
    from .numeric import CheckpointError

    tensors, meta = load_tensors(path)
    try:
        kb = parse_kb(json.dumps(meta["kb"]))
        enc_vocab = Vocab(meta["enc_vocab"][5:])
        out_vocab = Vocab(meta["out_vocab"][5:])
        cfg = ModelConfig(**meta["config"])
    except KeyError as exc:
        raise CheckpointError(f"checkpoint metadata missing {exc}") from exc
    model = NSDialModel(cfg, enc_vocab, OutputSpace(out_vocab, kb), kb)
    params = dict(model.named_parameters())
    if set(params) != set(tensors):
        raise CheckpointError(
            f"checkpoint parameters differ from the model: missing {sorted(set(params) - set(tensors))}, "
            f"unexpected {sorted(set(tensors) - set(params))}"
        )
    with torch.no_grad():
        for name, p in params.items():
            if tuple(tensors[name].shape) != tuple(p.shape):
                raise CheckpointError(f"{name}: shape {tuple(tensors[name].shape)} != {tuple(p.shape)}")
            p.copy_(tensors[name])
    model.eval()
    return model
