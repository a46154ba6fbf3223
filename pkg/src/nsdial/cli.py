"""Command-line entry point: ``nsdial <command> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__

SPLIT_FILES = ("train", "dev", "test")


# -- shared helpers ----------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    from .train import TrainConfig

    p.add_argument("--config", type=Path, help="TOML file with TrainConfig keys")
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool", bool):
            p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            kind = {"int": int, "float": float}.get(str(f.type), str)
            p.add_argument(flag, dest=f.name, type=kind, default=None)


def _train_config(args):
    from .train import TrainConfig, load_config

    keys = {f.name for f in dataclasses.fields(TrainConfig)}
    over = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    if args.config is not None:
        return load_config(args.config, **over)
    return TrainConfig(**over)


def _load_split_dialogues(data: Path) -> dict[str, list[dict]]:
    from .train import read_jsonl

    out = {}
    for name in SPLIT_FILES:
        p = data / f"{name}.jsonl"
        if p.exists():
            out[name] = read_jsonl(p)
    if not out:
        raise SystemExit(f"no train/dev/test .jsonl files under {data}")
    return out


def _samples(data: Path, split_file: Path | None):
    """Samples per split, either from the files or re-assigned by an unseen split."""
    from .train import dialogues_to_samples, resolve_kb

    dialogues = _load_split_dialogues(data)
    first = next(iter(dialogues))
    kb = resolve_kb(data / f"{first}.jsonl", [d for ds in dialogues.values() for d in ds])
    if split_file is None:
        return {k: dialogues_to_samples(v) for k, v in dialogues.items()}, kb
    split_doc = json.loads(split_file.read_text())
    flat = [d for name in SPLIT_FILES for d in dialogues.get(name, [])]
    samples = dialogues_to_samples(flat)
    where = dict(zip(split_doc["samples"], split_doc["assignments"]))
    out = {name: [] for name in SPLIT_FILES}
    for s in samples:
        key = f"{s.dialogue}:{s.turn}"
        if key not in where:
            raise SystemExit(f"split file does not cover sample {key}; was it built from {data}?")
        out[where[key]].append(s)
    return out, kb


# -- commands ----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from .forge import ForgeError, generate_dataset

    try:
        ds = generate_dataset(
            args.domain,
            sizes=tuple(args.sizes),
            hop_mix=tuple(args.hop_mix) if args.hop_mix else None,
            seed=args.seed,
            pronoun_rate=args.pronoun_rate,
        )
    except ForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    paths = ds.write(args.out)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return 0


def cmd_extend_kb(args) -> int:
    import random

    from .forge import extend_kb_with_hierarchy, load_domains, load_places
    from .kb import load_kb, save_kb
    from .forge.generator import base_kb

    kb = load_kb(args.kb) if args.kb else base_kb(args.domain)
    domain = load_domains()[args.domain]
    rel = kb.id(domain.venue_relation)
    venues = sorted({kb.name(t.head) for t in kb.triples if t.relation == rel})
    out = extend_kb_with_hierarchy(kb, venues, load_places(args.places), random.Random(f"{args.seed}:kb"))
    save_kb(out, args.out)
    print(f"{len(kb)} -> {len(out)} triples, {out.n} tokens: {args.out}")
    return 0


def cmd_split_unseen(args) -> int:
    from .forge import UnreachableOverlap, make_unseen_split

    dialogues = _load_split_dialogues(args.data)
    flat = [d for name in SPLIT_FILES for d in dialogues.get(name, [])]
    code = 0
    try:
        split = make_unseen_split(flat, args.target_overlap, args.dev_fraction, args.seed, args.test_fraction)
    except UnreachableOverlap as exc:
        print(f"error: {exc}", file=sys.stderr)
        split, code = exc.closest, 1
    split.save(args.out)
    print(json.dumps({"achieved_overlap": split.achieved_overlap, "target_overlap": split.target_overlap, **split.counts}))
    return code


def cmd_train(args) -> int:
    from .evaluate import dev_entity_f1
    from .train import save_checkpoint, save_config, train

    cfg = _train_config(args)
    samples, kb = _samples(args.data, args.split)
    if not samples.get("train"):
        raise SystemExit("no training samples")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    metrics = args.metrics or args.out.with_suffix(".metrics.csv")
    res = train(cfg, samples["train"], kb, samples.get("dev"), dev_entity_f1, metrics)
    save_checkpoint(res.model, args.out)
    save_config(cfg, args.out.with_suffix(".toml"))
    print(f"best epoch {res.best_epoch}; checkpoint {args.out}; metrics {metrics}")
    return 0


def cmd_eval(args) -> int:
    from .errors import categorize_errors, summarize
    from .evaluate import check_traces, evaluate
    from .train import load_checkpoint

    model = load_checkpoint(args.ckpt)
    samples, _ = _samples(args.data, args.split)
    part = samples.get(args.part)
    if not part:
        raise SystemExit(f"no samples in split {args.part!r}")
    want_trace = args.check or args.traces is not None or args.errors is not None
    report, results = evaluate(model, part, smooth=args.smooth, trace=want_trace)
    out = report.to_json()
    problems: list[str] = []
    if want_trace:
        records = categorize_errors(
            [r.trace for r in results], [(s.entities, r.tokens, s.query) for s, r in zip(part, results)], model.kb
        )
        out["errors"] = summarize(records)
        if args.errors is not None:
            args.errors.write_text(
                "".join(json.dumps({**dataclasses.asdict(r), "category": r.category.value}) + "\n" for r in records)
            )
        if args.traces is not None:
            with open(args.traces, "w", encoding="utf-8") as fh:
                for i, (s, r) in enumerate(zip(part, results)):
                    fh.write(json.dumps({"turn": i, "response": " ".join(r.tokens), "trace": r.trace}) + "\n")
    if args.check:
        if not report.reconciles():
            problems.append("bucket counts do not reconcile with the overall counts")
        if model.cfg.ablation != "no_hre":
            problems += check_traces([r.trace for r in results], model.cfg.candidates)
        out["check"] = {"ok": not problems, "problems": problems[:20]}
    if args.json is not None:
        args.json.write_text(json.dumps(out, indent=1) + "\n")
    print(report.table())
    if "errors" in out:
        print("errors:", json.dumps(out["errors"]))
    if args.check:
        print("check:", "ok" if not problems else f"{len(problems)} problem(s)")
        for p in problems[:20]:
            print("  " + p)
    return 1 if problems else 0


def cmd_trace(args) -> int:
    from .repl import TraceSession

    from .train import load_checkpoint

    session = TraceSession(load_checkpoint(args.ckpt), fmt=args.format)
    return session.run(sys.stdin, sys.stdout)


def cmd_render_proof(args) -> int:
    from .render import render_proof

    rec = None
    with open(args.trace, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                r = json.loads(line)
                if r.get("turn") == args.turn:
                    rec = r
                    break
    if rec is None:
        raise SystemExit(f"turn {args.turn} not in {args.trace}")
    trees = {k: v for st in rec["trace"] for k, v in st.get("proof_trees", {}).items()}
    if not trees:
        raise SystemExit(f"turn {args.turn} has no proof trees")
    ids = [args.tree] if args.tree else sorted(trees)
    for tid in ids:
        if tid not in trees:
            raise SystemExit(f"no tree {tid!r}; available: {', '.join(sorted(trees))}")
        if len(ids) > 1 and args.format == "ascii":
            print(f"# tree {tid}")
        sys.stdout.write(render_proof(trees[tid], args.format))
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nsdial", description="Neural-symbolic KB dialogue toolkit")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic multi-hop dialogue dataset")
    g.add_argument("--domain", default="movie", choices=("movie", "hotel", "restaurant"))
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--sizes", type=int, nargs=3, default=(300, 50, 50), metavar=("TRAIN", "DEV", "TEST"))
    g.add_argument("--hop-mix", type=float, nargs=3, metavar=("P1", "P2", "P3"))
    g.add_argument("--pronoun-rate", type=float, default=0.3)
    g.set_defaults(fn=cmd_gen_data)

    e = sub.add_parser("extend-kb", help="add the location hierarchy to a KB file")
    e.add_argument("--domain", default="movie", choices=("movie", "hotel", "restaurant"))
    e.add_argument("--kb", type=Path, help="input KB (defaults to the bundled one)")
    e.add_argument("--places", type=Path, help="place hierarchy JSON (defaults to the bundled one)")
    e.add_argument("--out", type=Path, required=True)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(fn=cmd_extend_kb)

    s = sub.add_parser("split-unseen", help="build an unseen-entity split")
    s.add_argument("--data", type=Path, required=True, help="directory with train/dev/test .jsonl")
    s.add_argument("--target-overlap", type=float, required=True)
    s.add_argument("--test-fraction", type=float, default=0.3)
    s.add_argument("--dev-fraction", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(fn=cmd_split_unseen)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--split", type=Path, help="unseen split JSON re-assigning samples")
    t.add_argument("--out", type=Path, required=True, help="checkpoint manifest path (.json)")
    t.add_argument("--metrics", type=Path, help="per-epoch CSV (default: next to the checkpoint)")
    _add_train_flags(t)
    t.set_defaults(fn=cmd_train)

    v = sub.add_parser("eval", help="evaluate a checkpoint")
    v.add_argument("--ckpt", type=Path, required=True)
    v.add_argument("--data", type=Path, required=True)
    v.add_argument("--split", type=Path)
    v.add_argument("--part", default="test", choices=SPLIT_FILES)
    v.add_argument("--json", type=Path, help="write the report as JSON")
    v.add_argument("--traces", type=Path, help="write per-turn decoding traces (JSONL)")
    v.add_argument("--errors", type=Path, help="write error records (JSONL)")
    v.add_argument("--smooth", action="store_true", help="smoothed BLEU")
    v.add_argument("--check", action="store_true", help="exit nonzero if report or trace checks fail")
    v.set_defaults(fn=cmd_eval)

    r = sub.add_parser("trace", help="interactive session showing hypotheses and proof trees")
    r.add_argument("--ckpt", type=Path, required=True)
    r.add_argument("--format", default="ascii", choices=("ascii", "dot"))
    r.set_defaults(fn=cmd_trace)

    pr = sub.add_parser("render-proof", help="render proof trees from an eval trace file")
    pr.add_argument("--trace", type=Path, required=True)
    pr.add_argument("--turn", type=int, required=True)
    pr.add_argument("--tree", help="tree id such as 3:0 (default: all trees of the turn)")
    pr.add_argument("--format", default="ascii", choices=("ascii", "dot"))
    pr.set_defaults(fn=cmd_render_proof)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
