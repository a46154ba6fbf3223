"""Interactive single-session trace loop over a trained model."""

from __future__ import annotations

from typing import TextIO

import torch

from .model import NSDialModel
from .render import render_proof
from .train import SYSTEM, USER
from .vocab import tokenize

HELP = """commands:
  :reset        start a new dialogue
  :trees        toggle proof-tree printing (on by default)
  :quit         leave
anything else is a user utterance"""


def format_step(step: dict) -> str:
    lines = [f"  [{step['step']}] {step['token']}  p_gen={step['p_gen']:.3f}  {step['structure']}"]
    lines.append("      states: " + ", ".join(f"k{s['k']}={s['token']}" for s in step["states"]))
    for h in step["hypotheses"]:
        bel = "-" if h["belief"] is None else f"{h['belief']:.4f}"
        lines.append(f"      {' '.join(h['triple']):<50} cp={h['cp_prob']:.3f}  belief={bel}")
    return "\n".join(lines)


class TraceSession:
    def __init__(self, model: NSDialModel, fmt: str = "ascii", max_len: int = 20):
        self.model = model.eval()
        self.fmt = fmt
        self.max_len = max_len
        self.history: list[str] = []
        self.show_trees = True

    def respond(self, utterance: str):
        """Response tokens and the trace of their KB-channel steps; extends the history."""
        self.history += [USER] + tokenize(utterance)
        with torch.no_grad():
            res = self.model.greedy_decode([self.model.enc_vocab.encode(self.history)], self.max_len, trace=True)[0]
        self.history += [SYSTEM] + res.tokens
        return res.tokens, [st for st in res.trace if st["kb_channel"]]

    def run(self, inp: TextIO, out: TextIO) -> int:
        interactive = inp.isatty()
        if interactive:
            print(HELP, file=out)
        while True:
            if interactive:
                out.write("user> ")
                out.flush()
            line = inp.readline()
            if not line:
                return 0
            line = line.strip()
            if not line:
                continue
            if line == ":quit":
                return 0
            if line == ":reset":
                self.history = []
                print("(new dialogue)", file=out)
                continue
            if line == ":trees":
                self.show_trees = not self.show_trees
                continue
            if line.startswith(":"):
                print(HELP, file=out)
                continue
            tokens, steps = self.respond(line)
            print("system> " + " ".join(tokens), file=out)
            for st in steps:
                print(format_step(st), file=out)
                if self.show_trees:
                    for tid, tree in sorted(st["proof_trees"].items()):
                        print(f"    proof {tid}:", file=out)
                        for row in render_proof(tree, self.fmt).splitlines():
                            print("      " + row, file=out)
            out.flush()
