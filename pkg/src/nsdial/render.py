"""Text renderings of proof trees (ASCII and Graphviz DOT).

Inside expanded nodes the bridge entity is shown as ``{z}`` and predicted
relations as ``<r>``; the root triple is shown plain.
"""

from __future__ import annotations

from .kb import KnowledgeBase
from .reasoning import ProofTree

FORMATS = ("ascii", "dot")


def _as_json(tree, kb: KnowledgeBase | None) -> dict:
    if isinstance(tree, ProofTree):
        if kb is None:
            raise ValueError("rendering a ProofTree needs the KB for token names")
        from .model import tree_to_json

        return tree_to_json(tree, kb)
    return tree


def _label(node: dict, role: str) -> str:
    h, r, t = node["triple"]
    if role == "left":  # [H, R1, Z]
        h, r, t = h, f"<{r}>", f"{{{t}}}"
    elif role == "right":  # [Z, R2, T]
        h, r, t = f"{{{h}}}", f"<{r}>", t
    text = f"[{h} {r} {t}]"
    if "kb_match" in node:
        text += f"  ~ ({' '.join(node['kb_match'])}) d={node['distance']:.4f}"
    return text


def _walk(node: dict, role: str = "root"):
    yield node, role
    for child, sub in zip(node.get("children", []), ("left", "right")):
        yield from _walk(child, sub)


def render_ascii(tree, kb: KnowledgeBase | None = None) -> str:
    root = _as_json(tree, kb)
    lines = [_label(root, "root")]

    def rec(node: dict, prefix: str):
        kids = node.get("children", [])
        for i, (child, role) in enumerate(zip(kids, ("left", "right"))):
            last = i == len(kids) - 1
            lines.append(f"{prefix}{'`-- ' if last else '|-- '}{_label(child, role)}")
            rec(child, prefix + ("    " if last else "|   "))

    rec(root, "")
    return "\n".join(lines) + "\n"


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def render_dot(tree, kb: KnowledgeBase | None = None, name: str = "proof") -> str:
    root = _as_json(tree, kb)
    out = [f"digraph {name} {{", "  node [shape=box, fontname=monospace];"]
    ids: dict[int, str] = {}
    edges = []

    def rec(node: dict, role: str):
        nid = f"n{len(ids)}"
        ids[id(node)] = nid
        style = ', style=bold' if role == "root" else ""
        out.append(f'  {nid} [label="{_dot_escape(_label(node, role))}"{style}];')
        for child, sub in zip(node.get("children", []), ("left", "right")):
            cid = rec(child, sub)
            edges.append(f'  {nid} -> {cid} [label="{sub}"];')
        return nid

    rec(root, "root")
    out.extend(edges)
    out.append("}")
    return "\n".join(out) + "\n"


def render_proof(tree, fmt: str = "ascii", kb: KnowledgeBase | None = None) -> str:
    """Render a :class:`ProofTree` (needs ``kb``) or its JSON form."""
    if fmt == "ascii":
        return render_ascii(tree, kb)
    if fmt == "dot":
        return render_dot(tree, kb)
    raise ValueError(f"unknown proof format {fmt!r}; choose from {FORMATS}")


def count_nodes(tree) -> tuple[int, int]:
    """``(nodes, leaves)`` of a JSON proof tree."""
    nodes = list(_walk(tree))
    return len(nodes), sum(1 for n, _ in nodes if not n.get("children"))
