"""Chain event graph positions and Graphviz DOT output for staged trees and CEGs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .event_tree import EventTree, Hyperstage, default_hyperstage, natural_key

SINK = "w_inf"
PALETTE = (
    "#e6194b", "#3cb44b", "#ffe119", "#4363d8", "#f58231", "#911eb4",
    "#46f0f0", "#f032e6", "#bcf60c", "#fabebe", "#008080", "#e6beff",
)


def _quote(s: str) -> str:
    return '"{}"'.format(str(s).replace("\\", "\\\\").replace('"', r"\""))


def _stage_lookup(tree: EventTree, stages: Iterable[Iterable[str]]) -> dict[str, int]:
    canon = sorted((sorted(b, key=natural_key) for b in stages), key=lambda b: natural_key(b[0]))
    lookup = {s: k for k, b in enumerate(canon) for s in b}
    missing = [s for s in tree.situations if s not in lookup]
    if missing:
        raise ValueError(f"staging does not cover {missing}")
    return lookup


def stage_colours(tree: EventTree, stages: Iterable[Iterable[str]]) -> dict[str, str]:
    """Fill colour per situation; singleton stages are left out."""
    stages = [tuple(b) for b in stages]
    lookup = _stage_lookup(tree, stages)
    sizes: dict[int, int] = {}
    for k in lookup.values():
        sizes[k] = sizes.get(k, 0) + 1
    coloured = sorted(k for k, n in sizes.items() if n > 1)
    colour = {k: PALETTE[i % len(PALETTE)] for i, k in enumerate(coloured)}
    return {s: colour[k] for s, k in lookup.items() if k in colour}


@dataclass(frozen=True)
class PositionPartition:
    position_of: Mapping[str, str]  # situation -> position id
    positions: tuple[tuple[str, ...], ...]  # members of w0, w1, ...
    sink: str = SINK

    def members(self, position: str) -> tuple[str, ...]:
        return self.positions[int(position[1:])]


def compute_positions(
    tree: EventTree, stages: Iterable[Iterable[str]], hyperstage: Hyperstage | None = None
) -> PositionPartition:
    """Coarsest partition of situations with identical staged futures.

    Two situations share a position when they share a stage and, edge by
    aligned edge, their children are both leaves or share a position.
    """
    hyperstage = hyperstage or default_hyperstage(tree)
    stage = _stage_lookup(tree, stages)
    signature: dict[str, tuple] = {}
    classes: dict[tuple, int] = {}
    # children have larger breadth-first index than parents
    for s in reversed(tree.situations):
        kids = []
        for label in hyperstage.aligned_labels(tree, s):
            child = tree.child(s, label)
            kids.append(SINK if tree.is_leaf(child) else classes[signature[child]])
        sig = (stage[s], tuple(kids))
        signature[s] = sig
        classes.setdefault(sig, len(classes))
    groups: dict[tuple, list[str]] = {}
    for s in tree.situations:
        groups.setdefault(signature[s], []).append(s)
    ordered = sorted(groups.values(), key=lambda g: tree.index(g[0]))
    position_of = {s: f"w{n}" for n, g in enumerate(ordered) for s in g}
    return PositionPartition(position_of, tuple(tuple(g) for g in ordered))


def staged_tree_dot(tree: EventTree, stages: Iterable[Iterable[str]], name: str = "staged_tree") -> str:
    colours = stage_colours(tree, stages)
    lines = [f"digraph {_quote(name)} {{", "  rankdir=LR;", "  node [shape=circle, fontsize=10];"]
    for v in tree.vertices:
        if tree.is_leaf(v):
            lines.append(f"  {_quote(v)} [shape=point];")
        elif v in colours:
            lines.append(f"  {_quote(v)} [style=filled, fillcolor={_quote(colours[v])}];")
        else:
            lines.append(f"  {_quote(v)};")
    for e in tree.edges:
        lines.append(f"  {_quote(e.tail)} -> {_quote(e.head)} [label={_quote(f'{e.label}: {e.count}')}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def ceg_dot(
    tree: EventTree,
    stages: Iterable[Iterable[str]],
    probs: Mapping[str, Sequence[float]],
    hyperstage: Hyperstage | None = None,
    name: str = "ceg",
) -> str:
    """DOT for the chain event graph; edge labels carry ``label: p`` to 3 decimals.

    ``probs`` maps each situation to probabilities in the tree's edge order.
    """
    stages = [tuple(b) for b in stages]
    pos = compute_positions(tree, stages, hyperstage)
    colours = stage_colours(tree, stages)
    lines = [f"digraph {_quote(name)} {{", "  rankdir=LR;", "  node [shape=circle, fontsize=10];"]
    for n, group in enumerate(pos.positions):
        rep = group[0]
        attrs = [f"label={_quote(f'w{n}')}", f"tooltip={_quote(', '.join(group))}"]
        if rep in colours:
            attrs += ["style=filled", f"fillcolor={_quote(colours[rep])}"]
        lines.append(f"  {_quote(f'w{n}')} [{', '.join(attrs)}];")
    lines.append(f"  {_quote(SINK)} [shape=doublecircle];")
    for n, group in enumerate(pos.positions):
        rep = group[0]
        for e, p in zip(tree.out_edges(rep), probs[rep]):
            head = SINK if tree.is_leaf(e.head) else pos.position_of[e.head]
            label = f"{e.label}: {p:.3f}"
            lines.append(f"  {_quote(f'w{n}')} -> {_quote(head)} [label={_quote(label)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
