"""Event trees built from categorical path data, and hyperstage constraints.

Vertices are named ``s0, s1, ...`` in breadth-first order with children visited
in sorted-label order, so identifiers do not depend on record order.  Leaves are
numbered in the same sequence as situations.
"""
from __future__ import annotations

import csv
import json
import logging
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

PathRecord = tuple[str, ...]


class TreeError(ValueError):
    """Raised when records or a declared structure do not form a valid event tree."""


class HyperstageError(ValueError):
    """Raised when a hyperstage file cannot be interpreted at all."""


def natural_key(item) -> tuple:
    """Sort key that orders ``s2`` before ``s10``."""
    if isinstance(item, str):
        return tuple(int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", item))
    return ("", item)


@dataclass(frozen=True)
class Edge:
    tail: str
    head: str
    label: str
    count: int


@dataclass(frozen=True)
class Floret:
    situation: str
    labels: tuple[str, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.labels) != len(self.counts):
            raise TreeError(f"floret {self.situation}: labels and counts differ in length")
        if any(c < 0 for c in self.counts):
            raise TreeError(f"floret {self.situation}: negative count")


class EventTree:
    """A rooted event tree with observation counts on its edges.

    Instances are treated as immutable once built.  Use :func:`build_tree` or
    :func:`load_tree_spec` rather than calling the constructor directly.
    """

    def __init__(self, edges: Iterable[Edge], root: str = "s0"):
        edges = tuple(edges)
        self.root = root
        self.edges = edges
        self._out: dict[str, list[Edge]] = {}
        self._in: dict[str, Edge] = {}
        for e in edges:
            if e.head in self._in:
                raise TreeError(f"vertex {e.head} has more than one incoming edge")
            if e.head == root:
                raise TreeError("root has an incoming edge")
            if e.count < 0:
                raise TreeError(f"negative count on edge {e.tail}->{e.head}")
            self._in[e.head] = e
            self._out.setdefault(e.tail, []).append(e)
        for tail, out in self._out.items():
            labels = [e.label for e in out]
            if len(set(labels)) != len(labels):
                raise TreeError(f"duplicate edge labels at {tail}")

        # breadth-first reachability doubles as the cycle / connectivity check
        order = [root]
        queue = deque([root])
        seen = {root}
        while queue:
            v = queue.popleft()
            for e in self._out.get(v, ()):
                if e.head in seen:
                    raise TreeError(f"cycle through {e.head}")
                seen.add(e.head)
                order.append(e.head)
                queue.append(e.head)
        vertices = set(self._in) | set(self._out) | {root}
        if seen != vertices:
            missing = sorted(vertices - seen, key=natural_key)
            raise TreeError(f"structure is disconnected: {missing} unreachable from root")

        self.vertices: tuple[str, ...] = tuple(order)
        self.situations: tuple[str, ...] = tuple(v for v in order if v in self._out)
        self.leaves: tuple[str, ...] = tuple(v for v in order if v not in self._out)
        self._index = {v: i for i, v in enumerate(order)}
        if not self.situations:
            raise TreeError("tree has no situations")

        for s in self.situations:
            if s == root:
                continue
            outflow = sum(e.count for e in self._out[s])
            if self._in[s].count != outflow:
                raise TreeError(
                    f"flow conservation fails at {s}: in {self._in[s].count}, out {outflow}"
                )
        self.warnings: tuple[str, ...] = tuple(
            f"situation {s} has out-degree 1 and carries no staging information"
            for s in self.situations
            if len(self._out[s]) == 1
        )
        for w in self.warnings:
            logger.warning(w)

    def __repr__(self):
        return f"EventTree({len(self.situations)} situations, {len(self.leaves)} leaves)"

    def __eq__(self, other):
        return isinstance(other, EventTree) and (self.root, self.edges) == (other.root, other.edges)

    def __hash__(self):
        return hash((self.root, self.edges))

    def index(self, vertex: str) -> int:
        return self._index[vertex]

    def is_leaf(self, vertex: str) -> bool:
        return vertex not in self._out

    def out_edges(self, situation: str) -> tuple[Edge, ...]:
        return tuple(self._out.get(situation, ()))

    def in_edge(self, vertex: str) -> Edge | None:
        return self._in.get(vertex)

    def parent(self, vertex: str) -> str | None:
        e = self._in.get(vertex)
        return None if e is None else e.tail

    def child(self, situation: str, label: str) -> str:
        for e in self._out[situation]:
            if e.label == label:
                return e.head
        raise KeyError((situation, label))

    def labels(self, situation: str) -> tuple[str, ...]:
        return tuple(e.label for e in self._out[situation])

    def floret(self, situation: str) -> Floret:
        out = self._out[situation]
        return Floret(situation, tuple(e.label for e in out), tuple(e.count for e in out))

    def florets(self) -> list[Floret]:
        return [self.floret(s) for s in self.situations]

    def depth(self, vertex: str) -> int:
        d = 0
        while vertex != self.root:
            vertex = self._in[vertex].tail
            d += 1
        return d

    def path_to(self, vertex: str) -> PathRecord:
        """Edge labels from the root down to ``vertex``."""
        labels = []
        while vertex != self.root:
            e = self._in[vertex]
            labels.append(e.label)
            vertex = e.tail
        return tuple(reversed(labels))

    def vertex_at(self, path: Sequence[str]) -> str:
        v = self.root
        for label in path:
            v = self.child(v, label)
        return v

    @property
    def total_count(self) -> int:
        return sum(e.count for e in self._out[self.root])

    def leaf_paths(self) -> dict[str, PathRecord]:
        return {leaf: self.path_to(leaf) for leaf in self.leaves}


def _tree_from_trie(structure: set[PathRecord], counts: Mapping[PathRecord, int]) -> EventTree:
    """Number the vertices of a prefix-closed set of label paths and attach counts.

    ``structure`` holds every non-empty vertex path; ``counts`` maps leaf paths to
    the number of observations ending there.
    """
    children: dict[PathRecord, list[str]] = {}
    for path in structure:
        children.setdefault(path[:-1], []).append(path[-1])
    edge_count: dict[PathRecord, int] = dict.fromkeys(structure, 0)
    for path, n in counts.items():
        for i in range(1, len(path) + 1):
            edge_count[path[:i]] += n

    ids: dict[PathRecord, str] = {(): "s0"}
    queue = deque([()])
    edges = []
    while queue:
        path = queue.popleft()
        for label in sorted(children.get(path, ())):
            child = path + (label,)
            ids[child] = f"s{len(ids)}"
            edges.append(Edge(ids[path], ids[child], label, edge_count[child]))
            queue.append(child)
    return EventTree(edges)


def build_tree(records: Iterable[Sequence[str]]) -> EventTree:
    """Build an event tree whose paths are exactly the observed label sequences."""
    counts: dict[PathRecord, int] = {}
    for rec in records:
        rec = tuple(rec)
        if not rec:
            raise TreeError("empty path record")
        if any(not isinstance(lab, str) or lab == "" for lab in rec):
            raise TreeError(f"record {rec!r} contains an empty label")
        counts[rec] = counts.get(rec, 0) + 1
    if not counts:
        raise TreeError("empty record list")
    structure = {path[:i] for path in counts for i in range(1, len(path) + 1)}
    internal = {path[:-1] for path in structure}
    for path in counts:
        if path in internal:
            raise TreeError(f"record {list(path)} is a strict prefix of another record")
    return _tree_from_trie(structure, counts)


def _labels_after(path: PathRecord, structure: set[PathRecord]) -> set[str]:
    n = len(path)
    return {p[n] for p in structure if len(p) == n + 1 and p[:n] == path}


def load_tree_spec(
    structure: Iterable[tuple[Sequence[str], str]],
    counts: Iterable[tuple[Sequence[str], int]] = (),
) -> EventTree:
    """Build a tree from declared edges, allowing structurally present zero-count paths.

    ``structure`` yields ``(tail_path, label)`` pairs where ``tail_path`` is the
    label path from the root to the edge's tail.  ``counts`` yields
    ``(leaf_path, n)`` pairs; undeclared leaf paths have count zero.
    """
    declared: set[PathRecord] = set()
    for tail, label in structure:
        declared.add(tuple(tail) + (label,))
    if not declared:
        raise TreeError("declared structure has no edges")
    for path in declared:
        if path[:-1] and path[:-1] not in declared:
            raise TreeError(f"edge {list(path)} hangs from undeclared vertex {list(path[:-1])}")

    leaf_counts: dict[PathRecord, int] = {}
    for path, n in counts:
        path = tuple(path)
        if path not in declared:
            raise TreeError(f"counted path {list(path)} is not in the structure")
        if _labels_after(path, declared):
            raise TreeError(f"counted path {list(path)} ends at an internal vertex")
        if int(n) != n or n < 0:
            raise TreeError(f"count for {list(path)} must be a non-negative integer")
        leaf_counts[path] = leaf_counts.get(path, 0) + int(n)
    return _tree_from_trie(declared, leaf_counts)


def read_csv_records(path: str | Path, header: bool = False) -> list[PathRecord]:
    """One record per row; trailing empty cells end the path early."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = csv.reader(fh)
        if header:
            next(rows, None)
        for lineno, row in enumerate(rows, start=2 if header else 1):
            cells = [c.strip() for c in row]
            while cells and cells[-1] == "":
                cells.pop()
            if not cells:
                continue
            if "" in cells:
                raise TreeError(f"{path}:{lineno}: empty cell before the end of the path")
            records.append(tuple(cells))
    return records


def write_csv_records(path: str | Path, records: Sequence[Sequence[str]], header: Sequence[str]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        width = len(header)
        for rec in records:
            writer.writerow(list(rec) + [""] * (width - len(rec)))


def _nested_edges(node: Mapping, prefix: PathRecord = ()):
    for label, sub in node.items():
        yield prefix, label
        yield from _nested_edges(sub or {}, prefix + (label,))


def read_tree_spec(path: str | Path) -> tuple[list[tuple[PathRecord, str]], list[tuple[PathRecord, int]]]:
    """Read a tree-spec JSON file.

    Structure is given either as ``edges: [{"path": [...], "label": ...}]`` or as
    a nested ``tree`` mapping of label to subtree; ``counts`` is a list of
    ``{"path": [...], "n": ...}``.
    """
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    structure = [(tuple(e["path"]), e["label"]) for e in doc.get("edges", [])]
    if "tree" in doc:
        structure.extend(_nested_edges(doc["tree"]))
    counts = [(tuple(c["path"]), c["n"]) for c in doc.get("counts", [])]
    return structure, counts


# -- hyperstages ----------------------------------------------------------------


@dataclass(frozen=True)
class Hyperstage:
    """Partition of situations into hypersets within which co-staging is allowed.

    ``edge_order`` optionally fixes, per situation, which outgoing label lines up
    with which position; situations without an entry are aligned by sorted label.
    """

    blocks: tuple[tuple[str, ...], ...]
    edge_order: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    @classmethod
    def from_blocks(cls, blocks, edge_order=None) -> "Hyperstage":
        canon = tuple(
            sorted(
                (tuple(sorted(set(b), key=natural_key)) for b in blocks),
                key=lambda b: natural_key(b[0]) if b else (),
            )
        )
        order = {s: tuple(v) for s, v in (edge_order or {}).items()}
        return cls(canon, order)

    def rule(self, block: int) -> str:
        return "explicit" if any(s in self.edge_order for s in self.blocks[block]) else "by-sorted-label"

    def block_of(self, situation: str) -> int:
        for i, b in enumerate(self.blocks):
            if situation in b:
                return i
        raise KeyError(situation)

    def aligned_labels(self, tree: EventTree, situation: str) -> tuple[str, ...]:
        if situation in self.edge_order:
            return self.edge_order[situation]
        return tuple(sorted(tree.labels(situation)))

    def to_json(self) -> dict:
        doc: dict = {"blocks": [list(b) for b in self.blocks]}
        if self.edge_order:
            doc["edge_order"] = {s: list(v) for s, v in sorted(self.edge_order.items(), key=lambda kv: natural_key(kv[0]))}
        return doc


def default_hyperstage(tree: EventTree) -> Hyperstage:
    """Group situations whose outgoing label multisets are identical."""
    groups: dict[tuple[str, ...], list[str]] = {}
    for s in tree.situations:
        groups.setdefault(tuple(sorted(tree.labels(s))), []).append(s)
    return Hyperstage.from_blocks(groups.values())


def validate_hyperstage(tree: EventTree, h: Hyperstage) -> list[str]:
    """Return a list of human-readable violations; empty means valid."""
    problems = []
    situations = set(tree.situations)
    seen: dict[str, int] = {}
    for i, block in enumerate(h.blocks):
        if not block:
            problems.append(f"block {i} is empty")
        for s in block:
            if s not in situations:
                problems.append(f"block {i}: {s} is not a situation of the tree")
            elif s in seen:
                problems.append(f"not a partition: {s} appears in blocks {seen[s]} and {i}")
            else:
                seen[s] = i
    missing = sorted(situations - set(seen), key=natural_key)
    if missing:
        problems.append(f"not a cover: situations {missing} belong to no block")

    for s, order in h.edge_order.items():
        if s in situations and sorted(order) != sorted(tree.labels(s)):
            problems.append(f"edge_order for {s} is not a permutation of its labels")

    for i, block in enumerate(h.blocks):
        members = [s for s in block if s in situations]
        degrees = {len(tree.labels(s)) for s in members}
        if len(degrees) > 1:
            problems.append(f"block {i}: mixed out-degree {sorted(degrees)}")
            continue
        if h.rule(i) == "by-sorted-label":
            multisets = {tuple(sorted(tree.labels(s))) for s in members}
            if len(multisets) > 1:
                problems.append(f"block {i}: label misalignment under by-sorted-label rule")
        else:
            unordered = [s for s in members if s not in h.edge_order]
            if unordered:
                problems.append(f"block {i}: explicit alignment missing edge_order for {unordered}")
    return problems


def read_hyperstage(path: str | Path) -> Hyperstage:
    """Read a hyperstage JSON file.

    Accepts either a bare list of lists of situation ids or an object with
    ``blocks`` and an optional ``edge_order`` map.
    """
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(doc, list):
        blocks, order = doc, {}
    elif isinstance(doc, dict) and "blocks" in doc:
        blocks, order = doc["blocks"], doc.get("edge_order", {})
    else:
        raise HyperstageError(f"{path}: expected a list of blocks or an object with 'blocks'")
    if not all(isinstance(b, list) and all(isinstance(s, str) for s in b) for b in blocks):
        raise HyperstageError(f"{path}: blocks must be lists of situation ids")
    return Hyperstage.from_blocks(blocks, order)
