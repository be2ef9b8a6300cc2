"""Exhaustive ground truth for small hypersets, and synthetic data generation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from .ensemble import HypersetEnsemble, WindowResult, well_performing
from .event_tree import EventTree, Hyperstage, PathRecord, natural_key, validate_hyperstage
from .scoring import HypersetContext
from .search import ScoredStaging, Staging

MAX_BELL = 25
ENUMERATION_CAP = 12


def _bell_row(n: int) -> list[int]:
    # Bell triangle: each row starts with the last entry of the previous row
    row = [1]
    bells = [1]
    for _ in range(n):
        nxt = [row[-1]]
        for x in row:
            nxt.append(nxt[-1] + x)
        row = nxt
        bells.append(row[0])
    return bells


def bell(n: int) -> int:
    if not 0 <= n <= MAX_BELL:
        raise ValueError(f"bell(n) is defined here for 0 <= n <= {MAX_BELL}, got {n}")
    return _bell_row(n)[n]


def model_space_size(hyperstage: Hyperstage) -> int:
    return math.prod(bell(len(b)) for b in hyperstage.blocks)


class PartitionEnumerator:
    """Iterate over the set partitions of ``items`` via restricted growth strings.

    A restricted growth string ``a`` has ``a[0] = 0`` and
    ``a[i] <= 1 + max(a[:i])``; each one names the block of every item.
    """

    def __init__(self, items: Sequence):
        self.items = list(items)
        self.n = len(self.items)

    def __len__(self):
        return bell(self.n)

    def growth_strings(self) -> Iterator[tuple[int, ...]]:
        n = self.n
        if n == 0:
            yield ()
            return
        a = [0] * n
        top = [0] * n  # top[i] = max(a[:i+1])
        while True:
            yield tuple(a)
            i = n - 1
            while i > 0 and a[i] > top[i - 1]:
                i -= 1
            if i == 0:
                return
            a[i] += 1
            top[i] = max(top[i - 1], a[i])
            for j in range(i + 1, n):
                a[j] = 0
                top[j] = top[i]

    def __iter__(self) -> Iterator[list[list]]:
        for rgs in self.growth_strings():
            blocks: list[list] = []
            for item, b in zip(self.items, rgs):
                if b == len(blocks):
                    blocks.append([])
                blocks[b].append(item)
            yield blocks


def enumerate_stagings(context: HypersetContext, cap: int = ENUMERATION_CAP) -> Iterator[ScoredStaging]:
    if len(context.members) > cap:
        raise ValueError(f"hyperset of size {len(context.members)} exceeds the enumeration cap {cap}")
    members = sorted(context.members, key=natural_key)
    for blocks in PartitionEnumerator(members):
        st = Staging.of(blocks, context.index)
        yield ScoredStaging(st, context.staging_score(st.blocks))


def exact_map(context: HypersetContext, cap: int = ENUMERATION_CAP) -> ScoredStaging:
    return min(enumerate_stagings(context, cap), key=lambda e: (-e.log_score, e.staging.sort_key()))


def exact_window(context: HypersetContext, beta: float, cap: int = ENUMERATION_CAP) -> WindowResult:
    """Window and razor over every staging of the hyperset.

    ``well_performing.raw_weights`` are exact posterior probabilities over the
    full staging space.
    """
    full = HypersetEnsemble.from_scored(context.index, enumerate_stagings(context, cap))
    return well_performing(full, beta)


@dataclass(frozen=True)
class GeneratingModel:
    """A staged tree with known stage probabilities.

    ``probs[k]`` is aligned to the sorted labels shared by the members of
    ``stages[k]``.
    """

    tree: EventTree
    stages: tuple[tuple[str, ...], ...]
    probs: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if len(self.stages) != len(self.probs):
            raise ValueError("one probability vector per stage is required")
        seen = [s for st in self.stages for s in st]
        if sorted(seen, key=natural_key) != sorted(self.tree.situations, key=natural_key):
            raise ValueError("stages must partition the situations of the tree")
        for st, p in zip(self.stages, self.probs):
            labels = {tuple(sorted(self.tree.labels(s))) for s in st}
            if len(labels) != 1:
                raise ValueError(f"stage {list(st)} mixes situations with different labels")
            if len(p) != len(next(iter(labels))):
                raise ValueError(f"stage {list(st)}: probability vector has the wrong length")
            if any(x < 0 for x in p) or abs(sum(p) - 1) > 1e-9:
                raise ValueError(f"stage {list(st)}: probabilities must be non-negative and sum to 1")

    def situation_probs(self) -> dict[str, dict[str, float]]:
        out = {}
        for st, p in zip(self.stages, self.probs):
            for s in st:
                out[s] = dict(zip(sorted(self.tree.labels(s)), p))
        return out

    def staging_for(self, hyperstage: Hyperstage) -> list[Staging]:
        """The generating stages split into per-hyperset stagings."""
        if validate_hyperstage(self.tree, hyperstage):
            raise ValueError("hyperstage is not valid for this tree")
        out = []
        for i, block in enumerate(hyperstage.blocks):
            members = set(block)
            parts = [set(st) & members for st in self.stages]
            out.append(Staging.of([p for p in parts if p], i))
        for st in self.stages:
            if len({hyperstage.block_of(s) for s in st}) > 1:
                raise ValueError(f"stage {list(st)} spans several hypersets")
        return out

    @classmethod
    def from_json(cls, tree: EventTree, doc: Mapping) -> "GeneratingModel":
        return cls(
            tree,
            tuple(tuple(st) for st in doc["stages"]),
            tuple(tuple(float(x) for x in p) for p in doc["probs"]),
        )


def simulate(gen: GeneratingModel, n: int, seed: int) -> list[PathRecord]:
    """Sample ``n`` root-to-leaf paths edge by edge."""
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    tree = gen.tree
    table = {}
    for s, dist in gen.situation_probs().items():
        labels = list(dist)
        cdf = np.cumsum([dist[lab] for lab in labels])
        table[s] = (labels, cdf / cdf[-1])
    records = []
    for u_row in rng.random((n, _height(tree))):
        v, path, k = tree.root, [], 0
        while not tree.is_leaf(v):
            labels, cdf = table[v]
            idx = min(int(np.searchsorted(cdf, u_row[k], side="right")), len(labels) - 1)
            path.append(labels[idx])
            v = tree.child(v, labels[idx])
            k += 1
        records.append(tuple(path))
    return records


def _height(tree: EventTree) -> int:
    return max(tree.depth(leaf) for leaf in tree.leaves)
