"""Conjugate Dirichlet-Multinomial scoring of stagings.

All scores are natural-log marginal likelihoods.  A stage's data is the
componentwise sum of its members' prior and count vectors under the hyperset's
edge alignment.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from math import lgamma
from typing import Iterable, Mapping, Sequence

from .event_tree import EventTree, Hyperstage, default_hyperstage, natural_key

PRIOR_RULES = ("propagate", "flat")


@dataclass(frozen=True)
class PriorAssignment:
    """Per-situation Dirichlet parameters aligned to each situation's edge order.

    ``mass`` holds the prior mass arriving at every vertex, leaves included.
    """

    alpha_bar: float
    params: Mapping[str, tuple[float, ...]]
    mass: Mapping[str, float]
    rule: str = "propagate"


def propagate_prior(tree: EventTree, alpha_bar: float, rule: str = "propagate") -> PriorAssignment:
    """Split ``alpha_bar`` uniformly at every floret.

    With ``rule="propagate"`` the root receives ``alpha_bar`` and each edge passes
    its share down to the child.  ``rule="flat"`` gives every floret
    ``alpha_bar / out_degree`` per edge regardless of depth.
    """
    if not alpha_bar > 0:
        raise ValueError(f"alpha_bar must be positive, got {alpha_bar!r}")
    if rule not in PRIOR_RULES:
        raise ValueError(f"unknown prior rule {rule!r}")
    alpha_bar = float(alpha_bar)
    mass = {tree.root: alpha_bar}
    params = {}
    for s in tree.situations:  # breadth-first, so parents come first
        out = tree.out_edges(s)
        share = (mass[s] if rule == "propagate" else alpha_bar) / len(out)
        params[s] = (share,) * len(out)
        for e in out:
            mass[e.head] = share
    return PriorAssignment(alpha_bar, params, mass, rule)


@dataclass(frozen=True)
class StageData:
    members: tuple[str, ...]
    alpha: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.alpha) != len(self.counts):
            raise ValueError("alpha and counts must have equal length")
        if any(a <= 0 for a in self.alpha):
            raise ValueError("Dirichlet parameters must be positive")
        if any(n < 0 for n in self.counts):
            raise ValueError("counts must be non-negative")

    def __add__(self, other: "StageData") -> "StageData":
        if len(self.alpha) != len(other.alpha):
            raise ValueError(
                f"cannot merge stages of out-degree {len(self.alpha)} and {len(other.alpha)}"
            )
        members = tuple(sorted(self.members + other.members, key=natural_key))
        return StageData(
            members,
            tuple(a + b for a, b in zip(self.alpha, other.alpha)),
            tuple(a + b for a, b in zip(self.counts, other.counts)),
        )


def dirichlet_multinomial_log_score(alpha: Sequence[float], counts: Sequence[int]) -> float:
    post = [a + n for a, n in zip(alpha, counts)]
    return (
        lgamma(sum(alpha))
        - lgamma(sum(post))
        + sum(lgamma(p) - lgamma(a) for p, a in zip(post, alpha))
    )


def stage_log_score(stage: StageData) -> float:
    return dirichlet_multinomial_log_score(stage.alpha, stage.counts)


def merge_log_bf(a: StageData, b: StageData) -> float:
    """Log Bayes factor of merging two stages against keeping them apart."""
    return stage_log_score(a + b) - stage_log_score(a) - stage_log_score(b)


class HypersetContext:
    """Aligned florets and priors for one hyperset, with memoised stage scores.

    Stages are identified by frozensets of member situations, so scores can be
    shared between search runs over the same hyperset.
    """

    def __init__(self, index: int, singles: Sequence[StageData], labels: Mapping[str, tuple[str, ...]]):
        self.index = index
        self.members: tuple[str, ...] = tuple(s.members[0] for s in singles)
        self.labels = dict(labels)
        self._single = {s.members[0]: s for s in singles}
        self._scores: dict[frozenset, float] = {}
        self._data: dict[frozenset, StageData] = {}

    def __repr__(self):
        return f"HypersetContext({self.index}, {list(self.members)})"

    def __getstate__(self):
        state = dict(self.__dict__)
        state["_scores"] = {}
        state["_data"] = {}
        return state

    def stage_data(self, members: Iterable[str]) -> StageData:
        key = frozenset(members)
        data = self._data.get(key)
        if data is None:
            data = reduce(lambda x, y: x + y, (self._single[m] for m in sorted(key, key=natural_key)))
            self._data[key] = data
        return data

    def stage_score(self, members: Iterable[str]) -> float:
        key = frozenset(members)
        score = self._scores.get(key)
        if score is None:
            score = stage_log_score(self.stage_data(key))
            self._scores[key] = score
        return score

    def merge_log_bf(self, a: Iterable[str], b: Iterable[str]) -> float:
        a, b = frozenset(a), frozenset(b)
        return self.stage_score(a | b) - self.stage_score(a) - self.stage_score(b)

    def staging_score(self, blocks: Iterable[Iterable[str]]) -> float:
        return sum(self.stage_score(b) for b in blocks)


def hyperset_contexts(
    tree: EventTree, prior: PriorAssignment, hyperstage: Hyperstage | None = None
) -> list[HypersetContext]:
    hyperstage = hyperstage or default_hyperstage(tree)
    contexts = []
    for i, block in enumerate(hyperstage.blocks):
        singles, labels = [], {}
        for s in block:
            order = hyperstage.aligned_labels(tree, s)
            own = tree.labels(s)
            pos = [own.index(lab) for lab in order]
            counts = tree.floret(s).counts
            singles.append(
                StageData((s,), tuple(prior.params[s][p] for p in pos), tuple(counts[p] for p in pos))
            )
            labels[s] = order
        contexts.append(HypersetContext(i, singles, labels))
    return contexts


def staging_log_score(
    tree: EventTree,
    prior: PriorAssignment,
    staging: Iterable[Iterable[str]],
    hyperstage: Hyperstage | None = None,
) -> float:
    """Total log marginal likelihood of a staging covering every situation.

    ``staging`` is any iterable of stages (collections of situations); each stage
    must lie inside a single hyperset.
    """
    hyperstage = hyperstage or default_hyperstage(tree)
    contexts = hyperset_contexts(tree, prior, hyperstage)
    block_of = {s: i for i, b in enumerate(hyperstage.blocks) for s in b}
    covered: set[str] = set()
    total = 0.0
    for stage in staging:
        stage = tuple(stage)
        homes = {block_of.get(s) for s in stage}
        if None in homes:
            raise ValueError(f"stage {list(stage)} contains a vertex outside the hyperstage")
        if len(homes) != 1:
            raise ValueError(f"stage {list(stage)} spans more than one hyperset")
        if covered.intersection(stage):
            raise ValueError(f"stage {list(stage)} overlaps another stage")
        covered.update(stage)
        total += contexts[homes.pop()].stage_score(stage)
    missing = set(tree.situations) - covered
    if missing:
        raise ValueError(f"staging does not cover {sorted(missing, key=natural_key)}")
    return total
