"""Agglomerative staging search within one hyperset.

``hac`` is the greedy search: from singletons it always takes the merge with
the largest log Bayes factor.  ``whac_run`` is its randomised counterpart,
which picks a merge with probability proportional to its Bayes factor.  Both
stop when no merge improves the score by more than ``epsilon``.

Randomness comes from :func:`numpy.random.default_rng` (PCG64) seeded with
``base_seed + run_index``; each merge consumes one uniform draw.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .event_tree import natural_key
from .scoring import HypersetContext


@dataclass(frozen=True)
class Staging:
    """A partition of one hyperset's situations, held in canonical form."""

    hyperset: int
    blocks: tuple[tuple, ...]

    @classmethod
    def of(cls, blocks: Iterable[Iterable], hyperset: int = 0) -> "Staging":
        canon = [tuple(sorted(set(b), key=natural_key)) for b in blocks]
        canon = [b for b in canon if b]
        canon.sort(key=lambda b: natural_key(b[0]))
        flat = [m for b in canon for m in b]
        if len(flat) != len(set(flat)):
            raise ValueError("stages of a staging must be disjoint")
        return cls(hyperset, tuple(canon))

    @classmethod
    def singletons(cls, members: Iterable, hyperset: int = 0) -> "Staging":
        return cls.of(([m] for m in members), hyperset)

    @property
    def members(self) -> frozenset:
        return frozenset(m for b in self.blocks for m in b)

    def stage_of(self, member) -> tuple:
        for b in self.blocks:
            if member in b:
                return b
        raise KeyError(member)

    def co_staged(self, s, t) -> bool:
        return t in self.stage_of(s)

    def sort_key(self) -> tuple:
        return tuple(tuple(natural_key(m) for m in b) for b in self.blocks)

    def __len__(self):
        return len(self.blocks)

    def __str__(self):
        return "{" + ", ".join("{" + ", ".join(map(str, b)) + "}" for b in self.blocks) + "}"

    def to_json(self) -> list[list]:
        return [list(b) for b in self.blocks]


@dataclass(frozen=True)
class MergeCandidate:
    i: int
    j: int
    log_bf: float

    def __post_init__(self):
        if not self.i < self.j:
            raise ValueError("candidate pair must satisfy i < j")
        if not math.isfinite(self.log_bf):
            raise ValueError("log Bayes factor must be finite")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    k: int = 100
    epsilon: float = 0.0
    # False normalises over every pair, not only the improving ones
    restrict_to_improving: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("K must be a positive integer")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class SearchResult:
    staging: Staging
    log_score: float
    merges: tuple = field(default=(), compare=False)


@dataclass(frozen=True)
class ScoredStaging:
    staging: Staging
    log_score: float
    hits: int = 0


def merge_distribution(
    candidates: Sequence[MergeCandidate], epsilon: float = 0.0, restrict_to_improving: bool = True
) -> np.ndarray:
    """Merge probabilities proportional to the Bayes factors of the candidates.

    Candidates whose log Bayes factor does not exceed ``epsilon`` get probability
    zero unless ``restrict_to_improving`` is False.
    """
    return _probabilities(np.array([c.log_bf for c in candidates], dtype=float), epsilon, restrict_to_improving)


def _probabilities(log_bf: np.ndarray, epsilon: float, restrict_to_improving: bool) -> np.ndarray:
    eligible = log_bf > epsilon
    if not eligible.any():
        raise ValueError("no candidate improves the score; the search should stop")
    if not restrict_to_improving:
        eligible = np.ones_like(eligible)
    shifted = np.where(eligible, log_bf - log_bf[eligible].max(), -np.inf)
    w = np.exp(shifted)
    return w / w.sum()


def _agglomerate(
    context: HypersetContext,
    choose: Callable[[np.ndarray], int],
    epsilon: float,
) -> SearchResult:
    rank = {m: r for r, m in enumerate(sorted(context.members, key=natural_key))}
    # stage id = rank of its smallest member, so id order is canonical order
    stages = {rank[m]: frozenset([m]) for m in context.members}
    cache = {}
    ids = sorted(stages)
    for x, i in enumerate(ids):
        for j in ids[x + 1:]:
            cache[i, j] = context.merge_log_bf(stages[i], stages[j])

    merges = []
    while cache and max(cache.values()) > epsilon:
        pairs = sorted(cache)
        i, j = pairs[choose(np.array([cache[p] for p in pairs]))]
        merges.append((tuple(sorted(stages[i], key=natural_key)), tuple(sorted(stages[j], key=natural_key))))
        stages[i] = stages[i] | stages.pop(j)
        cache = {p: v for p, v in cache.items() if i not in p and j not in p}
        for other in stages:
            if other != i:
                key = (min(i, other), max(i, other))
                cache[key] = context.merge_log_bf(stages[key[0]], stages[key[1]])

    staging = Staging.of(stages.values(), context.index)
    return SearchResult(staging, context.staging_score(staging.blocks), tuple(merges))


def hac(context: HypersetContext, epsilon: float = 0.0) -> SearchResult:
    """Greedy agglomerative search; ties go to the lexicographically first pair."""

    def best(log_bf: np.ndarray) -> int:
        return int(np.argmax(log_bf))  # first maximum, i.e. the smallest pair

    return _agglomerate(context, best, epsilon)


def whac_run(
    context: HypersetContext,
    seed: int,
    epsilon: float = 0.0,
    restrict_to_improving: bool = True,
) -> SearchResult:
    """One randomised agglomerative run, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)

    def sample(log_bf: np.ndarray) -> int:
        p = _probabilities(log_bf, epsilon, restrict_to_improving)
        cdf = np.cumsum(p)
        u = rng.random() * cdf[-1]
        idx = int(np.searchsorted(cdf, u, side="right"))
        if idx >= len(p):
            idx = int(np.flatnonzero(p)[-1])
        return idx

    return _agglomerate(context, sample, epsilon)


def _run_seeds(context: HypersetContext, seeds: range, epsilon: float, restrict: bool) -> list[Staging]:
    return [whac_run(context, s, epsilon, restrict).staging for s in seeds]


def whac_ensemble(
    context: HypersetContext, config: RunConfig, workers: int = 1
) -> list[ScoredStaging]:
    """Run w-HAC ``K * len(hyperset)`` times and tally the distinct stagings.

    Output is sorted by descending score, ties by canonical staging order.  The
    result does not depend on ``workers``.
    """
    n_runs = config.k * len(context.members)
    seeds = range(config.seed, config.seed + n_runs)
    if workers > 1 and n_runs > 1:
        size = -(-n_runs // workers)
        chunks = [seeds[i:i + size] for i in range(0, n_runs, size)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(
                _run_seeds,
                [context] * len(chunks),
                chunks,
                [config.epsilon] * len(chunks),
                [config.restrict_to_improving] * len(chunks),
            )
            results = [st for part in parts for st in part]
    else:
        results = _run_seeds(context, seeds, config.epsilon, config.restrict_to_improving)

    hits: dict[Staging, int] = {}
    for st in results:
        hits[st] = hits.get(st, 0) + 1
    out = [ScoredStaging(st, context.staging_score(st.blocks), n) for st, n in hits.items()]
    out.sort(key=lambda e: (-e.log_score, e.staging.sort_key()))
    return out
