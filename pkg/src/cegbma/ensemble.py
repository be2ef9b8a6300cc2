"""Bayesian model averaging over sampled stagings.

Models get a uniform prior, so posterior weights are normalised exponentiated
log marginal likelihoods.  The window and razor are applied per hyperset; the
well-performing stagings of each hyperset are then recombined by Cartesian
product into whole-tree models.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .event_tree import EventTree, Hyperstage, natural_key
from .scoring import HypersetContext, PriorAssignment, hyperset_contexts
from .search import ScoredStaging, Staging

DEFAULT_MAX_MODELS = 100_000


class CombineLimitError(RuntimeError):
    """The Cartesian product of per-hyperset ensembles is larger than allowed."""


def normalize_weights(log_scores: Sequence[float]) -> list[float]:
    scores = np.asarray(log_scores, dtype=float)
    if scores.size == 0:
        raise ValueError("cannot normalise an empty list of scores")
    if not np.all(np.isfinite(scores)):
        raise ValueError("log scores must be finite")
    # subtract the max first: the differences are exact, whereas a logsumexp
    # near 1e6 has already lost ~1e-10 to rounding
    diffs = scores - scores.max()
    return [float(x) for x in np.exp(diffs - logsumexp(diffs))]


def occams_window(log_scores: Sequence[float], beta: float) -> list[int]:
    """Indices of models whose odds against the best model are below ``beta``.

    Accepts log scores or log weights; only differences matter.
    """
    if not beta > 1:
        raise ValueError(f"beta must exceed 1, got {beta!r}")
    if len(log_scores) == 0:
        return []
    best = max(log_scores)
    cut = math.log(beta)
    return [k for k, s in enumerate(log_scores) if best - s < cut]


def is_nested(a: Staging, b: Staging) -> bool:
    """True when ``a`` is a strict coarsening of ``b`` (a submodel of ``b``)."""
    if a.hyperset != b.hyperset or a.members != b.members:
        raise ValueError("stagings belong to different hypersets")
    if a.blocks == b.blocks:
        return False
    where = {m: n for n, blk in enumerate(a.blocks) for m in blk}
    return all(len({where[m] for m in blk}) == 1 for blk in b.blocks)


def _nested_or_equal(a: Staging, b: Staging) -> bool:
    return a.blocks == b.blocks or is_nested(a, b)


def model_is_nested(a: Sequence[Staging], b: Sequence[Staging]) -> bool:
    """Product-model nesting: nested-or-equal everywhere, strict somewhere."""
    if len(a) != len(b):
        raise ValueError("models cover different hyperstages")
    return all(_nested_or_equal(x, y) for x, y in zip(a, b)) and any(
        x.blocks != y.blocks for x, y in zip(a, b)
    )


def razor_filter(stagings: Sequence, log_scores: Sequence[float]) -> list[int]:
    """Indices surviving the razor: drop a model if a nested model scores strictly higher.

    ``stagings`` holds either :class:`Staging` objects or per-hyperset tuples of
    them (whole-tree models).
    """
    nested = model_is_nested if stagings and not isinstance(stagings[0], Staging) else is_nested
    keep = []
    for k, (sk, score_k) in enumerate(zip(stagings, log_scores)):
        dominated = any(
            score_k < score_l and nested(sl, sk)
            for l, (sl, score_l) in enumerate(zip(stagings, log_scores))
            if l != k
        )
        if not dominated:
            keep.append(k)
    return keep


@dataclass(frozen=True)
class HypersetEnsemble:
    """Distinct stagings of one hyperset with normalised posterior weights.

    ``raw_weights`` are the weights the same stagings had before filtering,
    normalised over the whole sampled set.
    """

    hyperset: int
    stagings: tuple[ScoredStaging, ...]
    weights: tuple[float, ...]
    raw_weights: tuple[float, ...] = ()

    @classmethod
    def from_scored(cls, hyperset: int, scored: Iterable[ScoredStaging]) -> "HypersetEnsemble":
        scored = sorted(scored, key=lambda e: (-e.log_score, e.staging.sort_key()))
        if not scored:
            raise ValueError(f"hyperset {hyperset} has no stagings")
        w = tuple(normalize_weights([e.log_score for e in scored]))
        return cls(hyperset, tuple(scored), w, w)

    def subset(self, indices: Sequence[int]) -> "HypersetEnsemble":
        picked = [self.stagings[i] for i in indices]
        return HypersetEnsemble(
            self.hyperset,
            tuple(picked),
            tuple(normalize_weights([e.log_score for e in picked])),
            tuple(self.raw_weights[i] for i in indices),
        )

    @property
    def log_scores(self) -> list[float]:
        return [e.log_score for e in self.stagings]

    def __len__(self):
        return len(self.stagings)


@dataclass(frozen=True)
class WindowResult:
    sampled: HypersetEnsemble
    window: tuple[int, ...]
    well_performing: HypersetEnsemble


def well_performing(ensemble: HypersetEnsemble, beta: float) -> WindowResult:
    window = occams_window(ensemble.log_scores, beta)
    windowed = ensemble.subset(window)
    survivors = razor_filter([e.staging for e in windowed.stagings], windowed.log_scores)
    return WindowResult(ensemble, tuple(window), windowed.subset(survivors))


@dataclass(frozen=True)
class ScoredModel:
    stagings: tuple[Staging, ...]
    log_score: float

    def stage_blocks(self) -> list[tuple]:
        return [b for st in self.stagings for b in st.blocks]


@dataclass(frozen=True)
class ModelAverage:
    models: tuple[ScoredModel, ...]
    weights: tuple[float, ...]
    beta: float | None = None
    provenance: Mapping = field(default_factory=dict)

    def __len__(self):
        return len(self.models)


def combine(
    ensembles: Sequence[HypersetEnsemble],
    beta: float | None = None,
    max_models: int = DEFAULT_MAX_MODELS,
    provenance: Mapping | None = None,
) -> ModelAverage:
    """All combinations of per-hyperset stagings, scored by summing components."""
    if not ensembles:
        raise ValueError("no hyperset ensembles to combine")
    sizes = [len(e) for e in ensembles]
    if 0 in sizes:
        raise ValueError("every hyperset needs at least one staging")
    total = math.prod(sizes)
    if total > max_models:
        raise CombineLimitError(
            f"combined model count {' x '.join(map(str, sizes))} = {total} exceeds the cap of {max_models}"
        )
    models = []
    for combo in itertools.product(*(e.stagings for e in ensembles)):
        models.append(ScoredModel(tuple(c.staging for c in combo), sum(c.log_score for c in combo)))
    models.sort(key=lambda m: (-m.log_score, tuple(st.sort_key() for st in m.stagings)))
    weights = tuple(normalize_weights([m.log_score for m in models]))
    return ModelAverage(tuple(models), weights, beta, dict(provenance or {}))


def global_window(avg: ModelAverage, beta: float) -> ModelAverage:
    """Window and razor over whole-tree models, after recombination."""
    scores = [m.log_score for m in avg.models]
    window = occams_window(scores, beta)
    inside = [avg.models[k] for k in window]
    keep = razor_filter([m.stagings for m in inside], [m.log_score for m in inside])
    models = tuple(inside[k] for k in keep)
    return ModelAverage(models, tuple(normalize_weights([m.log_score for m in models])), beta, avg.provenance)


def _check_same_hyperset(stagings: Sequence[Staging]):
    if not stagings:
        raise ValueError("need at least one staging")
    first = stagings[0]
    for st in stagings[1:]:
        if st.members != first.members:
            raise ValueError("stagings cover different situations")


def staging_intersection(stagings: Sequence[Staging]) -> Staging:
    """Coarsest partition refining every input (pairs co-staged everywhere)."""
    stagings = list(stagings)
    _check_same_hyperset(stagings)
    lookups = [{m: n for n, b in enumerate(st.blocks) for m in b} for st in stagings]
    groups: dict[tuple, list] = {}
    for m in stagings[0].members:
        groups.setdefault(tuple(lk[m] for lk in lookups), []).append(m)
    return Staging.of(groups.values(), stagings[0].hyperset)


def staging_union(stagings: Sequence[Staging]) -> Staging:
    """Finest partition coarsening every input (transitive closure of co-staging)."""
    stagings = list(stagings)
    _check_same_hyperset(stagings)
    parent = {m: m for m in stagings[0].members}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for st in stagings:
        for b in st.blocks:
            root = find(b[0])
            for m in b[1:]:
                parent[find(m)] = root
    groups: dict = {}
    for m in parent:
        groups.setdefault(find(m), []).append(m)
    return Staging.of(groups.values(), stagings[0].hyperset)


def same_stage_probability(avg: ModelAverage, s, t) -> float:
    """Posterior probability that ``s`` and ``t`` share a stage.

    Pairs from different hyperstage blocks cannot share a stage; they get 0.0
    and a :class:`UserWarning`.
    """
    total, hits = 0.0, 0
    for model, w in zip(avg.models, avg.weights):
        home = next((st for st in model.stagings if s in st.members), None)
        if home is None:
            raise KeyError(s)
        if t not in home.members:
            warnings.warn(f"{s} and {t} lie in different hypersets", stacklevel=2)
            return 0.0
        if home.co_staged(s, t):
            total += w
            hits += 1
    # exact endpoints, not a float sum that may land a few ulps off
    if hits == len(avg.models):
        return 1.0
    return min(total, 1.0)


def _mean_probs(tree: EventTree, contexts: Sequence[HypersetContext], model: ScoredModel) -> dict:
    out = {}
    for st in model.stagings:
        ctx = contexts[st.hyperset]
        for block in st.blocks:
            data = ctx.stage_data(block)
            post = [a + n for a, n in zip(data.alpha, data.counts)]
            total = sum(post)
            for s in block:
                aligned = dict(zip(ctx.labels[s], (p / total for p in post)))
                out[s] = tuple(aligned[lab] for lab in tree.labels(s))
    return {s: out[s] for s in tree.situations}


def posterior_mean_probs(
    tree: EventTree, prior: PriorAssignment, model: ScoredModel, hyperstage: Hyperstage | None = None
) -> dict[str, tuple[float, ...]]:
    """Posterior mean edge probabilities per situation, in the tree's edge order."""
    return _mean_probs(tree, hyperset_contexts(tree, prior, hyperstage), model)


@dataclass(frozen=True)
class Predictive:
    situation_probs: dict[str, tuple[float, ...]]
    leaf_probs: dict[str, float]


def _leaf_probs(tree: EventTree, probs: Mapping[str, Sequence[float]]) -> dict[str, float]:
    reach = {tree.root: 1.0}
    for s in tree.situations:
        for e, p in zip(tree.out_edges(s), probs[s]):
            reach[e.head] = reach[s] * p
    return {leaf: reach[leaf] for leaf in tree.leaves}


def averaged_predictive(
    avg: ModelAverage, tree: EventTree, prior: PriorAssignment, hyperstage: Hyperstage | None = None
) -> Predictive:
    """Weight-average edge probabilities and root-to-leaf atom probabilities.

    Atom probabilities are averaged at model level: each model's path product is
    computed first, then weighted.
    """
    contexts = hyperset_contexts(tree, prior, hyperstage)
    sit = {s: np.zeros(len(tree.labels(s))) for s in tree.situations}
    leaves = dict.fromkeys(tree.leaves, 0.0)
    for model, w in zip(avg.models, avg.weights):
        probs = _mean_probs(tree, contexts, model)
        for s, vec in probs.items():
            sit[s] += w * np.asarray(vec)
        for leaf, p in _leaf_probs(tree, probs).items():
            leaves[leaf] += w * p
    return Predictive({s: tuple(float(x) for x in v) for s, v in sit.items()}, leaves)


def sorted_pairs(members: Iterable) -> list[tuple]:
    ordered = sorted(members, key=natural_key)
    return [(ordered[i], ordered[j]) for i in range(len(ordered)) for j in range(i)]
