"""End-to-end pipelines behind the command line: MAP fitting and model averaging.

Every function here returns plain JSON-ready structures; writing files is left
to :mod:`cegbma.cli`.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from . import __version__
from .ensemble import (
    DEFAULT_MAX_MODELS,
    HypersetEnsemble,
    ModelAverage,
    ScoredModel,
    WindowResult,
    averaged_predictive,
    combine,
    global_window,
    posterior_mean_probs,
    same_stage_probability,
    staging_intersection,
    staging_union,
    well_performing,
)
from .event_tree import (
    Edge,
    EventTree,
    Hyperstage,
    build_tree,
    default_hyperstage,
    load_tree_spec,
    natural_key,
    read_csv_records,
    read_hyperstage,
    read_tree_spec,
    validate_hyperstage,
)
from .graph_export import ceg_dot, staged_tree_dot
from .scoring import HypersetContext, PriorAssignment, hyperset_contexts, propagate_prior
from .search import RunConfig, Staging, hac, whac_ensemble

SCHEMA_VERSION = 1


class ValidationError(ValueError):
    """The hyperstage is readable but violates the tree's constraints."""

    def __init__(self, problems: Sequence[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


@dataclass(frozen=True)
class Problem:
    tree: EventTree
    hyperstage: Hyperstage
    prior: PriorAssignment
    contexts: tuple[HypersetContext, ...]


def make_problem(
    tree: EventTree, alpha_bar: float, hyperstage: Hyperstage | None = None, prior_rule: str = "propagate"
) -> Problem:
    hyperstage = hyperstage or default_hyperstage(tree)
    problems = validate_hyperstage(tree, hyperstage)
    if problems:
        raise ValidationError(problems)
    prior = propagate_prior(tree, alpha_bar, prior_rule)
    return Problem(tree, hyperstage, prior, tuple(hyperset_contexts(tree, prior, hyperstage)))


def load_problem(
    alpha_bar: float,
    data: str | None = None,
    tree_spec: str | None = None,
    hyperstage: str | None = None,
    header: bool = False,
    prior_rule: str = "propagate",
) -> Problem:
    """Read inputs from disk.

    With only ``data`` the tree is built from the observed paths.  A tree spec
    supplies the structure; its own counts are used unless ``data`` is given too.
    """
    if data is None and tree_spec is None:
        raise ValueError("either a data file or a tree spec is required")
    if tree_spec is not None:
        structure, counts = read_tree_spec(tree_spec)
        if data is not None:
            records = read_csv_records(data, header)
            if not records:
                raise ValueError(f"{data}: no records")
            counts = _count_paths(records)
        tree = load_tree_spec(structure, counts)
    else:
        tree = build_tree(read_csv_records(data, header))
    h = read_hyperstage(hyperstage) if hyperstage else None
    return make_problem(tree, alpha_bar, h, prior_rule)


def _count_paths(records):
    counts: dict[tuple, int] = {}
    for r in records:
        counts[r] = counts.get(r, 0) + 1
    return list(counts.items())


def file_digest(path: str | None) -> str | None:
    if path is None:
        return None
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- report pieces ----------------------------------------------------------------


def tree_json(tree: EventTree) -> dict:
    return {
        "root": tree.root,
        "situations": list(tree.situations),
        "leaves": list(tree.leaves),
        "edges": [{"tail": e.tail, "head": e.head, "label": e.label, "count": e.count} for e in tree.edges],
        "total_count": tree.total_count,
        "warnings": list(tree.warnings),
    }


def tree_from_json(doc: dict) -> EventTree:
    return EventTree([Edge(e["tail"], e["head"], e["label"], e["count"]) for e in doc["edges"]], doc["root"])


def _probs_json(tree: EventTree, probs) -> dict:
    return {s: dict(zip(tree.labels(s), map(float, probs[s]))) for s in tree.situations}


def _stages(stagings: Sequence[Staging]) -> list[list[str]]:
    return [list(b) for st in stagings for b in st.blocks]


def fit_map(problem: Problem, epsilon: float = 0.0) -> dict:
    """HAC on every hyperset; the MAP estimate and its posterior means."""
    results = [hac(ctx, epsilon) for ctx in problem.contexts]
    model = ScoredModel(tuple(r.staging for r in results), sum(r.log_score for r in results))
    probs = posterior_mean_probs(problem.tree, problem.prior, model, problem.hyperstage)
    return {
        "log_score": model.log_score,
        "hypersets": [
            {
                "index": ctx.index,
                "members": list(ctx.members),
                "staging": r.staging.to_json(),
                "log_score": r.log_score,
                "merges": [[list(a), list(b)] for a, b in r.merges],
            }
            for ctx, r in zip(problem.contexts, results)
        ],
        "stages": _stages(model.stagings),
        "posterior_mean": _probs_json(problem.tree, probs),
    }


def _same_stage_matrix(avg: ModelAverage, members: Sequence[str]) -> dict:
    ordered = sorted(members, key=natural_key)
    rows = []
    for i, s in enumerate(ordered):
        rows.append([same_stage_probability(avg, s, t) for t in ordered[:i]])
    return {"members": ordered, "lower_triangle": rows}


def run_average(
    problem: Problem,
    config: RunConfig,
    beta: float = 20.0,
    max_models: int = DEFAULT_MAX_MODELS,
    workers: int = 1,
    use_global_window: bool = False,
) -> tuple[list[WindowResult], ModelAverage]:
    windows = []
    for ctx in problem.contexts:
        sampled = HypersetEnsemble.from_scored(ctx.index, whac_ensemble(ctx, config, workers))
        windows.append(well_performing(sampled, beta))
    avg = combine([w.well_performing for w in windows], beta, max_models)
    if use_global_window:
        avg = global_window(avg, beta)
    return windows, avg


def average_report(
    problem: Problem,
    config: RunConfig,
    beta: float = 20.0,
    max_models: int = DEFAULT_MAX_MODELS,
    workers: int = 1,
    use_global_window: bool = False,
) -> tuple[dict, ModelAverage]:
    tree = problem.tree
    windows, avg = run_average(problem, config, beta, max_models, workers, use_global_window)
    hypersets = []
    for ctx, res in zip(problem.contexts, windows):
        sampled, wp = res.sampled, res.well_performing
        wp_set = {e.staging for e in wp.stagings}
        win_set = {sampled.stagings[i].staging for i in res.window}
        best = [e.staging for e in wp.stagings]
        hypersets.append(
            {
                "index": ctx.index,
                "members": list(ctx.members),
                "runs": config.k * len(ctx.members),
                "unique_stagings": len(sampled),
                "stagings": [
                    {
                        "stages": e.staging.to_json(),
                        "log_score": e.log_score,
                        "weight": w,
                        "hits": e.hits,
                        "in_window": e.staging in win_set,
                        "well_performing": e.staging in wp_set,
                    }
                    for e, w in zip(sampled.stagings, sampled.weights)
                ],
                "well_performing": [
                    {"stages": e.staging.to_json(), "log_score": e.log_score, "weight": w, "raw_weight": rw}
                    for e, w, rw in zip(wp.stagings, wp.weights, wp.raw_weights)
                ],
                "intersection": staging_intersection(best).to_json(),
                "union": staging_union(best).to_json(),
                "same_stage_probability": _same_stage_matrix(avg, ctx.members),
            }
        )
    pred = averaged_predictive(avg, tree, problem.prior, problem.hyperstage)
    leaf_paths = tree.leaf_paths()
    report = {
        "hypersets": hypersets,
        "model_count": len(avg),
        "global_window": use_global_window,
        "models": [
            {"rank": r, "log_score": m.log_score, "weight": w, "stagings": [st.to_json() for st in m.stagings]}
            for r, (m, w) in enumerate(zip(avg.models, avg.weights))
        ],
        "averaged_predictive": {
            "situations": _probs_json(tree, pred.situation_probs),
            "leaves": {leaf: {"path": list(leaf_paths[leaf]), "p": p} for leaf, p in pred.leaf_probs.items()},
        },
    }
    return report, avg


def manifest(
    command: str,
    *,
    data: str | None,
    tree_spec: str | None,
    hyperstage: str | None,
    header: bool,
    alpha_bar: float,
    prior_rule: str,
    run_id: str,
    **params,
) -> dict:
    return {
        "command": command,
        "run_id": run_id,
        "inputs": {
            "data": data,
            "data_sha256": file_digest(data),
            "tree_spec": tree_spec,
            "tree_spec_sha256": file_digest(tree_spec),
            "hyperstage": hyperstage,
            "hyperstage_sha256": file_digest(hyperstage),
            "header": header,
        },
        "alpha_bar": alpha_bar,
        "prior_rule": prior_rule,
        **params,
        "tool_version": __version__,
    }


def dot_artifacts(tree: EventTree, h: Hyperstage, map_fit: dict, average: dict | None = None) -> dict:
    """DOT texts keyed by artifact name.

    The averaged CEG is drawn on the well-performing intersection staging, where
    co-staged situations are co-staged in every averaged model and so carry
    identical averaged probabilities.
    """
    probs = {s: [map_fit["posterior_mean"][s][lab] for lab in tree.labels(s)] for s in tree.situations}
    out = {
        "map_staged_tree": staged_tree_dot(tree, map_fit["stages"], "map_staged_tree"),
        "map_ceg": ceg_dot(tree, map_fit["stages"], probs, h, "map_ceg"),
    }
    if average is not None:
        pred = average["averaged_predictive"]["situations"]
        avg_probs = {s: [pred[s][lab] for lab in tree.labels(s)] for s in tree.situations}
        top = [b for st in average["models"][0]["stagings"] for b in st]
        meet = [b for hs in average["hypersets"] for b in hs["intersection"]]
        out["bma_top_staged_tree"] = staged_tree_dot(tree, top, "bma_top_staged_tree")
        out["bma_intersection_staged_tree"] = staged_tree_dot(tree, meet, "bma_intersection_staged_tree")
        out["bma_intersection_ceg"] = ceg_dot(tree, meet, avg_probs, h, "bma_intersection_ceg")
    return out
