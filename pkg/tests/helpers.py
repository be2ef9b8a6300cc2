"""Shared fixture builders for the test suite."""
from __future__ import annotations

import random

from cegbma.event_tree import Hyperstage, load_tree_spec
from cegbma.oracle import GeneratingModel
from cegbma.scoring import HypersetContext, StageData

LIVING = ["Communal Assessed", "Communal Not Assessed", "Community Assessed", "Community Not Assessed"]
RISK = ["High Risk", "Low Risk"]
TREAT_HIGH = ["Not Referred & Not Treated", "Not Referred & Treated", "Referred & Treated"]
TREAT_LOW = ["Not Referred & Not Treated", "Not Referred & Treated"]
FALL = ["Don't Fall", "Fall"]

# the hyperstage used in the falls example, in its own situation names
FALLS_HYPERSTAGE = [
    ["s0"],
    ["s1", "s2", "s3", "s4"],
    ["s5", "s9"],
    ["s6", "s10"],
    ["s7", "s8", "s11", "s12", "s13", "s14", "s15", "s16", "s17", "s22", "s23", "s24", "s25", "s26"],
]


def falls_structure():
    """Edges of the falls event tree as (tail path, label) pairs."""
    edges = []
    for a in LIVING:
        edges.append(((), a))
        for r in RISK:
            edges.append(((a,), r))
            if "Not Assessed" in a:
                treatments = []
            else:
                treatments = TREAT_HIGH if r == "High Risk" else TREAT_LOW
            if not treatments:
                edges += [((a, r), f) for f in FALL]
            for t in treatments:
                edges.append(((a, r), t))
                edges += [((a, r, t), f) for f in FALL]
    return edges


def falls_tree(counts=()):
    return load_tree_spec(falls_structure(), counts)


# generating stages: living situation, risk per living situation, treatment
# independent of living situation, fall probability driven by risk and treatment
FALLS_STAGES = {
    0: ([["s0"]], [(0.15, 0.15, 0.35, 0.35)]),
    1: ([["s1"], ["s2"], ["s3"], ["s4"]], [(0.5, 0.5), (0.8, 0.2), (0.3, 0.7), (0.1, 0.9)]),
    2: ([["s5", "s9"]], [(0.3, 0.2, 0.5)]),
    3: ([["s6", "s10"]], [(0.7, 0.3)]),
    4: (
        [
            ["s7", "s11", "s13", "s22"],
            ["s14", "s15", "s23", "s24"],
            ["s8", "s12", "s16", "s25"],
            ["s17", "s26"],
        ],
        [(0.3, 0.7), (0.45, 0.55), (0.85, 0.15), (0.94, 0.06)],
    ),
}


def falls_generator():
    tree = falls_tree()
    stages, probs = [], []
    for block in FALLS_STAGES.values():
        stages += [tuple(s) for s in block[0]]
        probs += block[1]
    return GeneratingModel(tree, tuple(stages), tuple(probs))


def zero_context(size: int, dim: int = 2, index: int = 0) -> HypersetContext:
    singles = [StageData((f"s{i}",), (1.0,) * dim, (0,) * dim) for i in range(size)]
    return HypersetContext(index, singles, {f"s{i}": tuple(map(str, range(dim))) for i in range(size)})


def make_context(alphas, counts, index: int = 0) -> HypersetContext:
    singles = [StageData((f"s{i}",), tuple(map(float, a)), tuple(n)) for i, (a, n) in enumerate(zip(alphas, counts))]
    dim = len(alphas[0])
    return HypersetContext(index, singles, {s.members[0]: tuple(map(str, range(dim))) for s in singles})


def synthetic_context(seed: int, size: int, dim: int = 2, n_per: int = 60) -> HypersetContext:
    """Hyperset whose situations are drawn from a few latent stages."""
    rng = random.Random(seed)
    n_latent = rng.randint(1, max(1, size // 2))
    centres = [[rng.random() + 0.05 for _ in range(dim)] for _ in range(n_latent)]
    counts = []
    for _ in range(size):
        c = rng.choice(centres)
        total = sum(c)
        n = rng.randint(n_per // 3, n_per)
        draws = [0] * dim
        for _ in range(n):
            u, acc = rng.random() * total, 0.0
            for j, w in enumerate(c):
                acc += w
                if u < acc:
                    draws[j] += 1
                    break
            else:
                draws[-1] += 1
        counts.append(draws)
    alpha = [1.0 / dim] * dim
    return make_context([alpha] * size, counts)
