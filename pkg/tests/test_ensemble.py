import math
import random
import warnings

import mpmath
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cegbma.ensemble import (
    CombineLimitError,
    HypersetEnsemble,
    ModelAverage,
    ScoredModel,
    averaged_predictive,
    combine,
    global_window,
    is_nested,
    model_is_nested,
    normalize_weights,
    occams_window,
    posterior_mean_probs,
    razor_filter,
    same_stage_probability,
    staging_intersection,
    staging_union,
    well_performing,
)
from cegbma.event_tree import build_tree, load_tree_spec
from cegbma.scoring import propagate_prior
from cegbma.search import ScoredStaging, Staging


def S(*blocks, h=0):
    return Staging.of(blocks, h)


def ensemble(h, pairs):
    return HypersetEnsemble.from_scored(h, [ScoredStaging(s, v) for s, v in pairs])


# -- weights and window ------------------------------------------------------------


def test_normalize_examples():
    assert normalize_weights([3.3, 3.3]) == pytest.approx([0.5, 0.5], abs=1e-12)
    assert normalize_weights([0.0, -math.log(20)]) == pytest.approx([20 / 21, 1 / 21], abs=1e-12)
    big = [1e6, 1e6 - math.log(2)]
    # 1e6 - ln 2 is only representable to ~1e-10, so check the stored inputs exactly
    with mpmath.workdps(40):
        z = mpmath.exp(mpmath.mpf(big[1]) - mpmath.mpf(big[0]))
        exact = [float(1 / (1 + z)), float(z / (1 + z))]
    assert normalize_weights(big) == pytest.approx(exact, abs=1e-12)
    assert normalize_weights(big) == pytest.approx([2 / 3, 1 / 3], abs=1e-9)
    with pytest.raises(ValueError):
        normalize_weights([])
    with pytest.raises(ValueError):
        normalize_weights([0.0, math.nan])


def test_window_examples():
    logs = [math.log(0.95), math.log(0.05)]
    assert occams_window(logs, 20) == [0, 1]
    assert occams_window([0.0, -math.log(20)], 20) == [0]
    assert occams_window([0.0, -math.log(20) + 1e-9], 20) == [0, 1]
    assert occams_window([-4.0], 20) == [0]
    with pytest.raises(ValueError):
        occams_window([0.0], 1.0)


def test_nesting_examples():
    assert is_nested(S([1, 2, 3]), S([1, 2], [3]))
    assert not is_nested(S([1, 2], [3, 4]), S([1, 3], [2, 4]))
    assert not is_nested(S([1, 2], [3]), S([1, 2], [3]))
    with pytest.raises(ValueError):
        is_nested(S([1], h=0), S([1], h=1))


def test_razor_examples():
    fine, coarse = S([1], [2], [3]), S([1, 2], [3])
    assert razor_filter([fine, coarse], [math.log(0.3), math.log(0.7)]) == [1]
    assert razor_filter([S([1, 2], [3, 4]), S([1, 3], [2, 4])], [0.0, -1.0]) == [0, 1]
    assert razor_filter([fine, coarse], [-1.0, -1.0]) == [0, 1]
    # the finer model survives when it is the better one
    assert razor_filter([fine, coarse], [0.0, -1.0]) == [0, 1]


def test_model_nesting_product():
    a = (S([1, 2]), S([3], [4], h=1))
    b = (S([1], [2]), S([3], [4], h=1))
    assert model_is_nested(a, b)
    assert not model_is_nested(b, a)
    assert not model_is_nested(a, a)
    assert razor_filter([b, a], [-2.0, -1.0]) == [1]


def test_window_boundary_on_ensemble():
    ens = ensemble(0, [(S([1], [2]), 0.0), (S([1, 2]), -math.log(20))])
    res = well_performing(ens, 20)
    assert res.window == (0,)
    assert len(res.well_performing) == 1


def test_well_performing_renormalises_and_keeps_raw():
    ens = ensemble(
        0,
        [(S([1, 2], [3]), 0.0), (S([1], [2], [3]), -0.5), (S([1, 3], [2]), -1.0), (S([1, 2, 3]), -10.0)],
    )
    res = well_performing(ens, 20)
    wp = res.well_performing
    # the all-singleton staging is dominated by its coarsening {1,2},{3}
    assert [e.staging for e in wp.stagings] == [S([1, 2], [3]), S([1, 3], [2])]
    assert sum(wp.weights) == pytest.approx(1.0, abs=1e-12)
    assert wp.weights[0] / wp.weights[1] == pytest.approx(math.e, rel=1e-12)
    assert wp.raw_weights == (ens.weights[0], ens.weights[2])


# -- combine -----------------------------------------------------------------------


def test_combine_counts_and_scores():
    e1 = ensemble(0, [(S([1], [2]), -1.0), (S([1, 2]), -2.0)])
    e2 = ensemble(1, [(S([3, 4], h=1), -0.5), (S([3], [4], h=1), -0.7), (S([4, 3], h=1), -0.5)][:2])
    e3 = ensemble(2, [(S([5], h=2), 0.0)])
    avg = combine([e1, e2, e3], beta=20)
    assert len(avg) == 4
    for m in avg.models:
        assert len(m.stagings) == 3
    assert avg.models[0].log_score == pytest.approx(-1.5)
    assert sum(avg.weights) == pytest.approx(1.0, abs=1e-12)
    # product weights equal renormalised per-hyperset products
    prod = {(a.staging, b.staging): wa * wb for a, wa in zip(e1.stagings, e1.weights) for b, wb in zip(e2.stagings, e2.weights)}
    for m, w in zip(avg.models, avg.weights):
        assert w == pytest.approx(prod[m.stagings[:2]], abs=1e-12)


def test_combine_twenty_five():
    singles = [ensemble(h, [(S([f"s{h}"], h=h), -1.0)]) for h in range(4)]
    stagings = [S(*[[f"a{i}", f"b{i}"]] if i % 2 else [[f"a{i}"], [f"b{i}"]], h=4) for i in range(25)]
    many = HypersetEnsemble.from_scored(4, [ScoredStaging(st_, -0.01 * i) for i, st_ in enumerate(stagings)])
    assert len(combine(singles + [many])) == 25
    assert combine(singles).weights == (1.0,)


def test_combine_cap_and_empty():
    e1 = ensemble(0, [(S([1], [2]), -1.0), (S([1, 2]), -2.0)])
    e2 = ensemble(1, [(S([3], [4], h=1), -1.0), (S([3, 4], h=1), -2.0)])
    with pytest.raises(CombineLimitError, match="2 x 2 = 4"):
        combine([e1, e2], max_models=3)
    with pytest.raises(ValueError):
        combine([])
    with pytest.raises(ValueError):
        HypersetEnsemble.from_scored(0, [])


def test_global_window_enforces_ratio():
    e1 = ensemble(0, [(S([1], [2]), 0.0), (S([1, 2]), -2.5)])
    e2 = ensemble(1, [(S([3], [4], h=1), 0.0), (S([3, 4], h=1), -2.5)])
    avg = combine([e1, e2], 20)
    assert max(avg.weights) / min(avg.weights) > 20
    g = global_window(avg, 20)
    assert max(g.weights) / min(g.weights) < 20
    assert g.models[0] == avg.models[0]


# -- lattice -----------------------------------------------------------------------


def test_lattice_examples():
    assert staging_intersection([S([1, 2], [3]), S([1, 2, 3])]) == S([1, 2], [3])
    assert staging_intersection([S([1, 2], [3, 4]), S([1, 3], [2, 4])]) == S([1], [2], [3], [4])
    assert staging_intersection([S([1, 3], [2])]) == S([1, 3], [2])
    assert staging_union([S([1, 2], [3, 4]), S([2, 3], [1], [4])]) == S([1, 2, 3, 4])
    assert staging_union([S([1, 2], [3])] * 2) == S([1, 2], [3])
    assert staging_union([S([1], [2]), S([1], [2])]) == S([1], [2])
    with pytest.raises(ValueError):
        staging_intersection([])


def random_partition(rng, items):
    blocks = {}
    for x in items:
        blocks.setdefault(rng.randint(0, len(items) // 2), []).append(x)
    return Staging.of(blocks.values())


@pytest.mark.parametrize("seed", range(20))
def test_lattice_laws_random(seed):
    rng = random.Random(seed)
    items = [f"s{i}" for i in range(rng.randint(2, 8))]
    inputs = [random_partition(rng, items) for _ in range(rng.randint(1, 5))]
    meet, join = staging_intersection(inputs), staging_union(inputs)
    for p in inputs:
        assert all(any(set(b) <= set(pb) for pb in p.blocks) for b in meet.blocks)
        assert all(any(set(pb) <= set(b) for b in join.blocks) for pb in p.blocks)
    assert (meet == join) == (len(set(inputs)) == 1)


# -- same-stage probability and predictions ---------------------------------------


def test_same_stage_examples():
    m1 = ScoredModel((S([1, 2], [3]),), 0.0)
    m2 = ScoredModel((S([1], [2], [3]),), 0.0)
    avg = ModelAverage((m1, m2), (0.6, 0.4))
    assert same_stage_probability(avg, 1, 2) == 0.6
    assert same_stage_probability(avg, 1, 3) == 0.0
    assert same_stage_probability(ModelAverage((m1,), (1.0,)), 2, 1) == 1.0


def test_same_stage_cross_hyperset_warns():
    avg = ModelAverage((ScoredModel((S([1]), S([2], h=1)), 0.0),), (1.0,))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        assert same_stage_probability(avg, 1, 2) == 0.0
    assert caught


def test_posterior_means():
    tree = build_tree([["A", "x"]] * 3 + [["A", "y"]] + [["B", "x"]] * 2 + [["B", "y"]])
    prior = propagate_prior(tree, 2.0)
    singles = ScoredModel((S(["s0"]), S(["s1", "s2"], h=1)), 0.0)
    probs = posterior_mean_probs(tree, prior, singles)
    # shared stage: alpha (1, 1) summed over two situations with half mass each, counts (5, 2)
    assert probs["s1"] == probs["s2"] == pytest.approx((6 / 9, 3 / 9))
    for v in probs.values():
        assert sum(v) == pytest.approx(1.0, abs=1e-12)


def test_posterior_mean_zero_data_uniform():
    tree = load_tree_spec([((), "a"), ((), "b"), ((), "c")])
    prior = propagate_prior(tree, 3.0)
    probs = posterior_mean_probs(tree, prior, ScoredModel((S(["s0"]),), 0.0))
    assert probs["s0"] == pytest.approx((1 / 3,) * 3)


def test_posterior_mean_single_situation():
    tree = build_tree([["x"]] * 3 + [["y"]])
    prior = propagate_prior(tree, 2.0)
    probs = posterior_mean_probs(tree, prior, ScoredModel((S(["s0"]),), 0.0))
    assert probs["s0"] == pytest.approx((4 / 6, 2 / 6))


def depth_two_fixture():
    records = [("a", "x")] * 5 + [("a", "y")] * 1 + [("b", "x")] * 2 + [("b", "y")] * 4
    tree = build_tree(records)
    prior = propagate_prior(tree, 2.0)
    m1 = ScoredModel((S(["s0"]), S(["s1"], ["s2"], h=1)), -1.0)
    m2 = ScoredModel((S(["s0"]), S(["s1", "s2"], h=1)), -1.5)
    return tree, prior, m1, m2


def test_averaged_predictive_single_model():
    tree, prior, m1, _ = depth_two_fixture()
    pred = averaged_predictive(ModelAverage((m1,), (1.0,)), tree, prior)
    assert pred.situation_probs == pytest.approx(posterior_mean_probs(tree, prior, m1))


def test_averaged_predictive_matches_hand_product():
    tree, prior, m1, m2 = depth_two_fixture()
    w = (0.7, 0.3)
    pred = averaged_predictive(ModelAverage((m1, m2), w), tree, prior)
    p1, p2 = posterior_mean_probs(tree, prior, m1), posterior_mean_probs(tree, prior, m2)
    for leaf, path in tree.leaf_paths().items():
        first, second = path
        parent = tree.child("s0", first)
        i, j = tree.labels("s0").index(first), tree.labels(parent).index(second)
        expected = w[0] * p1["s0"][i] * p1[parent][j] + w[1] * p2["s0"][i] * p2[parent][j]
        assert pred.leaf_probs[leaf] == pytest.approx(expected, abs=1e-12)
    assert sum(pred.leaf_probs.values()) == pytest.approx(1.0, abs=1e-9)
    for s in tree.situations:
        expected = [w[0] * a + w[1] * b for a, b in zip(p1[s], p2[s])]
        assert pred.situation_probs[s] == pytest.approx(expected, abs=1e-12)


def test_edge_average_example():
    structure = [((), "a"), ((), "b")] + [((p,), lab) for p in "ab" for lab in "xy"]
    tree = load_tree_spec(structure, [(("a", "x"), 3), (("b", "x"), 1), (("b", "y"), 2)])
    prior = propagate_prior(tree, 4.0)
    apart = ScoredModel((S(["s0"]), S(["s1"], ["s2"], h=1)), 0.0)
    merged = ScoredModel((S(["s0"]), S(["s1", "s2"], h=1)), 0.0)
    assert posterior_mean_probs(tree, prior, apart)["s1"] == pytest.approx((0.8, 0.2))
    assert posterior_mean_probs(tree, prior, merged)["s1"] == pytest.approx((0.6, 0.4))
    pred = averaged_predictive(ModelAverage((apart, merged), (0.5, 0.5)), tree, prior)
    assert pred.situation_probs["s1"] == pytest.approx((0.7, 0.3), abs=1e-12)


# -- properties --------------------------------------------------------------------

scores = st.lists(st.floats(-200, 0), min_size=1, max_size=25)


@settings(max_examples=100, deadline=None)
@given(scores, st.floats(-1e6, 1e6))
def test_weights_sum_and_shift(values, shift):
    w = normalize_weights(values)
    assert abs(sum(w) - 1) < 1e-12
    shifted = normalize_weights([v + shift for v in values])
    assert shifted == pytest.approx(w, abs=1e-9)
    assert occams_window(values, 20) == occams_window([v + shift for v in values], 20)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.integers(0, 3), min_size=4, max_size=4), min_size=1, max_size=8), st.data())
def test_best_model_survives(labellings, data):
    stagings = []
    for lab in labellings:
        groups = {}
        for i, g in enumerate(lab):
            groups.setdefault(g, []).append(i)
        stagings.append(Staging.of(groups.values()))
    stagings = list(dict.fromkeys(stagings))
    values = data.draw(st.lists(st.floats(-30, 0), min_size=len(stagings), max_size=len(stagings)))
    ens = HypersetEnsemble.from_scored(0, [ScoredStaging(s, v) for s, v in zip(stagings, values)])
    res = well_performing(ens, 20)
    assert ens.stagings[0] in res.well_performing.stagings
    wp = res.well_performing
    ratios = [w / wp.weights[0] for w in wp.weights]
    raw = [w / wp.raw_weights[0] for w in wp.raw_weights]
    assert ratios == pytest.approx(raw, rel=1e-9)
