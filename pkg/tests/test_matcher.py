import numpy as np
import pytest

from apthunt.graph import AbilityGraph
from apthunt.matcher import (
    BudgetExceededError,
    CostScheme,
    GedResult,
    ged_exact,
    ged_normalized,
    node_edge_count,
    rank_campaigns,
    topk_score,
)
from oracles import brute_ged, random_ability_graph


def chain(labels, name="g"):
    return AbilityGraph(
        kind="campaign",
        node_labels=tuple(labels),
        edges=frozenset((i, i + 1) for i in range(len(labels) - 1)),
        name=name,
    )


EMPTY = AbilityGraph(kind="campaign", node_labels=(), edges=frozenset(), name="empty")


def test_self_distance_zero_with_identity_mapping():
    g = chain(["A", "B", "C"])
    result = ged_exact(g, g)
    assert result.raw == 0.0
    assert result.normalized == 0.0
    assert result.mapping == (0, 1, 2)
    assert result.exact


def test_empty_versus_three_node_chain():
    gc = chain(["A", "B", "C"])
    result = ged_exact(EMPTY, gc)
    assert result.raw == 5.0  # 3 node + 2 edge insertions
    assert ged_normalized(result, EMPTY, gc) == 1.0


def test_single_substitution_on_chain():
    gq = chain(["A", "B", "C"])
    gc = chain(["A", "B", "D"])
    result = ged_exact(gq, gc)
    assert result.raw == 1.0
    assert result.raw == brute_ged(gq, gc)


def test_matches_brute_force_on_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(60):
        gq = random_ability_graph(rng)
        gc = random_ability_graph(rng)
        result = ged_exact(gq, gc)
        assert result.exact
        assert result.raw == pytest.approx(brute_ged(gq, gc), abs=1e-12), (gq, gc)


def test_symmetry_under_default_costs():
    rng = np.random.default_rng(1)
    for _ in range(25):
        a = random_ability_graph(rng, max_nodes=5)
        b = random_ability_graph(rng, max_nodes=5)
        assert ged_exact(a, b).raw == pytest.approx(ged_exact(b, a).raw, abs=1e-12)


def test_triangle_inequality_unit_costs():
    rng = np.random.default_rng(2)
    costs = CostScheme(edge_sub=0.0)
    for _ in range(20):
        a = random_ability_graph(rng, max_nodes=4)
        b = random_ability_graph(rng, max_nodes=4)
        c = random_ability_graph(rng, max_nodes=4)
        ab = ged_exact(a, b, costs).raw
        bc = ged_exact(b, c, costs).raw
        ac = ged_exact(a, c, costs).raw
        assert ac <= ab + bc + 1e-12


def test_zero_iff_label_isomorphic():
    rng = np.random.default_rng(3)
    for _ in range(30):
        a = random_ability_graph(rng, max_nodes=4)
        b = random_ability_graph(rng, max_nodes=4)
        raw = ged_exact(a, b).raw
        if raw == 0.0:
            assert sorted(a.node_labels) == sorted(b.node_labels)
            assert a.n_edges == b.n_edges


def test_normalization_arithmetic():
    gq = chain(["A", "B", "C"])  # NodeEdge 5
    gc = chain(["A", "B", "C", "D"])  # NodeEdge 7
    result = GedResult(raw=1.0, normalized=0.0, mapping=(), expanded_states=0)
    assert ged_normalized(result, gq, gc) == pytest.approx(1.0 / 7.0)
    assert ged_normalized(GedResult(0.0, 0.0, (), 0), EMPTY, EMPTY) == 0.0
    assert node_edge_count(gc) == 7


def test_directed_edges_matter():
    a = AbilityGraph(kind="campaign", node_labels=("A", "B"),
                     edges=frozenset({(0, 1)}), name="fwd")
    b = AbilityGraph(kind="campaign", node_labels=("A", "B"),
                     edges=frozenset({(1, 0)}), name="rev")
    result = ged_exact(a, b)
    assert result.raw == 2.0  # delete one edge, insert the other
    assert result.raw == brute_ged(a, b)


def test_disjoint_label_sets_warn_but_compute():
    from apthunt.matcher import IncompatibleLabelSetsWarning

    with pytest.warns(IncompatibleLabelSetsWarning):
        result = ged_exact(chain(["A", "B"]), chain(["C", "D"]))
    assert result.raw == 2.0  # two substitutions


def test_cost_scheme_validation():
    with pytest.raises(ValueError):
        CostScheme(node_del=-1.0)
    scheme = CostScheme()
    assert scheme.node_subst("A", "A") == 0.0
    assert scheme.node_subst("A", "B") == 1.0


def test_custom_costs_respected():
    gq = chain(["A"])
    gc = chain(["B"])
    assert ged_exact(gq, gc, CostScheme(node_sub=0.25)).raw == 0.25
    # substitution dearer than delete+insert: the cheaper route wins
    assert ged_exact(gq, gc, CostScheme(node_sub=5.0)).raw == 2.0


def test_budget_exceeded_carries_upper_bound():
    gq = chain(["A", "B", "C", "D", "E"])
    gc = chain(["E", "D", "C", "B", "A"])
    true_raw = ged_exact(gq, gc).raw
    with pytest.raises(BudgetExceededError) as exc:
        ged_exact(gq, gc, budget=2)
    assert exc.value.upper_bound >= true_raw


def test_rank_campaigns_self_match_first():
    corpus = [
        chain(["A", "B", "C"], "Gamma"),
        chain(["A", "B"], "Alpha"),
        chain(["C", "D", "E", "F"], "Delta"),
    ]
    ranking = rank_campaigns(chain(["A", "B", "C"]), corpus)
    assert ranking[0][0] == "Gamma"
    assert ranking[0][1].normalized == 0.0
    assert len(ranking) == len(corpus)
    scores = [r.normalized for _, r in ranking]
    assert scores == sorted(scores)


def test_rank_campaigns_single_campaign():
    ranking = rank_campaigns(EMPTY, [chain(["A"], "Only")])
    assert [name for name, _ in ranking] == ["Only"]


def test_rank_campaigns_tie_breaks_alphabetically():
    ranking = rank_campaigns(EMPTY, [chain(["X"], "Zeta"), chain(["Y"], "Alpha")])
    assert [name for name, _ in ranking] == ["Alpha", "Zeta"]
    assert ranking[0][1].normalized == ranking[1][1].normalized == 1.0


def test_rank_campaigns_budget_exhaustion_flags_inexact():
    gq = chain(["A", "B", "C", "D", "E"])
    corpus = [chain(["E", "D", "C", "B", "A"], "Hard")]
    ranking = rank_campaigns(gq, corpus, budget=2)
    assert ranking[0][1].exact is False
    assert ranking[0][1].raw > 0


def test_rank_campaigns_empty_corpus_rejected():
    with pytest.raises(ValueError):
        rank_campaigns(EMPTY, [])


def test_topk_fixture_two_first_one_third():
    names = ["A", "B", "C", "D", "E"]
    rankings = [
        ("A", ["A", "B", "C", "D", "E"]),
        ("B", ["B", "A", "C", "D", "E"]),
        ("C", ["A", "B", "C", "D", "E"]),
        ("D", ["A", "B", "C", "E", "X"]),
        ("E", ["A", "B", "C", "D", "X"]),
    ]
    assert topk_score(rankings, 1) == pytest.approx(0.4)
    assert topk_score(rankings, 3) == pytest.approx(0.6)
    assert topk_score(rankings, 5) == pytest.approx(0.6)


def test_topk_all_first():
    rankings = [(n, [n, "other"]) for n in "ABC"]
    for k in (1, 2, 5):
        assert topk_score(rankings, k) == 1.0


def test_topk_full_coverage():
    rankings = [("A", ["B", "A"]), ("B", ["A", "B"])]
    assert topk_score(rankings, 2) == 1.0
    with pytest.raises(ValueError):
        topk_score(rankings, 0)
