import itertools
from datetime import datetime, timezone

import numpy as np
import pytest

from shelfrec.candidates import (
    CoOccurrenceGraph,
    build_graph,
    generate_candidates,
    graph_from_csv,
    graph_to_csv,
    prune,
    sample_candidates,
    update_graph,
)
from shelfrec.ingest import Product

TS = datetime(2022, 5, 17, tzinfo=timezone.utc)


def make_catalog(heights=None, sub_categories=None):
    heights = heights or {}
    sub_categories = sub_categories or {}
    return {
        pid: Product(pid, pid, sub_categories.get(pid, "Sparkling"), heights.get(pid, 200.0), 60.0)
        for pid in set(heights) | set(sub_categories) | {"A", "B", "C", "D", "E"}
    }


def test_build_graph_counts_pairs():
    catalog = make_catalog()
    states = [("D1", TS, {"A", "B"}), ("D1", TS, {"A", "B"}), ("D2", TS, {"A", "C"})]
    graph = build_graph(states, catalog)
    assert graph.weight("A", "B") == 2
    assert graph.weight("B", "A") == 2
    assert graph.weight("A", "C") == 1
    assert graph.weight("B", "C") == 0
    assert graph.source_log_count == 3


def test_build_graph_respects_sub_category_partition():
    catalog = make_catalog(sub_categories={"A": "Sparkling", "B": "Water"})
    states = [("D1", TS, {"A", "B"})] * 5
    graph = build_graph(states, catalog)
    assert graph.weight("A", "B") == 0


def test_build_graph_empty_log():
    graph = build_graph([], make_catalog())
    assert graph.nodes == set()
    assert graph.adjacency == {}


def test_build_graph_drops_unknown_products():
    catalog = make_catalog()
    graph = build_graph([("D1", TS, {"A", "ZZZ"})], catalog)
    assert graph.dropped_unknown == 1
    assert "ZZZ" not in graph.nodes


def test_graph_symmetry_after_incremental_update():
    catalog = make_catalog()
    graph = build_graph([("D1", TS, {"A", "B", "C"})], catalog)
    update_graph(graph, [("D2", TS, {"B", "C"})], catalog)
    for a, nbrs in graph.adjacency.items():
        for b, w in nbrs.items():
            assert graph.weight(b, a) == w
            assert a != b


def test_sample_first_draw_proportional():
    graph = build_graph([], make_catalog())
    graph.nodes.update({"A", "B", "C"})
    graph.adjacency = {"A": {"B": 8, "C": 2}, "B": {"A": 8}, "C": {"A": 2}}
    wins = 0
    trials = 4000
    for i in range(trials):
        picks = sample_candidates(graph, {"A"}, tau=1, rng=np.random.default_rng(i))
        wins += picks[0][0] == "B"
    # P(first draw = B) = 0.8
    assert abs(wins / trials - 0.8) < 3 * np.sqrt(0.8 * 0.2 / trials)


def test_sample_exhaustive_when_tau_exceeds_degree():
    graph = build_graph([], make_catalog())
    graph.adjacency = {"A": {"B": 5, "C": 1, "D": 3}}
    picks = sample_candidates(graph, {"A"}, tau=10, rng=np.random.default_rng(0))
    assert sorted(p for p, _ in picks) == ["B", "C", "D"]
    assert all(share == pytest.approx(1 / 3) for _, share in picks)


def test_sample_absent_seed_contributes_nothing():
    graph = build_graph([], make_catalog())
    graph.adjacency = {"A": {"B": 1}}
    assert sample_candidates(graph, {"MISSING"}, tau=2, rng=np.random.default_rng(0)) == []


def exact_inclusion_probability(weights, m, target):
    """Enumerate all ordered draw sequences of size m without replacement."""
    names = sorted(weights)
    total_prob = 0.0
    for seq in itertools.permutations(names, m):
        prob = 1.0
        remaining = dict(weights)
        for pick in seq:
            prob *= remaining[pick] / sum(remaining.values())
            remaining.pop(pick)
        if target in seq:
            total_prob += prob
    return total_prob


def test_marginal_inclusion_matches_enumeration():
    weights = {"B": 5.0, "C": 2.0, "D": 1.0, "E": 2.0}
    graph = build_graph([], make_catalog())
    graph.adjacency = {"A": {k: int(v) for k, v in weights.items()}}
    m = 2
    trials = 4000
    counts = {k: 0 for k in weights}
    for i in range(trials):
        picks = sample_candidates(graph, {"A"}, tau=m, rng=np.random.default_rng(1000 + i))
        for p, _ in picks:
            counts[p] += 1
    for name in weights:
        p_exact = exact_inclusion_probability(weights, m, name)
        se = np.sqrt(p_exact * (1 - p_exact) / trials)
        assert abs(counts[name] / trials - p_exact) < 4 * se


def test_two_seeds_shared_neighbor_gets_extra_votes():
    # both seeds adjacent to D: expected vote share for D beats any
    # single-seed-only neighbor, checked against exact enumeration
    graph = build_graph([], make_catalog())
    graph.adjacency = {
        "A": {"D": 2, "B": 2},
        "C": {"D": 2, "E": 2},
        "D": {"A": 2, "C": 2},
        "B": {"A": 2},
        "E": {"C": 2},
    }
    trials = 10000
    votes = {"B": 0, "D": 0, "E": 0}
    for i in range(trials):
        picks = dict(sample_candidates(graph, {"A", "C"}, tau=1, rng=np.random.default_rng(i)))
        for name in votes:
            votes[name] += picks.get(name, 0.0)
    # exact: D expected share = P(A picks D)*0.5 + P(C picks D)*0.5 = 0.5,
    # B and E get 0.25 each
    assert votes["D"] / trials == pytest.approx(0.5, abs=0.02)
    assert votes["B"] / trials == pytest.approx(0.25, abs=0.02)


def test_prune_height_boundary():
    catalog = make_catalog(heights={"A": 230.0, "B": 231.0, "C": 230.0})
    result = prune([("B", 0.5), ("C", 0.5)], {"A"}, catalog)
    names = [p for p, _ in result.candidates]
    assert names == ["C"]          # 231 removed, 230 kept


def test_prune_all_taller_gives_empty_set():
    catalog = make_catalog(heights={"A": 100.0, "B": 150.0, "C": 160.0})
    result = prune([("B", 0.6), ("C", 0.4)], {"A"}, catalog)
    assert result.candidates == []


def test_prune_renormalizes_and_preserves_order():
    catalog = make_catalog(heights={"A": 200.0, "B": 100.0, "C": 300.0, "D": 100.0})
    result = prune([("B", 0.5), ("C", 0.3), ("D", 0.2)], {"A"}, catalog)
    shares = dict(result.candidates)
    assert shares["B"] == pytest.approx(0.714, abs=1e-3)
    assert shares["D"] == pytest.approx(0.286, abs=1e-3)
    assert [p for p, _ in result.candidates] == ["B", "D"]
    assert sum(shares.values()) == pytest.approx(1.0, abs=1e-9)


def test_prune_drops_seed_members_and_unknown_heights():
    catalog = make_catalog(heights={"A": 200.0, "B": 150.0})
    result = prune([("A", 0.5), ("B", 0.3), ("GHOST", 0.2)], {"A"}, catalog)
    assert [p for p, _ in result.candidates] == ["B"]
    assert result.dropped == ["GHOST"]


def test_generate_candidates_never_violates_invariants():
    rng = np.random.default_rng(12)
    heights = {p: float(rng.uniform(100, 300)) for p in "ABCDE"}
    catalog = make_catalog(heights=heights)
    states = [
        ("D1", TS, set(rng.choice(list("ABCDE"), size=3, replace=False)))
        for _ in range(30)
    ]
    graph = build_graph(states, catalog)
    seed = {"A", "B"}
    result = generate_candidates(graph, "D1", seed, catalog, tau=3, rng=rng)
    max_h = max(heights["A"], heights["B"])
    for p, share in result.candidates:
        assert p not in seed
        assert heights[p] <= max_h
        assert 0.0 <= share <= 1.0
    if result.candidates:
        assert sum(s for _, s in result.candidates) == pytest.approx(1.0, abs=1e-9)


def test_linear_build_cost_via_operation_counter():
    catalog = make_catalog()
    rng = np.random.default_rng(13)
    base = [
        ("D1", TS, set(rng.choice(list("ABCDE"), size=3, replace=False)))
        for _ in range(200)
    ]
    counts = []
    for mult in (2, 4, 8):
        graph = build_graph(base * mult, catalog)
        counts.append(graph.pair_increments)
    assert counts[1] / counts[0] == pytest.approx(2.0, rel=0.15)
    assert counts[2] / counts[1] == pytest.approx(2.0, rel=0.15)


def test_graph_csv_round_trip():
    catalog = make_catalog()
    graph = build_graph([("D1", TS, {"A", "B", "C"}), ("D2", TS, {"A", "B"})], catalog)
    text = graph_to_csv(graph)
    loaded = graph_from_csv(text)
    assert loaded.to_dict()["edges"] == graph.to_dict()["edges"]
