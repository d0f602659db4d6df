import math
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from shelfrec.evaluation import (
    LoggedInteraction,
    PanelRow,
    compliance,
    did_analysis,
    did_estimate,
    logs_from_csv,
    logs_to_csv,
    panel_from_csv,
    panel_to_csv,
    percent_did,
    permutation_test,
    replay_evaluate,
)
from shelfrec.search import DisplayState

T0 = datetime(2022, 9, 21, tzinfo=timezone.utc)


def event(display, chosen, reward, offered=("a", "b", "c"), i=0):
    return LoggedInteraction(
        display_id=display,
        timestamp=T0 + timedelta(hours=i),
        offered_state=DisplayState(display, "S1", {p: 1 for p in offered}, 8),
        chosen_assignment={p: 1 for p in chosen},
        observed_reward=reward,
    )


def test_replay_credits_matching_events():
    logs = [
        event("D1", ("a",), 1.0, i=0),
        event("D1", ("b",), 9.0, i=1),
        event("D1", ("a",), 3.0, i=2),
    ]
    policy = lambda state, cand: {"a": 1}
    report = replay_evaluate(policy, logs, subsample=1.0, seed=0)
    assert report.matched_count == 2
    assert report.total_count == 3
    assert report.mean_reward == pytest.approx(2.0)


def test_replay_identity_policy_matches_everything():
    logs = [event("D1", ("a", "b"), 0.5 * i, i=i) for i in range(10)]
    policy = lambda state, cand: {"a": 2, "b": 1}  # quantities ignored
    report = replay_evaluate(policy, logs, subsample=1.0, seed=0)
    assert report.matched_count == report.total_count == 10
    assert report.mean_reward == pytest.approx(np.mean([0.5 * i for i in range(10)]))


def test_replay_zero_matches_flagged_not_raised():
    logs = [event("D1", ("a",), 1.0)]
    policy = lambda state, cand: {"zzz": 1}
    report = replay_evaluate(policy, logs, subsample=1.0, seed=0)
    assert report.matched_count == 0
    assert report.undefined_stats
    assert math.isnan(report.mean_reward)


def test_replay_match_fraction_binomial():
    rng = np.random.default_rng(0)
    products = [f"p{i}" for i in range(10)]
    logs = [
        event("D1", (products[int(rng.integers(10))],), 1.0, offered=products, i=i)
        for i in range(10000)
    ]
    policy = lambda state, cand: {"p0": 1}
    report = replay_evaluate(policy, logs, subsample=1.0, seed=1)
    p_hat = report.matched_count / report.total_count
    assert abs(p_hat - 0.1) < 3 * math.sqrt(0.1 * 0.9 / 10000)


def test_replay_subsample_determinism():
    logs = [event("D1", ("a",), float(i), i=i) for i in range(100)]
    policy = lambda state, cand: {"a": 1}
    a = replay_evaluate(policy, logs, subsample=0.5, seed=7)
    b = replay_evaluate(policy, logs, subsample=0.5, seed=7)
    assert a.mean_reward == b.mean_reward
    assert a.total_count == 50


def test_replay_jaccard_threshold_rule():
    logs = [event("D1", ("a", "b", "c"), 2.0)]
    policy = lambda state, cand: {"a": 1, "b": 1, "d": 1}  # jaccard 0.5
    exact = replay_evaluate(policy, logs, subsample=1.0, seed=0)
    fuzzy = replay_evaluate(policy, logs, subsample=1.0, seed=0,
                            match_rule="jaccard-threshold", theta=0.5)
    assert exact.matched_count == 0
    assert fuzzy.matched_count == 1


def test_compliance_examples():
    assert compliance({"a", "b", "c"}, {"b", "c", "d"}) == pytest.approx(0.5)
    assert compliance({"a"}, {"a"}) == 1.0
    assert compliance({"a"}, {"b"}) == 0.0
    assert compliance(set(), set()) == 1.0


def test_compliance_symmetric_and_bounded():
    rng = np.random.default_rng(1)
    universe = list("abcdefgh")
    for _ in range(100):
        x = set(rng.choice(universe, size=rng.integers(0, 6), replace=False))
        y = set(rng.choice(universe, size=rng.integers(0, 6), replace=False))
        j = compliance(x, y)
        assert j == compliance(y, x)
        assert 0.0 <= j <= 1.0
        assert (j == 1.0) == (x == y)


def cells_panel(pre_t, post_t, pre_c, post_c):
    rows = []
    for i, v in enumerate(pre_t):
        rows.append(PanelRow(f"t{i}", "treat", "pre", v))
    for i, v in enumerate(post_t):
        rows.append(PanelRow(f"t{i}", "treat", "post", v))
    for i, v in enumerate(pre_c):
        rows.append(PanelRow(f"c{i}", "control", "pre", v))
    for i, v in enumerate(post_c):
        rows.append(PanelRow(f"c{i}", "control", "post", v))
    return rows


def test_did_units_match_published_experiment_one():
    report = did_estimate(cells_panel([5.82], [6.77], [5.40], [4.40]))
    assert report.did_units == pytest.approx(1.95, abs=1e-9)


def test_did_units_match_published_experiment_two():
    report = did_estimate(cells_panel([9.50], [10.74], [12.74], [10.86]))
    assert report.did_units == pytest.approx(3.12, abs=1e-9)


def test_percent_form_combines_group_changes():
    assert percent_did(16.42, -18.61) == pytest.approx(35.03)
    assert percent_did(13.02, -14.76) == pytest.approx(27.78)


def test_did_percent_consistency():
    report = did_estimate(cells_panel([5.82], [6.77], [5.40], [4.40]))
    assert report.did_percent == pytest.approx(
        percent_did(report.treat_pct_change, report.control_pct_change)
    )


def test_did_identical_groups_zero():
    report = did_estimate(cells_panel([5.0, 6.0], [5.5, 6.5], [5.0, 6.0], [5.5, 6.5]))
    assert report.did_units == pytest.approx(0.0)


def test_did_empty_cell_rejected():
    rows = cells_panel([5.0], [5.5], [4.0], [4.5])
    rows = [r for r in rows if not (r.group == "control" and r.period == "post")]
    with pytest.raises(ValueError, match="control/post"):
        did_estimate(rows)


def null_panel(rng, n_units=10, effect=0.0, noise=1.0):
    rows = []
    for i in range(n_units):
        group = "treat" if i < n_units // 2 else "control"
        base = rng.normal(5.0, noise)
        lift = effect if group == "treat" else 0.0
        rows.append(PanelRow(f"u{i}", group, "pre", base + rng.normal(0, noise)))
        rows.append(PanelRow(f"u{i}", group, "post", base + lift + rng.normal(0, noise)))
    return rows


def test_permutation_constant_panel_p_one():
    rows = cells_panel([5.0, 5.0], [5.0, 5.0], [5.0, 5.0], [5.0, 5.0])
    assert permutation_test(rows, n_permutations=200, seed=0) == 1.0


def test_permutation_strong_effect_significant():
    rng = np.random.default_rng(2)
    rows = null_panel(rng, n_units=20, effect=10.0, noise=1.0)
    p = permutation_test(rows, n_permutations=400, seed=1)
    assert p < 0.01


def test_permutation_determinism_and_unit_relabeling():
    rng = np.random.default_rng(3)
    rows = null_panel(rng, n_units=12, effect=2.0)
    p1 = permutation_test(rows, n_permutations=300, seed=5)
    p2 = permutation_test(rows, n_permutations=300, seed=5)
    assert p1 == p2
    relabeled = [PanelRow("x" + r.unit_id, r.group, r.period, r.value) for r in rows]
    assert permutation_test(relabeled, n_permutations=300, seed=5) == p1


def test_permutation_requires_two_units_per_group():
    rows = cells_panel([5.0], [5.5], [4.0, 4.2], [4.5, 4.4])
    with pytest.raises(ValueError):
        permutation_test(rows, n_permutations=200, seed=0)


def test_permutation_rejects_unit_in_both_groups():
    rows = [
        PanelRow("u1", "treat", "pre", 1.0), PanelRow("u1", "control", "post", 1.0),
        PanelRow("u2", "treat", "pre", 1.0), PanelRow("u2", "treat", "post", 1.0),
        PanelRow("u3", "control", "pre", 1.0), PanelRow("u3", "control", "post", 1.0),
    ]
    with pytest.raises(ValueError, match="u1"):
        permutation_test(rows, n_permutations=200, seed=0)


def test_did_analysis_combines():
    rng = np.random.default_rng(4)
    rows = null_panel(rng, n_units=12, effect=3.0)
    report = did_analysis(rows, n_permutations=300, seed=2)
    assert report.p_value is not None
    assert report.n_permutations == 300


def test_logs_and_panel_csv_round_trips():
    logs = [event("D1", ("a", "b"), 2.5, i=0), event("D2", ("c",), 0.0, i=1)]
    text = logs_to_csv(logs)
    loaded = logs_from_csv(text, capacity=8)
    assert [e.chosen_assignment for e in loaded] == [
        dict(e.chosen_assignment) for e in logs
    ]
    assert [e.observed_reward for e in loaded] == [e.observed_reward for e in logs]

    rows = cells_panel([5.82], [6.77], [5.40], [4.40])
    assert panel_from_csv(panel_to_csv(rows)) == rows
