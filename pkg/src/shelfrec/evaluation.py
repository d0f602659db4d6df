"""Offline policy evaluation and field-result analysis.

The replay evaluator credits a logged interaction's reward only when the
candidate policy reproduces the logged action; with an iid uniform logging
policy the credited mean is an unbiased value estimate. Compliance between
recommended and observed product sets is their Jaccard index. Treatment
effects come from a two-by-two difference-in-difference with a unit-level
permutation test for significance.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import datetime
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .candidates import CandidateSet
from .ingest import format_timestamp, parse_timestamp
from .search import DisplayState

LOGS_HEADER = [
    "display_id", "timestamp", "offered_products",
    "chosen_products", "chosen_quantities", "reward",
]
PANEL_HEADER = ["unit_id", "group", "period", "value"]


@dataclass(frozen=True)
class LoggedInteraction:
    display_id: str
    timestamp: datetime
    offered_state: DisplayState
    chosen_assignment: Mapping[str, int]
    observed_reward: float

    def chosen_set(self) -> frozenset[str]:
        return frozenset(self.chosen_assignment)


@dataclass
class ReplayReport:
    mean_reward: float
    median_reward: float
    std_reward: float
    matched_count: int
    total_count: int
    subsample_fraction: float
    seed: int
    undefined_stats: bool = False
    credited_rewards: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mean_reward": self.mean_reward,
            "median_reward": self.median_reward,
            "std_reward": self.std_reward,
            "matched_count": self.matched_count,
            "total_count": self.total_count,
            "subsample_fraction": self.subsample_fraction,
            "seed": self.seed,
            "undefined_stats": self.undefined_stats,
        }


def compliance(recommended: Iterable[str], observed: Iterable[str]) -> float:
    """Jaccard index of the two product sets; two empty sets agree fully."""
    rec = set(recommended)
    obs = set(observed)
    union = rec | obs
    if not union:
        return 1.0
    return len(rec & obs) / len(union)


def _matches(policy_set: frozenset, logged_set: frozenset, rule: str, theta: float) -> bool:
    if rule == "exact-set":
        return policy_set == logged_set
    if rule == "jaccard-threshold":
        return compliance(policy_set, logged_set) >= theta
    raise ValueError(f"unknown match rule {rule!r}")


def replay_evaluate(
    policy: Callable[[DisplayState, CandidateSet | None], Mapping[str, int]],
    logs: Sequence[LoggedInteraction],
    subsample: float = 0.5,
    match_rule: str = "exact-set",
    seed: int = 0,
    theta: float = 0.5,
    candidate_lookup: Callable[[str], CandidateSet | None] | None = None,
) -> ReplayReport:
    """Replay-evaluate a policy against logged interactions.

    A uniform subsample of the logs is retained (default half, to loosen
    temporal dependence); each retained event queries the policy on its
    offered state and credits the logged reward when the policy's product
    set matches the logged set under the match rule. Zero matches yields a
    flagged report, not an exception.
    """
    if not 0.0 < subsample <= 1.0:
        raise ValueError("subsample must be in (0, 1]")
    rng = np.random.default_rng(seed)
    n = len(logs)
    keep = max(1, round(n * subsample)) if n else 0
    if keep < n:
        idx = np.sort(rng.choice(n, size=keep, replace=False))
    else:
        idx = np.arange(n)

    rewards = []
    for i in idx:
        event = logs[int(i)]
        cand = candidate_lookup(event.display_id) if candidate_lookup else None
        action = policy(event.offered_state, cand)
        if _matches(frozenset(action), event.chosen_set(), match_rule, theta):
            rewards.append(event.observed_reward)

    if not rewards:
        return ReplayReport(
            mean_reward=math.nan,
            median_reward=math.nan,
            std_reward=math.nan,
            matched_count=0,
            total_count=int(len(idx)),
            subsample_fraction=subsample,
            seed=seed,
            undefined_stats=True,
        )
    arr = np.asarray(rewards, dtype=float)
    return ReplayReport(
        mean_reward=float(arr.mean()),
        median_reward=float(np.median(arr)),
        std_reward=float(arr.std()),
        matched_count=len(rewards),
        total_count=int(len(idx)),
        subsample_fraction=subsample,
        seed=seed,
        credited_rewards=[float(r) for r in rewards],
    )


@dataclass(frozen=True)
class PanelRow:
    unit_id: str
    group: str    # treat | control
    period: str   # pre | post
    value: float


@dataclass
class DidReport:
    pre_treat: float
    post_treat: float
    pre_control: float
    post_control: float
    did_units: float
    did_percent: float
    treat_pct_change: float
    control_pct_change: float
    p_value: float | None = None
    n_permutations: int = 0

    def to_dict(self) -> dict:
        return {
            "pre_treat": self.pre_treat,
            "post_treat": self.post_treat,
            "pre_control": self.pre_control,
            "post_control": self.post_control,
            "did_units": self.did_units,
            "did_percent": self.did_percent,
            "treat_pct_change": self.treat_pct_change,
            "control_pct_change": self.control_pct_change,
            "p_value": self.p_value,
            "n_permutations": self.n_permutations,
        }


def percent_did(treat_pct_change: float, control_pct_change: float) -> float:
    """Percent-form effect: the treated group's percent change minus the
    control group's."""
    return treat_pct_change - control_pct_change


def _cell_means(panel: Sequence[PanelRow]) -> dict[tuple[str, str], float]:
    cells: dict[tuple[str, str], list[float]] = {}
    for row in panel:
        if row.group not in ("treat", "control") or row.period not in ("pre", "post"):
            raise ValueError(f"bad panel row: group={row.group!r} period={row.period!r}")
        cells.setdefault((row.group, row.period), []).append(row.value)
    for group in ("treat", "control"):
        for period in ("pre", "post"):
            if not cells.get((group, period)):
                raise ValueError(f"empty cell: {group}/{period}")
    return {key: float(np.mean(values)) for key, values in cells.items()}


def did_estimate(panel: Sequence[PanelRow]) -> DidReport:
    """Two-by-two difference-in-difference on cell means.

    Units effect: (post_treat - pre_treat) - (post_control - pre_control).
    Percent effect: treat percent change minus control percent change,
    each relative to its own pre mean.
    """
    means = _cell_means(panel)
    pre_t, post_t = means[("treat", "pre")], means[("treat", "post")]
    pre_c, post_c = means[("control", "pre")], means[("control", "post")]
    treat_pct = 100.0 * (post_t - pre_t) / pre_t if pre_t else math.nan
    control_pct = 100.0 * (post_c - pre_c) / pre_c if pre_c else math.nan
    return DidReport(
        pre_treat=pre_t,
        post_treat=post_t,
        pre_control=pre_c,
        post_control=post_c,
        did_units=(post_t - pre_t) - (post_c - pre_c),
        did_percent=percent_did(treat_pct, control_pct),
        treat_pct_change=treat_pct,
        control_pct_change=control_pct,
    )


def permutation_test(
    panel: Sequence[PanelRow],
    n_permutations: int = 10000,
    seed: int = 0,
) -> float:
    """Two-sided permutation p-value for the DID effect.

    Group labels are shuffled at the unit level (a display's pre and post
    rows travel together), the effect recomputed per shuffle, and the
    p-value is the smoothed fraction of permuted absolute effects at or
    above the observed one.
    """
    if n_permutations < 100:
        raise ValueError("at least 100 permutations are required")
    unit_group: dict[str, str] = {}
    for row in panel:
        prev = unit_group.setdefault(row.unit_id, row.group)
        if prev != row.group:
            raise ValueError(f"unit {row.unit_id} appears in both groups")
    units = sorted(unit_group)
    labels = [unit_group[u] for u in units]
    n_treat = sum(1 for g in labels if g == "treat")
    if n_treat < 2 or len(units) - n_treat < 2:
        raise ValueError("need at least 2 units per group")

    # aggregate once: per unit-period sums and counts
    sums: dict[tuple[str, str], float] = {}
    counts: dict[tuple[str, str], int] = {}
    for row in panel:
        key = (row.unit_id, row.period)
        sums[key] = sums.get(key, 0.0) + row.value
        counts[key] = counts.get(key, 0) + 1

    unit_idx = {u: i for i, u in enumerate(units)}
    pre_sum = np.zeros(len(units))
    pre_cnt = np.zeros(len(units))
    post_sum = np.zeros(len(units))
    post_cnt = np.zeros(len(units))
    for (unit, period), total in sums.items():
        i = unit_idx[unit]
        if period == "pre":
            pre_sum[i], pre_cnt[i] = total, counts[(unit, period)]
        else:
            post_sum[i], post_cnt[i] = total, counts[(unit, period)]

    def did_for(treat_mask: np.ndarray) -> float:
        def cell(mask, s, c):
            total_c = c[mask].sum()
            if total_c == 0:
                return math.nan
            return s[mask].sum() / total_c
        pre_t = cell(treat_mask, pre_sum, pre_cnt)
        post_t = cell(treat_mask, post_sum, post_cnt)
        pre_c = cell(~treat_mask, pre_sum, pre_cnt)
        post_c = cell(~treat_mask, post_sum, post_cnt)
        return (post_t - pre_t) - (post_c - pre_c)

    observed_mask = np.array([g == "treat" for g in labels])
    observed = did_for(observed_mask)

    rng = np.random.default_rng(seed)
    exceed = 0
    for _ in range(n_permutations):
        perm = rng.permutation(len(units))
        mask = np.zeros(len(units), dtype=bool)
        mask[perm[:n_treat]] = True
        if abs(did_for(mask)) >= abs(observed) - 1e-15:
            exceed += 1
    return (exceed + 1) / (n_permutations + 1)


def did_analysis(panel: Sequence[PanelRow], n_permutations: int = 10000, seed: int = 0) -> DidReport:
    """DID estimate plus permutation p-value in one report."""
    report = did_estimate(panel)
    report.p_value = permutation_test(panel, n_permutations=n_permutations, seed=seed)
    report.n_permutations = n_permutations
    return report


def logs_to_csv(logs: Iterable[LoggedInteraction]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOGS_HEADER)
    for event in logs:
        offered = "|".join(sorted(event.offered_state.slots))
        chosen = sorted(event.chosen_assignment)
        writer.writerow([
            event.display_id,
            format_timestamp(event.timestamp),
            offered,
            "|".join(chosen),
            "|".join(str(event.chosen_assignment[p]) for p in chosen),
            repr(event.observed_reward),
        ])
    return buf.getvalue()


def logs_from_csv(source, capacity: int = 10, store_id: str = "") -> list[LoggedInteraction]:
    """Read the logs CSV; offered states are rebuilt with unit quantities
    since the format only carries product lists."""
    if isinstance(source, str) and "\n" in source:
        rows = list(csv.DictReader(io.StringIO(source)))
    else:
        with open(source, newline="") as fh:
            rows = list(csv.DictReader(fh))
    logs = []
    for row in rows:
        offered = [p for p in row["offered_products"].split("|") if p]
        chosen = [p for p in row["chosen_products"].split("|") if p]
        quantities = [int(q) for q in row["chosen_quantities"].split("|") if q]
        logs.append(
            LoggedInteraction(
                display_id=row["display_id"],
                timestamp=parse_timestamp(row["timestamp"]),
                offered_state=DisplayState(
                    display_id=row["display_id"],
                    store_id=store_id,
                    slots={p: 1 for p in offered},
                    capacity=max(capacity, len(offered)),
                ),
                chosen_assignment=dict(zip(chosen, quantities)),
                observed_reward=float(row["reward"]),
            )
        )
    return logs


def panel_to_csv(panel: Iterable[PanelRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PANEL_HEADER)
    for row in panel:
        writer.writerow([row.unit_id, row.group, row.period, repr(row.value)])
    return buf.getvalue()


def panel_from_csv(source) -> list[PanelRow]:
    if isinstance(source, str) and "\n" in source:
        rows = list(csv.DictReader(io.StringIO(source)))
    else:
        with open(source, newline="") as fh:
            rows = list(csv.DictReader(fh))
    return [
        PanelRow(row["unit_id"], row["group"], row["period"], float(row["value"]))
        for row in rows
    ]
