"""Uncertainty-aware heuristic search over display assignments.

Each cycle decays the quantities of the lowest-scoring products on the
display, hands the freed slots to replacements drawn epsilon-greedily from
the candidate set, and refills the remaining budget with the incumbent
products in descending score order. Repeated selection halves a product's
quantity per hit until it leaves the display entirely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .candidates import CandidateSet
from .reward import PepfScore


def assortment_combinations(n_products: int, n_slots: int) -> int:
    """Number of multisets of n_slots drawn from n_products: C(p + m - 1, m)."""
    if n_products < 1 or n_slots < 0:
        raise ValueError("need at least one product and a non-negative slot count")
    return math.comb(n_products + n_slots - 1, n_slots)


def decay(t: int, q0: int) -> int:
    """Quantity after the t-th selection: floor(q0 / 2^t)."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if t >= q0.bit_length():
        return 0
    return q0 >> t


@dataclass(frozen=True)
class DisplayState:
    display_id: str
    store_id: str
    slots: Mapping[str, int]
    capacity: int

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if any(q < 1 for q in self.slots.values()):
            raise ValueError("slot quantities must be >= 1")

    @property
    def total(self) -> int:
        return sum(self.slots.values())


@dataclass
class SearchConfig:
    v: int = 2
    epsilon: float = 0.05
    lam: float = 1.0
    iterations: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if self.v < 1 or self.iterations < 1:
            raise ValueError("v and iterations must be >= 1")


@dataclass
class DecayState:
    """Per-product decay bookkeeping: selection count and first observed
    quantity. The first quantity anchors the halving schedule; entries drop
    when a product leaves the display, so re-entry restarts the schedule."""

    times_selected: dict[str, int] = field(default_factory=dict)
    first_quantity: dict[str, int] = field(default_factory=dict)

    def copy(self) -> "DecayState":
        return DecayState(dict(self.times_selected), dict(self.first_quantity))

    def to_dict(self) -> dict:
        return {
            p: [self.times_selected[p], self.first_quantity[p]]
            for p in sorted(self.times_selected)
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DecayState":
        state = cls()
        for p, (t, q0) in data.items():
            state.times_selected[p] = int(t)
            state.first_quantity[p] = int(q0)
        return state


@dataclass
class RecommendationSet:
    display_id: str
    assignment: dict[str, int]
    provenance: dict[str, str]            # kept | decayed | swapped-greedy | swapped-random
    pepf_table: dict[str, float]
    candidate_ids: frozenset[str] = frozenset()
    truncated: list[str] = field(default_factory=list)
    seed: int = 0

    @property
    def total(self) -> int:
        return sum(self.assignment.values())

    def to_dict(self) -> dict:
        return {
            "display_id": self.display_id,
            "assignment": {p: int(q) for p, q in sorted(self.assignment.items())},
            "provenance": {p: self.provenance[p] for p in sorted(self.provenance)},
            "pepf_table": {p: self.pepf_table[p] for p in sorted(self.pepf_table)},
            "candidate_ids": sorted(self.candidate_ids),
            "truncated": list(self.truncated),
            "seed": self.seed,
        }


def recommend(
    state: DisplayState,
    candidates: CandidateSet,
    scorer: Callable[[str, int], PepfScore],
    cfg: SearchConfig | None = None,
    decay_state: DecayState | None = None,
) -> tuple[RecommendationSet, DecayState]:
    """Produce a product-quantity recommendation for one display.

    Per iteration the v lowest-scoring display products are decayed one
    step each; every freed slot block goes to a replacement candidate
    (uniform-random with probability epsilon, else the best unused
    candidate). A greedy replacement scoring below its victim triggers a
    guarded no-op: the victim keeps its quantity and its decay step rolls
    back. The remaining budget is filled by incumbents in descending score
    at their current quantities; anything past the budget is truncated from
    the low-score end and reported. Ties break by candidate vote share,
    then product id. Deterministic given the config seed.
    """
    cfg = cfg or SearchConfig()
    decay_in = decay_state.copy() if decay_state else DecayState()
    rng = np.random.default_rng(cfg.seed)

    if state.total > state.capacity:
        raise ValueError(
            f"display {state.display_id} holds {state.total} units over capacity {state.capacity}"
        )

    vote = {p: candidates.vote_share(p) for p in candidates.product_ids}
    scores: dict[str, float] = {}
    for product in sorted(set(state.slots) | set(candidates.product_ids)):
        scores[product] = scorer(product, 1).pepf

    def ascending_key(p: str):
        return (scores[p], vote.get(p, 0.0), p)

    def descending_key(p: str):
        return (-scores[p], -vote.get(p, 0.0), p)

    working = dict(state.slots)
    provenance = {p: "kept" for p in working}
    swapped_in: dict[str, int] = {}
    truncated: list[str] = []

    for _ in range(cfg.iterations):
        victims = sorted(working, key=ascending_key)[: cfg.v]
        for victim in victims:
            cur_q = working[victim]
            tracked_q0 = decay_in.first_quantity.get(victim)
            if tracked_q0 is None or cur_q > tracked_q0:
                q0, t_prev = cur_q, 0
            else:
                q0, t_prev = tracked_q0, decay_in.times_selected[victim]
            new_q = min(decay(t_prev + 1, q0), cur_q)
            freed = cur_q - new_q

            unused = [
                p for p in candidates.product_ids
                if p not in working and p not in swapped_in
            ]
            replacement = None
            how = None
            if unused:
                if rng.random() < cfg.epsilon:
                    replacement = unused[int(rng.integers(len(unused)))]
                    how = "swapped-random"
                else:
                    best = min(unused, key=descending_key)
                    if scores[best] >= scores[victim]:
                        replacement = best
                        how = "swapped-greedy"
                    else:
                        # guarded no-op: every candidate scores below the
                        # victim, so the freed quantity returns to it and
                        # the decay step is rolled back
                        continue
            # empty candidate pool: decay still applies and the freed
            # slots flow back to the budget for the fill stage
            decay_in.times_selected[victim] = t_prev + 1
            decay_in.first_quantity[victim] = q0
            if new_q >= 1:
                working[victim] = new_q
                provenance[victim] = "decayed"
            else:
                working.pop(victim)
                provenance.pop(victim, None)
            if replacement is not None and freed >= 1:
                swapped_in[replacement] = freed
                provenance[replacement] = how

    budget = state.capacity - sum(swapped_in.values())
    assignment = dict(swapped_in)
    for product in sorted(working, key=descending_key):
        if budget <= 0:
            truncated.append(product)
            continue
        take = min(working[product], budget)
        if take < working[product]:
            truncated.append(product)
        if take >= 1:
            assignment[product] = take
            budget -= take

    provenance = {p: provenance[p] for p in assignment}
    decay_out = DecayState(
        {p: t for p, t in decay_in.times_selected.items() if p in assignment},
        {p: q for p, q in decay_in.first_quantity.items() if p in assignment},
    )
    rec = RecommendationSet(
        display_id=state.display_id,
        assignment=assignment,
        provenance=provenance,
        pepf_table=dict(scores),
        candidate_ids=frozenset(candidates.product_ids),
        truncated=truncated,
        seed=cfg.seed,
    )
    return rec, decay_out


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list[Check]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]


def validate(
    rec: RecommendationSet,
    state: DisplayState,
    catalog=None,
    candidates: CandidateSet | None = None,
) -> ValidationReport:
    """Report-only checks: budget, positivity, swap provenance, height fit."""
    checks = []
    total = rec.total
    checks.append(
        Check(
            "budget",
            total <= state.capacity,
            "" if total <= state.capacity else f"overflow by {total - state.capacity}",
        )
    )
    nonpositive = sorted(p for p, q in rec.assignment.items() if q < 1)
    checks.append(Check("positivity", not nonpositive, ",".join(nonpositive)))

    allowed = frozenset(candidates.product_ids) if candidates is not None else rec.candidate_ids
    swapped = sorted(
        p for p, how in rec.provenance.items() if how.startswith("swapped")
    )
    outsiders = [p for p in swapped if p not in allowed]
    checks.append(Check("provenance", not outsiders, ",".join(outsiders)))

    if catalog is not None:
        if not isinstance(catalog, Mapping):
            catalog = {p.product_id: p for p in catalog}
        heights = [catalog[p].height_mm for p in state.slots if p in catalog]
        max_height = max(heights) if heights else float("inf")
        too_tall = [
            p for p in swapped if p in catalog and catalog[p].height_mm > max_height
        ]
        checks.append(Check("height", not too_tall, ",".join(too_tall)))
    return ValidationReport(checks)
