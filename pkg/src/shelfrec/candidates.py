"""Co-occurrence candidate generation.

Display states observed in the field are mined into a weighted product
graph partitioned by sub-category; candidates for a display are sampled
from the graph neighborhood of its current product set, weighted by edge
counts, then pruned to products that physically fit.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ingest import Product


@dataclass
class CoOccurrenceGraph:
    nodes: set[str] = field(default_factory=set)
    adjacency: dict[str, dict[str, int]] = field(default_factory=dict)
    build_timestamp: datetime | None = None
    source_log_count: int = 0
    dropped_unknown: int = 0
    pair_increments: int = 0  # operation counter for complexity checks

    def weight(self, a: str, b: str) -> int:
        return self.adjacency.get(a, {}).get(b, 0)

    def neighbors(self, product: str) -> list[tuple[str, int]]:
        return sorted(self.adjacency.get(product, {}).items())

    def to_dict(self) -> dict:
        edges = []
        for a in sorted(self.adjacency):
            for b, w in sorted(self.adjacency[a].items()):
                if a < b:
                    edges.append([a, b, w])
        return {
            "nodes": sorted(self.nodes),
            "edges": edges,
            "source_log_count": self.source_log_count,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CoOccurrenceGraph":
        graph = cls(nodes=set(data["nodes"]), source_log_count=data.get("source_log_count", 0))
        for a, b, w in data["edges"]:
            graph.adjacency.setdefault(a, {})[b] = int(w)
            graph.adjacency.setdefault(b, {})[a] = int(w)
        return graph


@dataclass
class CandidateSet:
    display_id: str
    candidates: list[tuple[str, float]]   # (product_id, vote_share), shares sum to 1
    seed: set[str] = field(default_factory=set)
    tau: int = 10
    dropped: list[str] = field(default_factory=list)

    @property
    def product_ids(self) -> list[str]:
        return [p for p, _ in self.candidates]

    def vote_share(self, product: str) -> float:
        for p, share in self.candidates:
            if p == product:
                return share
        return 0.0


def update_graph(
    graph: CoOccurrenceGraph,
    display_states: Iterable[tuple[str, datetime, Iterable[str]]],
    catalog: Mapping[str, Product] | Sequence[Product],
) -> CoOccurrenceGraph:
    """Fold display states into the graph in place (incremental refresh).

    Every unordered same-sub-category pair observed together on a display
    increments one symmetric edge weight. Products missing from the catalog
    are dropped and counted.
    """
    if not isinstance(catalog, Mapping):
        catalog = {p.product_id: p for p in catalog}
    for display_id, timestamp, products in display_states:
        graph.source_log_count += 1
        if graph.build_timestamp is None or timestamp > graph.build_timestamp:
            graph.build_timestamp = timestamp
        known = []
        for p in sorted(set(products)):
            if p in catalog:
                known.append(p)
            else:
                graph.dropped_unknown += 1
        for p in known:
            graph.nodes.add(p)
        for i, a in enumerate(known):
            for b in known[i + 1:]:
                if catalog[a].sub_category != catalog[b].sub_category:
                    continue
                graph.adjacency.setdefault(a, {})[b] = graph.adjacency.get(a, {}).get(b, 0) + 1
                graph.adjacency.setdefault(b, {})[a] = graph.adjacency.get(b, {}).get(a, 0) + 1
                graph.pair_increments += 1
    return graph


def build_graph(
    display_states: Iterable[tuple[str, datetime, Iterable[str]]],
    catalog: Mapping[str, Product] | Sequence[Product],
) -> CoOccurrenceGraph:
    """Full rebuild from a display-state log."""
    return update_graph(CoOccurrenceGraph(), display_states, catalog)


def sample_candidates(
    graph: CoOccurrenceGraph,
    seed: Iterable[str],
    tau: int = 10,
    rng: np.random.Generator | int | None = None,
) -> list[tuple[str, float]]:
    """Sample tau neighbors per seed product, proportional to edge weight,
    without replacement; votes are summed across seeds and normalized.

    Seed products absent from the graph contribute nothing. Returns
    (product, vote_share) pairs sorted by share descending then id.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    votes: dict[str, int] = {}
    for seed_product in sorted(set(seed)):
        neighbors = graph.neighbors(seed_product)
        if not neighbors:
            continue
        names = [n for n, _ in neighbors]
        weights = np.array([w for _, w in neighbors], dtype=float)
        n_draws = min(tau, len(names))
        remaining = weights.copy()
        chosen: list[int] = []
        for _ in range(n_draws):
            total = remaining.sum()
            if total <= 0:
                break
            pick = int(rng.choice(len(names), p=remaining / total))
            chosen.append(pick)
            remaining[pick] = 0.0
        for pick in chosen:
            votes[names[pick]] = votes.get(names[pick], 0) + 1
    total_votes = sum(votes.values())
    if total_votes == 0:
        return []
    shares = [(p, votes[p] / total_votes) for p in votes]
    return sorted(shares, key=lambda item: (-item[1], item[0]))


def prune(
    candidates: Sequence[tuple[str, float]],
    seed: Iterable[str],
    catalog: Mapping[str, Product] | Sequence[Product],
    display_id: str = "",
    tau: int = 10,
) -> CandidateSet:
    """Drop candidates taller than the tallest seed product (equal heights
    survive), drop anything already in the seed, renormalize vote shares."""
    if not isinstance(catalog, Mapping):
        catalog = {p.product_id: p for p in catalog}
    seed = set(seed)
    heights = [catalog[p].height_mm for p in seed if p in catalog]
    max_height = max(heights) if heights else float("inf")
    kept: list[tuple[str, float]] = []
    dropped: list[str] = []
    for product, share in candidates:
        if product in seed:
            continue
        info = catalog.get(product)
        if info is None:
            dropped.append(product)
            continue
        if info.height_mm > max_height:
            continue
        kept.append((product, share))
    total = sum(share for _, share in kept)
    if total > 0:
        kept = [(p, share / total) for p, share in kept]
    return CandidateSet(display_id=display_id, candidates=kept, seed=seed, tau=tau, dropped=dropped)


def generate_candidates(
    graph: CoOccurrenceGraph,
    display_id: str,
    seed: Iterable[str],
    catalog,
    tau: int = 10,
    rng: np.random.Generator | int | None = None,
) -> CandidateSet:
    """Sample then prune in one step for a display's observed product set."""
    seed = set(seed)
    sampled = sample_candidates(graph, seed, tau=tau, rng=rng)
    return prune(sampled, seed, catalog, display_id=display_id, tau=tau)


GRAPH_HEADER = ["product_a", "product_b", "weight"]
CANDIDATE_HEADER = ["display_id", "product_id", "vote_share"]


def graph_to_csv(graph: CoOccurrenceGraph) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(GRAPH_HEADER)
    for a, b, w in graph.to_dict()["edges"]:
        writer.writerow([a, b, w])
    return buf.getvalue()


def graph_from_csv(source) -> CoOccurrenceGraph:
    if isinstance(source, str) and "\n" in source:
        source = io.StringIO(source)
        reader = csv.DictReader(source)
        rows = list(reader)
    else:
        with open(source, newline="") as fh:
            rows = list(csv.DictReader(fh))
    graph = CoOccurrenceGraph()
    for row in rows:
        a, b, w = row["product_a"], row["product_b"], int(row["weight"])
        graph.nodes.update((a, b))
        graph.adjacency.setdefault(a, {})[b] = w
        graph.adjacency.setdefault(b, {})[a] = w
    return graph


def candidates_to_csv(sets: Iterable[CandidateSet]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CANDIDATE_HEADER)
    for cs in sets:
        for product, share in cs.candidates:
            writer.writerow([cs.display_id, product, repr(share)])
    return buf.getvalue()
