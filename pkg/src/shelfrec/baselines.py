"""Classical assortment policies benchmarked against the full pipeline.

All baselines consume the same derived sales history and candidate sets
the pipeline sees; they differ only in how they value products and search
the assignment space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ingest import SalesRecord


@dataclass
class PointEstimateModel:
    """Per-facing least-squares payoff estimates at store, cluster, and
    global levels, with fallbacks store -> cluster -> global -> grand mean."""

    store_beta: dict[tuple[str, str], float] = field(default_factory=dict)
    cluster_beta: dict[tuple[str, int], float] = field(default_factory=dict)
    global_beta: dict[str, float] = field(default_factory=dict)
    store_mean: dict[str, float] = field(default_factory=dict)
    grand_mean: float = 0.0

    @classmethod
    def fit(cls, records: Iterable[SalesRecord], store_cluster: Mapping[str, int]) -> "PointEstimateModel":
        sums: dict[tuple, tuple[float, float]] = {}

        def add(key, q, r):
            qr, qq = sums.get(key, (0.0, 0.0))
            sums[key] = (qr + q * r, qq + q * q)

        for rec in records:
            q, r = float(rec.quantity_faced), float(rec.units_sold)
            add(("s", rec.product_id, rec.store_id), q, r)
            add(("c", rec.product_id, store_cluster.get(rec.store_id, 0)), q, r)
            add(("g", rec.product_id), q, r)

        model = cls()
        store_totals: dict[str, list[float]] = {}
        for key, (qr, qq) in sums.items():
            beta = qr / qq if qq > 0 else 0.0
            if key[0] == "s":
                model.store_beta[(key[1], key[2])] = beta
                store_totals.setdefault(key[2], []).append(beta)
            elif key[0] == "c":
                model.cluster_beta[(key[1], key[2])] = beta
            else:
                model.global_beta[key[1]] = beta
        model.store_mean = {s: float(np.mean(v)) for s, v in store_totals.items()}
        model.grand_mean = (
            float(np.mean(list(model.global_beta.values()))) if model.global_beta else 0.0
        )
        return model

    def beta(self, product: str, store: str, cluster: int | None = None, level: str = "store") -> float:
        if level == "store":
            got = self.store_beta.get((product, store))
            if got is not None:
                return got
            if cluster is not None:
                got = self.cluster_beta.get((product, cluster))
                if got is not None:
                    return got
            got = self.global_beta.get(product)
            if got is not None:
                return got
            return self.store_mean.get(store, self.grand_mean)
        if level == "cluster":
            got = self.cluster_beta.get((product, cluster))
            return got if got is not None else self.global_beta.get(product, self.grand_mean)
        return self.global_beta.get(product, self.grand_mean)

    def value(self, product: str, store: str, quantity: int, cluster: int | None = None, level: str = "store") -> float:
        return quantity * self.beta(product, store, cluster=cluster, level=level)


def epsilon_greedy_assignment(
    values: Mapping[str, float],
    n_select: int,
    quantity_each: int,
    epsilon: float,
    rng: np.random.Generator,
) -> dict[str, int]:
    """Pick n_select products one at a time: uniform random with probability
    epsilon, otherwise the best remaining point estimate."""
    remaining = sorted(values)
    chosen: list[str] = []
    for _ in range(min(n_select, len(remaining))):
        if rng.random() < epsilon:
            pick = remaining[int(rng.integers(len(remaining)))]
        else:
            pick = max(remaining, key=lambda p: (values[p], p))
        chosen.append(pick)
        remaining.remove(pick)
    return {p: quantity_each for p in chosen}


@dataclass
class GeneticResult:
    assignment: dict[str, int]
    best_fitness: float
    history: list[float]


def genetic_assignment(
    values: Mapping[str, float],
    n_select: int,
    quantity_each: int,
    rng: np.random.Generator,
    population: int = 50,
    generations: int = 20,
    crossover_rate: float = 0.7,
    random_rate: float = 0.3,
    mutation_rate: float = 0.1,
) -> GeneticResult:
    """Small genetic search over fixed-size product subsets.

    Each generation fills the population with crossovers of
    tournament-selected parents (a fraction `crossover_rate` of pairings)
    and fresh random subsets the rest of the time; children may mutate one
    member. Fitness is the summed point-estimate value; the best subset
    ever seen is tracked and returned.
    """
    pool = sorted(values)
    n_select = min(n_select, len(pool))

    def random_subset() -> tuple[str, ...]:
        picks = rng.choice(len(pool), size=n_select, replace=False)
        return tuple(sorted(pool[i] for i in picks))

    def fitness(subset: tuple[str, ...]) -> float:
        return sum(quantity_each * values[p] for p in subset)

    def crossover(a: tuple[str, ...], b: tuple[str, ...]) -> tuple[str, ...]:
        union = sorted(set(a) | set(b))
        picks = rng.choice(len(union), size=min(n_select, len(union)), replace=False)
        child = [union[i] for i in picks]
        while len(child) < n_select:
            extra = pool[int(rng.integers(len(pool)))]
            if extra not in child:
                child.append(extra)
        return tuple(sorted(child))

    def mutate(subset: tuple[str, ...]) -> tuple[str, ...]:
        if rng.random() >= mutation_rate or not pool:
            return subset
        out = list(subset)
        slot = int(rng.integers(len(out)))
        swap = pool[int(rng.integers(len(pool)))]
        if swap not in out:
            out[slot] = swap
        return tuple(sorted(out))

    pop = [random_subset() for _ in range(max(1, population))]
    best = max(pop, key=fitness)
    best_fit = fitness(best)
    history = [best_fit]

    for _ in range(generations):
        scored = sorted(pop, key=fitness, reverse=True)
        parents = scored[: max(2, len(scored) // 2)] + [best]

        def tournament() -> tuple[str, ...]:
            i, j = rng.integers(len(parents)), rng.integers(len(parents))
            a, b = parents[int(i)], parents[int(j)]
            return a if fitness(a) >= fitness(b) else b

        nxt = []
        for _ in range(len(pop)):
            if rng.random() < random_rate:
                child = random_subset()
            elif rng.random() < crossover_rate:
                child = mutate(crossover(tournament(), tournament()))
            else:
                child = mutate(tournament())
            nxt.append(child)
        pop = nxt
        gen_best = max(pop, key=fitness)
        if fitness(gen_best) > best_fit:
            best, best_fit = gen_best, fitness(gen_best)
        history.append(best_fit)

    return GeneticResult({p: quantity_each for p in best}, best_fit, history)


def dp_knapsack(
    marginal_values: Mapping[str, Sequence[float]],
    capacity: int,
) -> dict[str, int]:
    """Exact integer allocation for per-facing marginal value tables.

    Each product's table gives the extra value of its 1st, 2nd, ... facing;
    tables are sorted non-increasing first (enforcing concavity), then a
    classic bounded-knapsack table maximizes total value within capacity.
    """
    if capacity < 0:
        raise ValueError("capacity must be non-negative")
    products = sorted(marginal_values)
    tables = {
        p: sorted((float(v) for v in marginal_values[p]), reverse=True)[:capacity]
        for p in products
    }
    n = len(products)
    value = np.zeros((n + 1, capacity + 1))
    choice = np.zeros((n + 1, capacity + 1), dtype=int)
    for i, p in enumerate(products, start=1):
        cum = np.concatenate([[0.0], np.cumsum(tables[p])])
        for cap in range(capacity + 1):
            best_v, best_q = value[i - 1, cap], 0
            for q in range(1, min(len(cum) - 1, cap) + 1):
                v = value[i - 1, cap - q] + cum[q]
                if v > best_v + 1e-12:
                    best_v, best_q = v, q
            value[i, cap] = best_v
            choice[i, cap] = best_q
    out: dict[str, int] = {}
    cap = capacity
    for i in range(n, 0, -1):
        q = int(choice[i, cap])
        if q > 0:
            out[products[i - 1]] = q
            cap -= q
    return out


def lp_relax_greedy(
    per_facing_value: Mapping[str, float],
    capacity: int,
    caps: Mapping[str, int] | None = None,
) -> dict[str, int]:
    """Fractional relaxation solved greedily by value density, then floored.

    Products are filled in density order up to their cap (default: the
    whole budget); the final fractional quantity is floored, which may
    leave slots unassigned, the usual rounding cost of the relaxation.
    """
    if capacity < 0:
        raise ValueError("capacity must be non-negative")
    order = sorted(per_facing_value, key=lambda p: (-per_facing_value[p], p))
    out: dict[str, int] = {}
    left = float(capacity)
    for p in order:
        if left <= 0 or per_facing_value[p] <= 0:
            break
        cap = caps.get(p, capacity) if caps else capacity
        take = int(min(left, cap))
        if take >= 1:
            out[p] = take
            left -= take
    return out
