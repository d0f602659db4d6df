"""Synthetic retail worlds for desk-scale benchmarking.

A world plants demographic clusters (tracts and stores), a product catalog
with per-cluster payoff coefficients jittered per store, and displays with
fixed slot menus for logging. Stepping the world realizes Gamma demand
against stocked units and emits the same noisy count snapshots a vision
system would produce, so the whole pipeline can be exercised end to end
with known ground truth.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Iterable, Mapping

import numpy as np

from .ingest import Product, ScanEvent, Phase, Tract

EPOCH = datetime(2022, 5, 17, 6, 0, tzinfo=timezone.utc)


@dataclass
class WorldConfig:
    n_clusters: int = 2
    stores_per_cluster: int = 5
    tracts_per_cluster: int = 8
    displays_per_store: int = 2
    core_products_per_subcat: int = 6
    new_products_per_subcat: int = 3
    sub_categories: tuple[str, ...] = ("Sparkling", "Energy")
    n_demographics: int = 30
    capacity: int = 6
    depth: int = 3
    selection_size: int = 3
    demographic_separation: float = 6.0
    demographic_within_sd: float = 1.0
    beta_low: float = 0.5
    beta_high: float = 1.0
    # store-level preference departures from the cluster norm; the payoff
    # model's hierarchy exists to capture exactly this. Departures are
    # clipped at store_jitter_clip times the scale to bound store values.
    store_jitter: float = 0.42
    store_jitter_clip: float = 1.3
    sigma_low: float = 0.5
    sigma_high: float = 0.65
    vision_noise_sd: float = 0.113
    # occasional gross under-counts on shopped (pre-scan) displays from
    # occlusion; rare enough to leave the median percentage error alone but
    # heavy enough to contaminate naive point estimates with sales spikes
    count_glitch_prob: float = 0.0
    count_glitch_factor: float = 0.12
    n_network_states: int = 40

    def __post_init__(self):
        if min(self.n_clusters, self.stores_per_cluster, self.tracts_per_cluster,
               self.displays_per_store, self.core_products_per_subcat,
               self.capacity, self.depth, self.n_demographics) < 1:
            raise ValueError("world counts and sizes must be positive")
        if self.n_clusters > self.n_clusters * self.stores_per_cluster:
            raise ValueError("cluster count exceeds store count")
        if self.selection_size > self.core_products_per_subcat:
            raise ValueError("selection size exceeds display pool")
        if self.capacity % self.selection_size != 0:
            raise ValueError("capacity must divide evenly across the selection size")
        if not 0.0 < self.beta_low <= self.beta_high:
            raise ValueError("payoff coefficient range must be positive")
        if self.vision_noise_sd < 0.0:
            raise ValueError("vision noise sd must be non-negative")


@dataclass
class DisplayInfo:
    display_id: str
    store_id: str
    sub_category: str
    capacity: int
    pool: list[str]          # core products offered on this display
    new_pool: list[str]      # later-introduced products, no sales history
    hole: str                # pool product never stocked here during logging
    logging_menu: list[dict[str, int]]
    eval_menu: list[dict[str, int]]


@dataclass
class SyntheticWorld:
    config: WorldConfig
    seed: int
    stores: list[tuple[str, float, float]]
    store_cluster: dict[str, int]
    store_profiles_true: dict[str, np.ndarray]
    tracts: list[Tract]
    catalog: list[Product]
    core_products: list[str]
    new_products: list[str]
    displays: list[DisplayInfo]
    beta_true: dict[tuple[str, str], float]     # (product, store) -> coefficient
    beta_cluster_true: dict[tuple[str, int], float]
    sigma_true: dict[str, float]
    network_states: list[tuple[str, datetime, frozenset]]
    rng: np.random.Generator = field(repr=False, default=None)
    # mutable simulation channel state
    clock: datetime = EPOCH
    visit_index: dict[str, int] = field(default_factory=dict)
    stocked: dict[str, dict[str, int]] = field(default_factory=dict)   # display -> product -> units
    facings: dict[str, dict[str, int]] = field(default_factory=dict)   # display -> product -> slots
    last_post_counts: dict[str, dict[str, int]] = field(default_factory=dict)

    def catalog_by_id(self) -> dict[str, Product]:
        return {p.product_id: p for p in self.catalog}

    def display(self, display_id: str) -> DisplayInfo:
        for d in self.displays:
            if d.display_id == display_id:
                return d
        raise KeyError(display_id)


def _product_ids(prefix: str, sub: str, count: int) -> list[str]:
    tag = sub[:2].upper()
    return [f"{prefix}{tag}{i:02d}" for i in range(count)]


def gen_world(config: WorldConfig, seed: int = 0) -> SyntheticWorld:
    """Deterministically generate a world from a seed.

    Tract demographics are drawn around per-cluster centers scaled by the
    separation parameter; payoff coefficients are drawn per (cluster,
    product) and jittered per store with a positive Laplace perturbation,
    mirroring the reward model's hierarchy.
    """
    rng = np.random.default_rng(seed)
    cfg = config

    demo_centers = cfg.demographic_separation * rng.standard_normal(
        (cfg.n_clusters, cfg.n_demographics)
    )
    stores = []
    store_cluster = {}
    store_profiles_true = {}
    tracts = []
    for c in range(cfg.n_clusters):
        lat0 = 33.0 + 1.5 * c
        lon0 = -112.0 + 1.1 * c
        for s in range(cfg.stores_per_cluster):
            sid = f"S{c}{s:02d}"
            stores.append((sid, lat0 + 0.05 * rng.standard_normal(), lon0 + 0.05 * rng.standard_normal()))
            store_cluster[sid] = c
            store_profiles_true[sid] = demo_centers[c] + 0.3 * cfg.demographic_within_sd * rng.standard_normal(cfg.n_demographics)
        for t in range(cfg.tracts_per_cluster):
            demo = demo_centers[c] + cfg.demographic_within_sd * rng.standard_normal(cfg.n_demographics)
            tracts.append(
                Tract(
                    tract_id=f"T{c}{t:02d}",
                    lat=lat0 + 0.09 * rng.standard_normal(),
                    lon=lon0 + 0.09 * rng.standard_normal(),
                    demographics=tuple(float(v) for v in demo),
                )
            )

    by_sub_core = {sub: _product_ids("P", sub, cfg.core_products_per_subcat) for sub in cfg.sub_categories}
    by_sub_new = {sub: _product_ids("N", sub, cfg.new_products_per_subcat) for sub in cfg.sub_categories}

    catalog = []
    core_products = []
    new_products = []
    for sub in cfg.sub_categories:
        core = by_sub_core[sub]
        fresh = by_sub_new[sub]
        core_products.extend(core)
        new_products.extend(fresh)
        for pid in core:
            catalog.append(Product(pid, f"{sub} {pid}", sub, float(rng.uniform(150, 245)), float(rng.uniform(55, 75))))
        for pid in fresh:
            catalog.append(Product(pid, f"{sub} {pid} (new)", sub, float(rng.uniform(150, 195)), float(rng.uniform(55, 75))))

    beta_cluster_true = {}
    beta_true = {}
    sigma_true = {}
    for pid in core_products + new_products:
        sigma_true[pid] = float(rng.uniform(cfg.sigma_low, cfg.sigma_high))
    # every cluster draws from one shared value multiset but assigns it to
    # products in its own order: preference heterogeneity lives in which
    # products a cluster favors, not in how much it buys overall
    for sub in cfg.sub_categories:
        sub_products = by_sub_core[sub] + by_sub_new[sub]
        values = rng.uniform(cfg.beta_low, cfg.beta_high, size=len(sub_products))
        for c in range(cfg.n_clusters):
            order = rng.permutation(len(sub_products))
            for i, pid in enumerate(sub_products):
                beta_cluster_true[(pid, c)] = float(values[order[i]])
    # store departures are centered within each cluster so the cluster
    # coefficient stays the cluster mean by construction, then clipped to
    # keep store values bounded
    jit_cap = cfg.store_jitter_clip * cfg.store_jitter
    store_ids = [sid for sid, _, _ in stores]
    for pid in core_products + new_products:
        for c in range(cfg.n_clusters):
            members = [sid for sid in store_ids if store_cluster[sid] == c]
            clipped = np.clip(rng.laplace(0.0, cfg.store_jitter, size=len(members)), -jit_cap, jit_cap)
            centered = clipped - clipped.mean()
            center = beta_cluster_true[(pid, c)]
            for sid, jitter in zip(members, centered):
                beta_true[(pid, sid)] = max(center + float(jitter), 0.05)

    q_each = cfg.capacity // cfg.selection_size
    displays = []
    for sid, _, _ in stores:
        for d in range(cfg.displays_per_store):
            sub = cfg.sub_categories[d % len(cfg.sub_categories)]
            pool = list(by_sub_core[sub])
            new_pool = list(by_sub_new[sub])
            # one pool product is never stocked on this display during the
            # logging period; sibling stores still carry it, so only
            # cluster-aware prediction can rank it here
            hole = pool[int(rng.integers(len(pool)))]
            seen = [p for p in pool if p != hole]
            spreads = [
                {p: q_each for p in combo}
                for combo in itertools.combinations(seen, cfg.selection_size)
            ]
            singles = [{p: cfg.capacity} for p in seen]
            logging_menu = spreads + singles
            hole_spreads = [
                {p: q_each for p in (hole, *combo)}
                for combo in itertools.combinations(seen, cfg.selection_size - 1)
            ]
            eval_menu = (
                logging_menu
                + hole_spreads
                + [{hole: cfg.capacity}]
                + [{p: cfg.capacity} for p in new_pool]
            )
            displays.append(
                DisplayInfo(
                    display_id=f"{sid}-D{d}",
                    store_id=sid,
                    sub_category=sub,
                    capacity=cfg.capacity,
                    pool=pool,
                    new_pool=new_pool,
                    hole=hole,
                    logging_menu=logging_menu,
                    eval_menu=eval_menu,
                )
            )

    network_states = []
    for i in range(cfg.n_network_states):
        sub = cfg.sub_categories[i % len(cfg.sub_categories)]
        core = by_sub_core[sub]
        fresh = by_sub_new[sub]
        picked = set(rng.choice(core, size=2, replace=False))
        picked.update(rng.choice(fresh, size=min(2, len(fresh)), replace=False))
        network_states.append((f"net-{i:03d}", EPOCH, frozenset(str(p) for p in picked)))

    return SyntheticWorld(
        config=cfg,
        seed=seed,
        stores=stores,
        store_cluster=store_cluster,
        store_profiles_true=store_profiles_true,
        tracts=tracts,
        catalog=catalog,
        core_products=core_products,
        new_products=new_products,
        displays=displays,
        beta_true=beta_true,
        beta_cluster_true=beta_cluster_true,
        sigma_true=sigma_true,
        network_states=network_states,
        rng=np.random.default_rng(np.random.SeedSequence([seed, 1])),
    )


def apply_vision_noise(
    counts: Mapping[str, int],
    noise_sd: float,
    rng: np.random.Generator,
    glitch_prob: float = 0.0,
    glitch_factor: float = 0.15,
) -> dict[str, int]:
    """Perturb counts with multiplicative log-normal noise, a rare gross
    occlusion under-count, and round to whole units."""
    noisy = {}
    for product in sorted(counts):
        c = counts[product]
        if noise_sd <= 0.0 or c == 0:
            noisy[product] = int(c)
            continue
        value = c * np.exp(noise_sd * rng.standard_normal())
        if glitch_prob > 0.0 and rng.random() < glitch_prob:
            value *= glitch_factor
        noisy[product] = max(0, int(round(value)))
    return noisy


@dataclass
class StepResult:
    scan_events: list[ScanEvent]
    true_rewards: dict[str, dict[str, float]]       # display -> product -> units sold
    estimated_rewards: dict[str, float]             # display -> noisy derived total
    display_states: list[tuple[str, datetime, frozenset]]
    offered_states: dict[str, dict[str, int]]       # display -> facings before restock


def step(
    world: SyntheticWorld,
    assignments: Mapping[str, Mapping[str, int]],
    interval_hours: float = 24.0,
) -> StepResult:
    """Advance one merchandiser visit cycle for the assigned displays.

    Demand realized over the elapsed interval draws from a Gamma with mean
    (facings x true coefficient) and the product's true dispersion,
    truncated to stocked units and rounded to whole units. The visit emits
    a noisy pre-scan of what remains, restocks to the new assignment, and
    emits a noisy post-scan.
    """
    cfg = world.config
    rng = world.rng
    events: list[ScanEvent] = []
    true_rewards: dict[str, dict[str, float]] = {}
    estimated: dict[str, float] = {}
    states: list[tuple[str, datetime, frozenset]] = []
    offered: dict[str, dict[str, int]] = {}

    world.clock = world.clock + timedelta(hours=interval_hours)
    pre_ts = world.clock
    post_ts = world.clock + timedelta(minutes=15)

    for display_id in sorted(assignments):
        info = world.display(display_id)
        new_assignment = dict(assignments[display_id])
        if sum(new_assignment.values()) > info.capacity:
            raise ValueError(f"assignment exceeds capacity on {display_id}")
        visit = world.visit_index.get(display_id, 0)
        stock = world.stocked.get(display_id, {})
        facings = world.facings.get(display_id, {})
        offered[display_id] = dict(facings)

        sold: dict[str, float] = {}
        remaining: dict[str, int] = {}
        for product in sorted(stock):
            units = stock[product]
            q = facings.get(product, 1)
            mean = q * world.beta_true[(product, info.store_id)]
            sd = world.sigma_true[product]
            if sd <= 0.0:
                demand = mean
            else:
                shape = mean * mean / (sd * sd)
                demand = float(rng.gamma(shape, (sd * sd) / mean)) if mean > 0 else 0.0
            units_sold = int(round(min(demand, units)))
            sold[product] = float(units_sold)
            remaining[product] = units - units_sold

        # occlusion glitches hit shopped displays (pre-scan); the post-scan
        # of a freshly faced display keeps only the baseline noise
        pre_counts = apply_vision_noise(
            remaining, cfg.vision_noise_sd, rng, cfg.count_glitch_prob, cfg.count_glitch_factor
        )
        events.append(
            ScanEvent(info.store_id, display_id, visit, pre_ts, Phase.PRE, pre_counts)
        )

        new_stock = {p: q * cfg.depth for p, q in new_assignment.items()}
        post_counts = apply_vision_noise(new_stock, cfg.vision_noise_sd, rng)
        events.append(
            ScanEvent(info.store_id, display_id, visit, post_ts, Phase.POST, post_counts)
        )

        prior_post = world.last_post_counts.get(display_id)
        est = 0.0
        if prior_post:
            for product, prior_count in prior_post.items():
                est += max(0, prior_count - pre_counts.get(product, 0))
        estimated[display_id] = float(est)

        true_rewards[display_id] = sold
        states.append((display_id, post_ts, frozenset(new_assignment)))
        world.visit_index[display_id] = visit + 1
        world.stocked[display_id] = new_stock
        world.facings[display_id] = dict(new_assignment)
        world.last_post_counts[display_id] = post_counts

    return StepResult(
        scan_events=events,
        true_rewards=true_rewards,
        estimated_rewards=estimated,
        display_states=states,
        offered_states=offered,
    )
