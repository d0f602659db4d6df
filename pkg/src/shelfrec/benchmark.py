"""Benchmark campaigns: full pipeline versus classical policies on
synthetic worlds, with component ablations.

Each seed builds a world, logs a uniform-random control period, fits the
pipeline (spatial clusters, payoff posteriors, candidate graph) on the
logged data, then replays every policy against a fresh uniform control
log. The logged action space is a per-display menu of balanced spreads
and single-product allocations, so the replay matcher has support for
both spread-style and concentrate-style policies. Absolute reward levels
are world-specific; reported comparisons target orderings only.

Neural baselines (deep ensembles, model-based offline RL) are out of scope
and appear in reports as not-implemented placeholders.
"""

from __future__ import annotations

import json
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import baselines as bl
from .candidates import CandidateSet, build_graph, generate_candidates
from .evaluation import LoggedInteraction, replay_evaluate
from .geocluster import ClusterAssignment, fit_spagmm, kmeans, store_profiles
from .ingest import derive_sales
from .reward import PepfScore, SamplerConfig, fit_rbp, make_pepf_scorer
from .search import DisplayState
from .simulator import SyntheticWorld, WorldConfig, gen_world, step

POLICY_NAMES = ("full", "eps-greedy", "genetic", "dp", "lp")
NOT_IMPLEMENTED = ("deep-ensembles", "mopo")


@dataclass
class BenchmarkConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    n_seeds: int = 30
    logging_cycles: int = 30
    eval_cycles: int = 240
    subsample: float = 0.5
    base_seed: int = 0
    k_clusters: int | None = None
    mcmc_chains: int = 2
    mcmc_draws: int = 600
    mcmc_warmup: int = 600
    lam: float = 1.0
    search_epsilon: float = 0.05
    greedy_epsilon: float = 0.1
    tau: int = 10

    def __post_init__(self):
        if self.n_seeds < 2:
            raise ValueError("n_seeds must be >= 2")


def _policy_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


def _spread_action(
    ranked: list[tuple[str, float]],
    n_select: int,
    quantity_each: int,
    epsilon: float,
    rng: np.random.Generator,
) -> dict[str, int]:
    """Take the top products by score, epsilon-exploring per pick."""
    remaining = [p for p, _ in ranked]
    chosen = []
    for _ in range(min(n_select, len(remaining))):
        if epsilon > 0.0 and rng.random() < epsilon:
            pick = remaining[int(rng.integers(len(remaining)))]
        else:
            pick = remaining[0]
        chosen.append(pick)
        remaining.remove(pick)
    return {p: quantity_each for p in chosen}


@dataclass
class _SeedFit:
    """Everything fitted once per seed and shared across policies."""

    world: SyntheticWorld
    clusters: ClusterAssignment
    candidate_sets: dict[str, CandidateSet]
    universes: dict[str, list[str]]
    scorers: dict[tuple[str, bool], dict[str, dict[str, PepfScore]]]
    ls_model: bl.PointEstimateModel
    eval_logs: list[LoggedInteraction]


def _uniform_menu_action(menu: list[dict[str, int]], rng: np.random.Generator) -> dict[str, int]:
    return dict(menu[int(rng.integers(len(menu)))])


def _simulate_phase(
    world: SyntheticWorld,
    cycles: int,
    rng: np.random.Generator,
    use_eval_menu: bool,
    collect_logs: bool,
):
    """Run a logging period of uniform menu actions; optionally collect
    replay interactions (an action's reward realizes at the next visit)."""
    scans, states = [], []
    pending: dict[str, tuple] = {}
    logs: list[LoggedInteraction] = []
    total_steps = cycles + (1 if collect_logs else 0)
    for t in range(total_steps):
        actions = {}
        for info in world.displays:
            menu = info.eval_menu if use_eval_menu else info.logging_menu
            actions[info.display_id] = _uniform_menu_action(menu, rng)
        result = step(world, actions)
        scans.extend(result.scan_events)
        states.extend(result.display_states)
        if not collect_logs:
            continue
        for info in world.displays:
            did = info.display_id
            # this visit's differenced counts settle the action staged at
            # the previous visit
            if did in pending:
                ts, offered, chosen = pending[did]
                logs.append(
                    LoggedInteraction(
                        display_id=did,
                        timestamp=ts,
                        offered_state=DisplayState(
                            display_id=did,
                            store_id=info.store_id,
                            slots=offered if offered else {info.pool[0]: 1},
                            capacity=info.capacity,
                        ),
                        chosen_assignment=chosen,
                        observed_reward=result.estimated_rewards.get(did, 0.0),
                    )
                )
            if t < cycles:
                pending[did] = (world.clock, result.offered_states.get(did, {}), actions[did])
    return scans, states, logs


def _fit_seed(config: BenchmarkConfig, seed: int) -> _SeedFit:
    world = gen_world(config.world, seed)
    rng_log = np.random.default_rng(np.random.SeedSequence([seed, 2]))

    scans, states, _ = _simulate_phase(world, config.logging_cycles, rng_log, False, False)
    records = derive_sales(scans, depth=config.world.depth).records

    membership = fit_spagmm(world.stores, world.tracts)
    profiles = store_profiles(membership, world.tracts)
    k = config.k_clusters or config.world.n_clusters
    clusters = kmeans(profiles, k, seed=0)
    global_clusters = ClusterAssignment(
        assignment={sid: 0 for sid, _, _ in world.stores},
        centroids=np.zeros((1, config.world.n_demographics)),
        k=1,
    )

    sampler = lambda tag: SamplerConfig(
        chains=config.mcmc_chains,
        draws=config.mcmc_draws,
        warmup=config.mcmc_warmup,
        seed=seed * 1000 + tag,
    )
    rbp_clustered = fit_rbp(records, clusters, sampler=sampler(7))
    rbp_global = fit_rbp(records, global_clusters, sampler=sampler(8))
    ls_model = bl.PointEstimateModel.fit(records, clusters.assignment)

    catalog = world.catalog_by_id()
    graph = build_graph(states + world.network_states, catalog)
    candidate_sets = {}
    universes = {}
    for info in world.displays:
        cand = generate_candidates(
            graph,
            info.display_id,
            seed=set(info.pool),
            catalog=catalog,
            tau=config.tau,
            rng=np.random.default_rng(np.random.SeedSequence([seed, 3, zlib.crc32(info.display_id.encode())])),
        )
        candidate_sets[info.display_id] = cand
        universes[info.display_id] = sorted(set(info.pool) | set(cand.product_ids))

    # precompute PEPF tables per display for both reward-model variants
    scorers: dict[tuple[str, bool], dict[str, dict[str, PepfScore]]] = {}
    for model_name, clustered, post in (
        ("rbp", True, rbp_clustered),
        ("rbp", False, rbp_global),
    ):
        table: dict[str, dict[str, PepfScore]] = {}
        for info in world.displays:
            scorer = make_pepf_scorer(post, info.store_id, lam=config.lam)
            table[info.display_id] = {p: scorer(p, 1) for p in universes[info.display_id]}
        scorers[(model_name, clustered)] = table
    for clustered in (True, False):
        level = "cluster" if clustered else "global"
        table = {}
        for info in world.displays:
            cluster_id = clusters.assignment[info.store_id]
            entries = {}
            # a least-squares model can only rank products it has observed
            for p in universes[info.display_id]:
                if p not in ls_model.global_beta:
                    continue
                mean = ls_model.value(p, info.store_id, 1, cluster=cluster_id, level=level)
                entries[p] = PepfScore(p, info.store_id, 1, mean, 0.0, mean, config.lam)
            table[info.display_id] = entries
        scorers[("ls", clustered)] = table

    rng_eval = np.random.default_rng(np.random.SeedSequence([seed, 4]))
    _, _, eval_logs = _simulate_phase(world, config.eval_cycles, rng_eval, True, True)

    return _SeedFit(
        world=world,
        clusters=clusters,
        candidate_sets=candidate_sets,
        universes=universes,
        scorers=scorers,
        ls_model=ls_model,
        eval_logs=eval_logs,
    )


def _ranked(table: Mapping[str, PepfScore], cand: CandidateSet, by_mean: bool) -> list[tuple[str, float]]:
    def key(p: str):
        score = table[p]
        metric = score.mean_payoff if by_mean else score.pepf
        return (-metric, -cand.vote_share(p), p)

    ordered = sorted(table, key=key)
    return [(p, table[p].mean_payoff if by_mean else table[p].pepf) for p in ordered]


def make_cell_policy(
    fit: _SeedFit,
    config: BenchmarkConfig,
    model_name: str,
    clustered: bool,
    search: bool,
    rng: np.random.Generator,
) -> Callable:
    """Policy for one ablation cell: penalized spread when search is on,
    unpenalized greedy concentration when it is off."""
    q_each = config.world.capacity // config.world.selection_size
    tables = fit.scorers[(model_name, clustered)]

    def policy(offered_state: DisplayState, cand: CandidateSet | None) -> dict[str, int]:
        table = tables[offered_state.display_id]
        cand = cand or fit.candidate_sets[offered_state.display_id]
        if search:
            ranked = _ranked(table, cand, by_mean=False)
            return _spread_action(
                ranked, config.world.selection_size, q_each, config.search_epsilon, rng
            )
        ranked = _ranked(table, cand, by_mean=True)
        return {ranked[0][0]: offered_state.capacity}

    return policy


def make_baseline_policy(
    fit: _SeedFit, config: BenchmarkConfig, name: str, rng: np.random.Generator
) -> Callable:
    q_each = config.world.capacity // config.world.selection_size
    world = fit.world

    if name in ("dp", "lp", "dp-oracle"):
        rbp_tables = fit.scorers[("rbp", True)]
        cached: dict[str, dict[str, int]] = {}

        def concentrate(offered_state: DisplayState, cand) -> dict[str, int]:
            did = offered_state.display_id
            if did not in cached:
                info = world.display(did)
                if name == "dp-oracle":
                    values = {
                        p: world.beta_true[(p, info.store_id)]
                        for p in fit.universes[did]
                    }
                else:
                    values = {p: s.mean_payoff for p, s in rbp_tables[did].items()}
                if name == "lp":
                    cached[did] = bl.lp_relax_greedy(values, info.capacity)
                else:
                    tables = {p: [v] * info.capacity for p, v in values.items()}
                    cached[did] = bl.dp_knapsack(tables, info.capacity)
            return dict(cached[did])

        return concentrate

    if name == "genetic":
        cached_ga: dict[str, dict[str, int]] = {}

        def genetic(offered_state: DisplayState, cand) -> dict[str, int]:
            did = offered_state.display_id
            if did not in cached_ga:
                info = world.display(did)
                cluster_id = fit.clusters.assignment[info.store_id]
                values = {
                    p: fit.ls_model.beta(p, info.store_id, cluster=cluster_id, level="cluster")
                    for p in fit.universes[did]
                    if p in fit.ls_model.global_beta
                }
                result = bl.genetic_assignment(
                    values, config.world.selection_size, q_each, rng
                )
                cached_ga[did] = result.assignment
            return dict(cached_ga[did])

        return genetic

    if name == "eps-greedy":
        def eps(offered_state: DisplayState, cand) -> dict[str, int]:
            did = offered_state.display_id
            info = world.display(did)
            cluster_id = fit.clusters.assignment[info.store_id]
            values = {
                p: fit.ls_model.beta(p, info.store_id, cluster=cluster_id, level="cluster")
                for p in fit.universes[did]
                if p in fit.ls_model.global_beta
            }
            return bl.epsilon_greedy_assignment(
                values, config.world.selection_size, q_each, config.greedy_epsilon, rng
            )

        return eps

    if name == "full":
        return make_cell_policy(fit, config, "rbp", True, True, rng)
    raise ValueError(f"unknown policy {name!r}")


ABLATION_CELLS = [
    (clustering, rbp, search)
    for clustering in (True, False)
    for rbp in (True, False)
    for search in (True, False)
]


def cell_name(clustering: bool, rbp: bool, search: bool) -> str:
    flag = lambda on: "on" if on else "off"
    return f"clustering={flag(clustering)},rbp={flag(rbp)},search={flag(search)}"


@dataclass
class BenchmarkReport:
    policies: dict[str, dict]
    ablations: dict[str, dict]
    n_seeds: int
    config: dict
    failed_runs: dict[str, int] = field(default_factory=dict)
    not_implemented: tuple[str, ...] = NOT_IMPLEMENTED
    header: str = (
        "Synthetic-world benchmark: absolute rewards are world-specific; "
        "only orderings and ablation structure are comparable."
    )
    runtimes: dict[str, float] = field(default_factory=dict)

    def to_dict(self, include_runtimes: bool = False) -> dict:
        out = {
            "header": self.header,
            "n_seeds": self.n_seeds,
            "config": self.config,
            "policies": self.policies,
            "ablations": self.ablations,
            "failed_runs": self.failed_runs,
            "not_implemented": {name: "not implemented" for name in self.not_implemented},
        }
        if include_runtimes:
            out["runtimes_s"] = self.runtimes
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    def to_csv(self) -> str:
        lines = ["name,kind,mean_reward,median_reward,std_reward,mean_matched"]
        for kind, table in (("policy", self.policies), ("ablation", self.ablations)):
            for name in sorted(table):
                row = table[name]
                lines.append(
                    f"{name},{kind},{row['mean_reward']!r},{row['median_reward']!r},"
                    f"{row['std_reward']!r},{row['mean_matched']!r}"
                )
        for name in self.not_implemented:
            lines.append(f"{name},policy,not-implemented,not-implemented,not-implemented,not-implemented")
        return "\n".join(lines) + "\n"


def _aggregate(per_seed_means: list[float], matched: list[int]) -> dict:
    arr = np.asarray(per_seed_means, dtype=float)
    return {
        "mean_reward": float(np.mean(arr)) if len(arr) else float("nan"),
        "median_reward": float(np.median(arr)) if len(arr) else float("nan"),
        "std_reward": float(np.std(arr)) if len(arr) else float("nan"),
        "per_seed": [float(v) for v in per_seed_means],
        "mean_matched": float(np.mean(matched)) if matched else 0.0,
        "matched_counts": [int(m) for m in matched],
    }


def _evaluate_seed(
    config: BenchmarkConfig,
    seed: int,
    policies: tuple[str, ...],
    cells: dict[str, tuple[bool, bool, bool]],
) -> tuple[int, dict[str, tuple[float, int] | None], float]:
    """Fit one seed's world and replay every policy and cell against it.

    Returns (seed, name -> (mean, matched) or None on failure, runtime).
    """
    t0 = time.perf_counter()
    fit = _fit_seed(config, seed)
    lookup = fit.candidate_sets.get
    results: dict[str, tuple[float, int] | None] = {}

    def evaluate(policy) -> tuple[float, int]:
        report = replay_evaluate(
            policy,
            fit.eval_logs,
            subsample=config.subsample,
            match_rule="exact-set",
            seed=seed,
            candidate_lookup=lookup,
        )
        return report.mean_reward, report.matched_count

    for name in policies:
        try:
            policy = make_baseline_policy(fit, config, name, _policy_rng(seed, name))
            results[name] = evaluate(policy)
        except Exception:
            results[name] = None
    for name, (clustering, rbp_on, search_on) in cells.items():
        try:
            model_name = "rbp" if rbp_on else "ls"
            policy = make_cell_policy(
                fit, config, model_name, clustering, search_on, _policy_rng(seed, name)
            )
            results[name] = evaluate(policy)
        except Exception:
            results[name] = None
    return seed, results, time.perf_counter() - t0


def run_benchmark(
    config: BenchmarkConfig,
    policies: tuple[str, ...] = POLICY_NAMES,
    ablations: bool = False,
    jobs: int = 1,
) -> BenchmarkReport:
    """Run every policy (and optionally the 8-cell ablation grid) across
    n_seeds independent worlds; a policy exception marks that run failed
    and the campaign continues. Seeds are independent, so jobs > 1 fans
    them out over a process pool without changing the results."""
    cells = {cell_name(*cell): cell for cell in ABLATION_CELLS} if ablations else {}
    per_policy: dict[str, list[float]] = {name: [] for name in policies}
    per_policy_matched: dict[str, list[int]] = {name: [] for name in policies}
    per_cell: dict[str, list[float]] = {name: [] for name in cells}
    per_cell_matched: dict[str, list[int]] = {name: [] for name in cells}
    failed: dict[str, int] = {}
    runtimes: dict[str, float] = {}

    seeds = [config.base_seed + i for i in range(config.n_seeds)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(
                pool.map(_evaluate_seed, *zip(*[(config, s, policies, cells) for s in seeds]))
            )
    else:
        outcomes = [_evaluate_seed(config, s, policies, cells) for s in seeds]

    for seed, results, runtime in outcomes:
        runtimes[f"seed_{seed}"] = runtime
        for name in policies:
            got = results.get(name)
            if got is None:
                failed[name] = failed.get(name, 0) + 1
            else:
                per_policy[name].append(got[0])
                per_policy_matched[name].append(got[1])
        for name in cells:
            got = results.get(name)
            if got is None:
                failed[name] = failed.get(name, 0) + 1
            else:
                per_cell[name].append(got[0])
                per_cell_matched[name].append(got[1])

    return BenchmarkReport(
        policies={
            name: _aggregate(per_policy[name], per_policy_matched[name]) for name in policies
        },
        ablations={
            name: _aggregate(per_cell[name], per_cell_matched[name]) for name in per_cell
        },
        n_seeds=config.n_seeds,
        config={
            "n_seeds": config.n_seeds,
            "logging_cycles": config.logging_cycles,
            "eval_cycles": config.eval_cycles,
            "subsample": config.subsample,
            "base_seed": config.base_seed,
            "lam": config.lam,
            "search_epsilon": config.search_epsilon,
            "greedy_epsilon": config.greedy_epsilon,
        },
        failed_runs=failed,
        runtimes=runtimes,
    )
