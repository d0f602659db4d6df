"""Command-line entry point wiring the library into reproducible pipelines.

Every subcommand writes its artifacts plus a manifest.json (resolved
parameters, seeds, input digests, package version) into the output
directory; rerunning a subcommand from its manifest reproduces the
artifacts byte for byte. Setting SHELFREC_SEED overrides the configured
seed. Report paths render figures next to their delimited outputs.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import sys
import zlib
from pathlib import Path

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import __version__
from . import baselines as bl
from . import candidates as cand_mod
from . import evaluation as ev
from . import geocluster as gc
from . import ingest
from . import reporting
from . import reward as rw
from . import search as sr
from .benchmark import BenchmarkConfig, POLICY_NAMES, run_benchmark
from .simulator import WorldConfig, gen_world, step

EXIT_VALIDATION = 1

POLICY_ALIASES = {
    "full": "full",
    "eps": "eps-greedy",
    "eps-greedy": "eps-greedy",
    "genetic": "genetic",
    "dp": "dp",
    "lp": "lp",
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _resolve_seed(flag_seed: int | None, config_seed: int | None, default: int = 0) -> int:
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get("SHELFREC_SEED")
    if env is not None:
        return int(env)
    if config_seed is not None:
        return config_seed
    return default


def _write_text(out_dir: Path, name: str, text: str) -> Path:
    path = out_dir / name
    path.write_text(text)
    return path


def _write_json(out_dir: Path, name: str, payload) -> Path:
    return _write_text(
        out_dir, name, json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"
    )


def _write_manifest(out_dir: Path, command: str, params: dict, inputs: dict[str, str]) -> None:
    digests = {}
    for label, path in sorted(inputs.items()):
        p = Path(path)
        digests[label] = {"path": str(p), "sha256": _sha256(p)} if p.exists() else {"path": str(p)}
    _write_json(
        out_dir,
        "manifest.json",
        {
            "schema": 1,
            "command": command,
            "params": params,
            "inputs": digests,
            "package_version": __version__,
        },
    )


def _load_toml(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


@click.group()
@click.version_option(version=__version__, prog_name="shelfrec")
def main():
    """Shelf-assortment recommendation pipeline."""


# ----------------------------------------------------------------- ingest


@main.command("ingest")
@click.option("--log", "log_path", required=True, type=click.Path(exists=True))
@click.option("--depth", default=1, show_default=True, help="Facing depth divisor.")
@click.option("--out", "out_path", required=True, type=click.Path())
def ingest_cmd(log_path, depth, out_path):
    """Parse a scan log and derive per-interval sales observations."""
    out = _out_dir(out_path)
    parsed = ingest.parse_scan_log(log_path)
    sales = ingest.derive_sales(parsed.events, depth=depth)
    _write_text(out, "sales.csv", ingest.sales_to_csv(sales.records))
    error_rows = "\n".join(f"{e.line},{e.reason}" for e in parsed.errors)
    _write_text(out, "row_errors.csv", "line,reason\n" + (error_rows + "\n" if error_rows else ""))
    _write_json(out, "summary.json", {
        "events": len(parsed.events),
        "records": len(sales.records),
        "row_errors": len(parsed.errors),
        "skipped_visits": sales.skipped_visits,
        "skipped_intervals": len(sales.skipped_intervals),
    })
    _write_manifest(out, "ingest", {"depth": depth}, {"log": log_path})
    click.echo(f"{len(sales.records)} sales records from {len(parsed.events)} scans "
               f"({len(parsed.errors)} row errors)")
    if not parsed.events:
        sys.exit(EXIT_VALIDATION)


def _read_stores_csv(path) -> list[tuple[str, float, float]]:
    with open(path, newline="") as fh:
        return [
            (row["store_id"], float(row["lat"]), float(row["lon"]))
            for row in csv.DictReader(fh)
        ]


# ---------------------------------------------------------------- cluster


@main.command("cluster")
@click.option("--stores", "stores_path", required=True, type=click.Path(exists=True))
@click.option("--tracts", "tracts_path", required=True, type=click.Path(exists=True))
@click.option("--k", default=20, show_default=True)
@click.option("--select-k", "select_k_range", default=None,
              help="Candidate range lo..hi; requires --sales.")
@click.option("--sales", "sales_path", default=None, type=click.Path(exists=True))
@click.option("--alpha", default=0.05, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
def cluster_cmd(stores_path, tracts_path, k, select_k_range, sales_path, alpha, seed, out_path):
    """Fit store-tract memberships, build profiles, and cluster stores."""
    out = _out_dir(out_path)
    seed = _resolve_seed(seed, None)
    stores = _read_stores_csv(stores_path)
    tracts = ingest.load_tracts(tracts_path).events
    if not stores or not tracts:
        click.echo("no stores or tracts parsed", err=True)
        sys.exit(EXIT_VALIDATION)

    membership = gc.fit_spagmm(stores, tracts)
    profiles = gc.store_profiles(membership, tracts)
    k = min(k, len(profiles))
    assignment = gc.kmeans(profiles, k, seed=seed)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["store_id", "tract_id", "probability"])
    for i, sid in enumerate(membership.store_ids):
        for j, tid in enumerate(membership.tract_ids):
            writer.writerow([sid, tid, repr(float(membership.probabilities[i, j]))])
    _write_text(out, "membership.csv", buf.getvalue())

    width = len(profiles[0].profile)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["store_id"] + [f"d{i:02d}" for i in range(width)])
    for p in profiles:
        writer.writerow([p.store_id] + [repr(v) for v in p.profile])
    _write_text(out, "profiles.csv", buf.getvalue())

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["store_id", "cluster_id"])
    for sid in sorted(assignment.assignment):
        writer.writerow([sid, assignment.assignment[sid]])
    _write_text(out, "clusters.csv", buf.getvalue())

    params = {"k": k, "alpha": alpha, "seed": seed, "select_k": select_k_range}
    inputs = {"stores": stores_path, "tracts": tracts_path}
    if select_k_range:
        if not sales_path:
            raise click.UsageError("--select-k requires --sales")
        lo, hi = (int(v) for v in select_k_range.split(".."))
        records = ingest.sales_from_csv(sales_path)
        store_sales: dict[str, dict[str, list[float]]] = {}
        for r in records:
            store_sales.setdefault(r.store_id, {}).setdefault(r.product_id, []).append(r.units_sold)
        means = {
            s: {p: float(np.mean(v)) for p, v in products.items()}
            for s, products in store_sales.items()
        }
        report = gc.select_k(
            lambda kk: gc.kmeans(profiles, kk, seed=seed),
            means,
            list(range(lo, min(hi, len(profiles)) + 1)),
            alpha=alpha,
        )
        rows = ["k,fraction_significant,tested,excluded"]
        for kk in sorted(report.fractions):
            rows.append(f"{kk},{report.fractions[kk]!r},{report.tested[kk]},{report.excluded[kk]}")
        _write_text(out, "select_k.csv", "\n".join(rows) + "\n")
        reporting.select_k_figure(report, out / "select_k.png")
        inputs["sales"] = sales_path
        click.echo(f"recommended k = {report.recommended_k}")
    _write_manifest(out, "cluster", params, inputs)
    click.echo(f"clustered {len(profiles)} stores into {k} groups "
               f"(spagmm {membership.iterations} iterations)")


# ----------------------------------------------------------------- fit-rbp


@main.command("fit-rbp")
@click.option("--sales", "sales_path", required=True, type=click.Path(exists=True))
@click.option("--clusters", "clusters_path", required=True, type=click.Path(exists=True))
@click.option("--chains", default=4, show_default=True)
@click.option("--draws", default=1000, show_default=True)
@click.option("--warmup", default=1000, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
def fit_rbp_cmd(sales_path, clusters_path, chains, draws, warmup, seed, out_path):
    """Fit the hierarchical payoff model by MCMC and export the posterior."""
    out = _out_dir(out_path)
    seed = _resolve_seed(seed, None)
    records = ingest.sales_from_csv(sales_path)
    with open(clusters_path, newline="") as fh:
        assignment = {row["store_id"]: int(row["cluster_id"]) for row in csv.DictReader(fh)}
    post = rw.fit_rbp(
        records,
        assignment,
        sampler=rw.SamplerConfig(chains=chains, draws=draws, warmup=warmup, seed=seed),
    )
    _write_text(out, "posterior.json", post.to_json())
    report = post.diagnostics_report
    rows = ["parameter,rhat,ess"]
    for name in sorted(report.rhat):
        rows.append(f"{name},{report.rhat[name]!r},{report.ess[name]!r}")
    _write_text(out, "diagnostics.csv", "\n".join(rows) + "\n")
    _write_manifest(
        out, "fit-rbp",
        {"chains": chains, "draws": draws, "warmup": warmup, "seed": seed},
        {"sales": sales_path, "clusters": clusters_path},
    )
    flag = " (convergence warning)" if post.convergence_warning else ""
    click.echo(
        f"posterior over {len(post.products)} products, worst rhat "
        f"{report.worst_rhat:.3f}, min ess {report.min_ess:.0f}{flag}"
    )


# -------------------------------------------------------------- candidates


def _read_states_csv(path):
    with open(path, newline="") as fh:
        return [
            (
                row["display_id"],
                ingest.parse_timestamp(row["timestamp"]),
                frozenset(p for p in row["products"].split("|") if p),
            )
            for row in csv.DictReader(fh)
        ]


@main.command("candidates")
@click.option("--states", "states_path", required=True, type=click.Path(exists=True))
@click.option("--catalog", "catalog_path", required=True, type=click.Path(exists=True))
@click.option("--tau", default=10, show_default=True)
@click.option("--seed-display", "seed_display", default=None,
              help="Display whose latest state seeds sampling; default: all displays.")
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
def candidates_cmd(states_path, catalog_path, tau, seed_display, seed, out_path):
    """Build the co-occurrence graph and sample pruned candidate sets."""
    out = _out_dir(out_path)
    seed = _resolve_seed(seed, None)
    states = _read_states_csv(states_path)
    catalog = {p.product_id: p for p in ingest.load_catalog(catalog_path).events}
    graph = cand_mod.build_graph(states, catalog)
    _write_text(out, "graph.csv", cand_mod.graph_to_csv(graph))

    latest: dict[str, tuple] = {}
    for display_id, ts, products in states:
        if display_id not in latest or ts >= latest[display_id][0]:
            latest[display_id] = (ts, products)
    displays = [seed_display] if seed_display else sorted(latest)
    sets = []
    for display_id in displays:
        if display_id not in latest:
            raise click.UsageError(f"display {seed_display!r} not present in the state log")
        rng = np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(display_id.encode())]))
        sets.append(
            cand_mod.generate_candidates(
                graph, display_id, latest[display_id][1], catalog, tau=tau, rng=rng
            )
        )
    _write_text(out, "candidates.csv", cand_mod.candidates_to_csv(sets))
    _write_manifest(
        out, "candidates",
        {"tau": tau, "seed_display": seed_display, "seed": seed},
        {"states": states_path, "catalog": catalog_path},
    )
    click.echo(f"graph over {len(graph.nodes)} products from {graph.source_log_count} states; "
               f"{sum(len(c.candidates) for c in sets)} candidates for {len(sets)} displays")


# --------------------------------------------------------------- recommend


@main.command("recommend")
@click.option("--state", "state_path", required=True, type=click.Path(exists=True))
@click.option("--candidates", "cand_path", required=True, type=click.Path(exists=True))
@click.option("--posterior", "post_path", required=True, type=click.Path(exists=True))
@click.option("--lambda", "lam", default=1.0, show_default=True)
@click.option("--epsilon", default=0.05, show_default=True)
@click.option("--v", "swaps", default=2, show_default=True)
@click.option("--iterations", default=1, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
def recommend_cmd(state_path, cand_path, post_path, lam, epsilon, swaps, iterations, seed, out_path):
    """Produce a product-quantity recommendation for one display."""
    out = _out_dir(out_path)
    seed = _resolve_seed(seed, None)
    payload = json.loads(Path(state_path).read_text())
    state = sr.DisplayState(
        display_id=payload["display_id"],
        store_id=payload["store_id"],
        slots={p: int(q) for p, q in payload["slots"].items()},
        capacity=int(payload["capacity"]),
    )
    decay_state = sr.DecayState.from_dict(payload.get("decay_state", {}))

    with open(cand_path, newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if r["display_id"] == state.display_id]
    cand = cand_mod.CandidateSet(
        display_id=state.display_id,
        candidates=[(r["product_id"], float(r["vote_share"])) for r in rows],
        seed=set(state.slots),
    )
    post = rw.RbpPosterior.from_json(Path(post_path).read_text())
    scorer = rw.make_pepf_scorer(post, state.store_id, lam=lam)
    cfg = sr.SearchConfig(v=swaps, epsilon=epsilon, lam=lam, iterations=iterations, seed=seed)
    rec, decay_out = sr.recommend(state, cand, scorer, cfg, decay_state)
    validation = sr.validate(rec, state, candidates=cand)

    _write_json(out, "recommendation.json", {
        **rec.to_dict(),
        "decay_state": decay_out.to_dict(),
        "config": {"v": swaps, "epsilon": epsilon, "lambda": lam,
                   "iterations": iterations, "seed": seed},
        "validation": [
            {"name": c.name, "passed": c.passed, "detail": c.detail}
            for c in validation.checks
        ],
    })
    _write_manifest(
        out, "recommend",
        {"lambda": lam, "epsilon": epsilon, "v": swaps, "iterations": iterations, "seed": seed},
        {"state": state_path, "candidates": cand_path, "posterior": post_path},
    )
    click.echo(f"recommended {len(rec.assignment)} products, {rec.total}/{state.capacity} slots")
    if not validation.passed:
        click.echo("validation failures: " + ",".join(c.name for c in validation.failures()), err=True)
        sys.exit(EXIT_VALIDATION)


# ------------------------------------------------------------------ replay


def _builtin_policy(name: str, logs, seed: int):
    """Reference policies for replaying a plain interaction log."""
    if name == "logged":
        # identity policy: replays the display's logged actions in order
        actions_by_display: dict[str, list] = {}
        for e in logs:
            actions_by_display.setdefault(e.display_id, []).append(dict(e.chosen_assignment))
        cursor: dict[str, int] = {}

        def logged_policy(offered_state, cand):
            did = offered_state.display_id
            i = cursor.get(did, 0)
            cursor[did] = i + 1
            seq = actions_by_display.get(did, [{}])
            return seq[min(i, len(seq) - 1)]

        return logged_policy
    if name == "random":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
        sizes = [max(1, len(e.chosen_assignment)) for e in logs]
        typical = int(np.median(sizes)) if sizes else 1

        def random_policy(offered_state, cand):
            offered = sorted(offered_state.slots)
            take = min(typical, len(offered))
            picks = rng.choice(len(offered), size=take, replace=False)
            return {offered[int(i)]: 1 for i in picks}

        return random_policy
    if name == "majority":
        from collections import Counter

        per_display: dict[str, Counter] = {}
        for e in logs:
            per_display.setdefault(e.display_id, Counter())[frozenset(e.chosen_assignment)] += 1
        choice = {d: max(c.items(), key=lambda kv: (kv[1], sorted(kv[0])))[0]
                  for d, c in per_display.items()}

        def majority_policy(offered_state, cand):
            best = choice.get(offered_state.display_id, frozenset())
            return {p: 1 for p in best}

        return majority_policy
    raise click.UsageError(f"unknown policy {name!r}; choose logged, random, or majority")


@main.command("replay")
@click.option("--logs", "logs_path", required=True, type=click.Path(exists=True))
@click.option("--policy", "policy_name", default="majority", show_default=True,
              help="logged | random | majority")
@click.option("--subsample", default=0.5, show_default=True)
@click.option("--match", "match_rule", default="exact-set", show_default=True,
              type=click.Choice(["exact-set", "jaccard-threshold"]))
@click.option("--theta", default=0.5, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
def replay_cmd(logs_path, policy_name, subsample, match_rule, theta, seed, out_path):
    """Replay-evaluate a policy against logged interactions."""
    out = _out_dir(out_path)
    seed = _resolve_seed(seed, None)
    logs = ev.logs_from_csv(logs_path)
    policy = _builtin_policy(policy_name, logs, seed)
    report = ev.replay_evaluate(
        policy, logs, subsample=subsample, match_rule=match_rule, seed=seed, theta=theta
    )
    _write_json(out, "replay.json", report.to_dict())
    reporting.replay_reward_figure(report.credited_rewards, out / "replay_rewards.png",
                                   title=f"Credited rewards ({policy_name})")
    _write_manifest(
        out, "replay",
        {"policy": policy_name, "subsample": subsample, "match": match_rule,
         "theta": theta, "seed": seed},
        {"logs": logs_path},
    )
    if report.undefined_stats:
        click.echo("no matched events; statistics undefined")
    else:
        click.echo(f"mean reward {report.mean_reward:.4f} over "
                   f"{report.matched_count}/{report.total_count} matched events")


# --------------------------------------------------------------------- did


@main.command("did")
@click.option("--panel", "panel_path", required=True, type=click.Path(exists=True))
@click.option("--permutations", default=10000, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
def did_cmd(panel_path, permutations, seed, out_path):
    """Difference-in-difference estimate with a permutation test."""
    out = _out_dir(out_path)
    seed = _resolve_seed(seed, None)
    panel = ev.panel_from_csv(panel_path)
    report = ev.did_analysis(panel, n_permutations=permutations, seed=seed)
    _write_json(out, "did.json", report.to_dict())
    reporting.did_figure(report, out / "did.png")
    _write_manifest(
        out, "did", {"permutations": permutations, "seed": seed}, {"panel": panel_path}
    )
    click.echo(
        f"DID {report.did_units:+.4f} units ({report.did_percent:+.2f} pp), "
        f"p = {report.p_value:.4f} ({permutations} permutations)"
    )


# -------------------------------------------------------------------- bench


def _world_config_from(data: dict) -> WorldConfig:
    fields = {f for f in WorldConfig.__dataclass_fields__}
    kwargs = {k: v for k, v in data.items() if k in fields}
    if "sub_categories" in kwargs:
        kwargs["sub_categories"] = tuple(kwargs["sub_categories"])
    return WorldConfig(**kwargs)


@main.command("bench")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True),
              help="TOML with [world] and [bench] tables.")
@click.option("--policies", default="full,eps,genetic,dp,lp", show_default=True)
@click.option("--seeds", "n_seeds", type=int, default=None)
@click.option("--ablations", default="none", show_default=True,
              type=click.Choice(["none", "all"]))
@click.option("--jobs", default=1, show_default=True)
@click.option("--seed", type=int, default=None, help="Base seed.")
@click.option("--out", "out_path", required=True, type=click.Path())
def bench_cmd(config_path, policies, n_seeds, ablations, jobs, seed, out_path):
    """Benchmark policies on synthetic worlds and render report figures."""
    out = _out_dir(out_path)
    file_cfg = _load_toml(config_path)
    world = _world_config_from(file_cfg.get("world", {}))
    bench_fields = {f for f in BenchmarkConfig.__dataclass_fields__} - {"world"}
    bench_kwargs = {k: v for k, v in file_cfg.get("bench", {}).items() if k in bench_fields}
    if n_seeds is not None:
        bench_kwargs["n_seeds"] = n_seeds
    bench_kwargs["base_seed"] = _resolve_seed(seed, bench_kwargs.get("base_seed"))
    config = BenchmarkConfig(world=world, **bench_kwargs)

    try:
        names = tuple(POLICY_ALIASES[p.strip()] for p in policies.split(",") if p.strip())
    except KeyError as exc:
        raise click.UsageError(f"unknown policy {exc.args[0]!r}") from exc
    report = run_benchmark(config, policies=names, ablations=ablations == "all", jobs=jobs)

    _write_text(out, "benchmark.json", report.to_json())
    _write_text(out, "benchmark.csv", report.to_csv())
    reporting.benchmark_policy_figure(report, out / "benchmark_policies.png")
    if report.ablations:
        reporting.benchmark_ablation_figure(report, out / "benchmark_ablations.png")
    _write_manifest(
        out, "bench",
        {
            "policies": list(names),
            "ablations": ablations,
            "jobs": jobs,
            "bench": {k: bench_kwargs.get(k) for k in sorted(bench_kwargs)},
            "n_seeds": config.n_seeds,
            "base_seed": config.base_seed,
        },
        {"config": config_path} if config_path else {},
    )
    ranked = sorted(report.policies.items(), key=lambda kv: -kv[1]["mean_reward"])
    for name, row in ranked:
        click.echo(f"{name:12s} mean {row['mean_reward']:.4f}  median {row['median_reward']:.4f}")


# ----------------------------------------------------------------- simulate


@main.command("simulate")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--cycles", default=30, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
def simulate_cmd(config_path, cycles, seed, out_path):
    """Generate a synthetic world and log a scan stream from it."""
    out = _out_dir(out_path)
    seed = _resolve_seed(seed, None)
    file_cfg = _load_toml(config_path)
    world_cfg = _world_config_from(file_cfg.get("world", {}))
    world = gen_world(world_cfg, seed)

    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    scans = []
    states = []
    for _ in range(cycles):
        actions = {}
        for info in world.displays:
            menu = info.logging_menu
            actions[info.display_id] = dict(menu[int(rng.integers(len(menu)))])
        result = step(world, actions)
        scans.extend(result.scan_events)
        states.extend(result.display_states)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ingest.SCAN_LOG_HEADER)
    for e in scans:
        for product in sorted(e.counts):
            writer.writerow([
                e.store_id, e.display_id, ingest.format_timestamp(e.timestamp),
                e.phase.value, product, e.counts[product],
            ])
    _write_text(out, "scans.csv", buf.getvalue())

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["display_id", "timestamp", "products"])
    for display_id, ts, products in states + world.network_states:
        writer.writerow([display_id, ingest.format_timestamp(ts), "|".join(sorted(products))])
    _write_text(out, "states.csv", buf.getvalue())

    _write_text(out, "catalog.csv", ingest.catalog_to_csv(world.catalog))
    _write_text(out, "tracts.csv", ingest.tracts_to_csv(world.tracts))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["store_id", "lat", "lon"])
    for sid, lat, lon in world.stores:
        writer.writerow([sid, repr(lat), repr(lon)])
    _write_text(out, "stores.csv", buf.getvalue())
    _write_json(out, "truth.json", {
        "store_cluster": {s: int(c) for s, c in sorted(world.store_cluster.items())},
        "beta_true": {f"{p}|{s}": world.beta_true[(p, s)] for p, s in sorted(world.beta_true)},
        "sigma_true": dict(sorted(world.sigma_true.items())),
        "seed": seed,
    })
    _write_manifest(
        out, "simulate", {"cycles": cycles, "seed": seed},
        {"config": config_path} if config_path else {},
    )
    click.echo(f"{len(scans)} scan events over {cycles} cycles at "
               f"{len(world.displays)} displays")


# ------------------------------------------------------------------- rerun


@main.command("rerun")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
def rerun_cmd(ctx, manifest_path, out_path):
    """Re-execute a subcommand from its manifest."""
    manifest = json.loads(Path(manifest_path).read_text())
    command = manifest["command"]
    params = manifest["params"]
    inputs = {label: entry["path"] for label, entry in manifest.get("inputs", {}).items()}
    argv = {
        "ingest": lambda: ingest_cmd.callback(inputs["log"], params["depth"], out_path),
        "did": lambda: did_cmd.callback(inputs["panel"], params["permutations"],
                                        params["seed"], out_path),
        "replay": lambda: replay_cmd.callback(inputs["logs"], params["policy"],
                                              params["subsample"], params["match"],
                                              params["theta"], params["seed"], out_path),
        "simulate": lambda: simulate_cmd.callback(inputs.get("config"), params["cycles"],
                                                  params["seed"], out_path),
    }
    runner = argv.get(command)
    if runner is None:
        raise click.UsageError(
            f"rerun supports ingest, did, replay, and simulate manifests; rerun "
            f"{command!r} by invoking the subcommand with the manifest parameters"
        )
    runner()


if __name__ == "__main__":
    main()
