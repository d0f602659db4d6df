"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see every line. The
shared 30-seed benchmark campaign backing the ordering and ablation
criteria is a session fixture, so the two criteria reuse one run.
"""

import math
import subprocess
import sys
import time
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import pytest

import shelfrec.baselines as bl
from shelfrec.candidates import build_graph, sample_candidates
from shelfrec.evaluation import (
    LoggedInteraction,
    PanelRow,
    did_estimate,
    percent_did,
    permutation_test,
    replay_evaluate,
)
from shelfrec.geocluster import SpagmmConfig, fit_spagmm, map_covariance_update
from shelfrec.ingest import Product, SalesRecord, Tract
from shelfrec.persist import PipelineState, state_from_json, state_to_json
from shelfrec.reward import SamplerConfig, fit_rbp, posterior_predictive
from shelfrec.search import DisplayState, SearchConfig, assortment_combinations, recommend
from shelfrec.candidates import CandidateSet
from shelfrec.reward import PepfScore

T0 = datetime(2022, 5, 17, tzinfo=timezone.utc)


RESULT_LINES: list[str] = []


def report_line(number, label, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    line = f"ACCEPTANCE {number:>2} [{status}] {label}: {detail}"
    RESULT_LINES.append(line)
    print(line)
    return passed


# ------------------------------------------------------------ criterion 1


def test_criterion_01_did_arithmetic():
    t0 = time.perf_counter()

    def cells(pre_t, post_t, pre_c, post_c):
        return [
            PanelRow("t", "treat", "pre", pre_t), PanelRow("t", "treat", "post", post_t),
            PanelRow("c", "control", "pre", pre_c), PanelRow("c", "control", "post", post_c),
        ]

    exp1 = did_estimate(cells(5.82, 6.77, 5.40, 4.40))
    exp2 = did_estimate(cells(9.50, 10.74, 12.74, 10.86))
    pct1 = percent_did(16.42, -18.61)
    pct2 = percent_did(13.02, -14.76)
    elapsed = time.perf_counter() - t0

    ok = (
        abs(exp1.did_units - 1.95) <= 0.01
        and abs(exp2.did_units - 3.12) <= 0.01
        and abs(pct1 - 35.03) <= 0.01
        and abs(pct2 - 27.78) <= 0.01
        and elapsed < 1.0
    )
    detail = (f"exp1 {exp1.did_units:+.4f} units / {pct1:+.2f} pp, "
              f"exp2 {exp2.did_units:+.4f} units / {pct2:+.2f} pp, {elapsed:.3f}s")
    assert report_line(1, "DID arithmetic", ok, detail)


# ------------------------------------------------------------ criterion 2


def pascal_comb(n, k):
    """Independent big-integer binomial via Pascal's recurrence."""
    row = [1]
    for _ in range(n):
        row = [1] + [row[i] + row[i + 1] for i in range(len(row) - 1)] + [1]
    return row[k]


def test_criterion_02_combination_count():
    t0 = time.perf_counter()
    got = assortment_combinations(100, 20)
    oracle = pascal_comb(119, 20)
    elapsed = time.perf_counter() - t0
    ok = got == oracle and abs(got / 2.5e22 - 1.0) <= 0.05 and elapsed < 1.0
    assert report_line(
        2, "assortment combination count", ok,
        f"C(119,20) = {got:.4e}, exact match {got == oracle}, {elapsed:.3f}s",
    )


# ------------------------------------------------------------ criterion 3


def test_criterion_03_offline_ordering(default_campaign):
    P = default_campaign.policies
    means = {name: P[name]["mean_reward"] for name in P}
    full = np.array(P["full"]["per_seed"])
    eps = np.array(P["eps-greedy"]["per_seed"])
    frac = float((full > eps).mean())

    ok = (
        means["full"] > means["genetic"] > means["eps-greedy"]
        and means["dp"] < means["eps-greedy"]
        and means["lp"] < means["eps-greedy"]
        and frac >= 0.80
    )
    detail = (f"full {means['full']:.3f} > genetic {means['genetic']:.3f} > "
              f"eps {means['eps-greedy']:.3f}; dp {means['dp']:.3f}, lp {means['lp']:.3f}; "
              f"full>eps in {frac:.0%} of seeds")
    assert report_line(3, "offline policy ordering", ok, detail)


# ------------------------------------------------------------ criterion 4


def test_criterion_04_ablation_structure(default_campaign):
    ab = {name: row["mean_reward"] for name, row in default_campaign.ablations.items()}
    full_cell = ab["clustering=on,rbp=on,search=on"]
    drops = {
        "no-search": full_cell - ab["clustering=on,rbp=on,search=off"],
        "no-rbp": full_cell - ab["clustering=on,rbp=off,search=on"],
        "no-clustering": full_cell - ab["clustering=off,rbp=on,search=on"],
    }
    ok = (
        drops["no-search"] >= max(drops.values())
        and full_cell >= max(ab.values())
    )
    detail = (f"drops: search {drops['no-search']:+.3f}, rbp {drops['no-rbp']:+.3f}, "
              f"clustering {drops['no-clustering']:+.3f}; full cell {full_cell:.3f} "
              f"(max of grid: {max(ab.values()):.3f})")
    assert report_line(4, "ablation structure", ok, detail)


# ------------------------------------------------------------ criterion 5


def _gamma_records(rng, beta, sigma, n, store="S1", qs=(1, 2, 3, 4)):
    records = []
    for i in range(n):
        q = int(rng.choice(qs))
        mean = q * beta
        r = float(rng.gamma(mean * mean / sigma**2, sigma**2 / mean))
        records.append(SalesRecord(store, f"{store}-d", "P1", T0 + timedelta(hours=i),
                                   24.0, q, max(r, 1e-9), False))
    return records


def _ls_slope(records):
    q = np.array([r.quantity_faced for r in records])
    r = np.array([r.units_sold for r in records])
    return float((q * r).sum() / (q * q).sum())


def test_criterion_05_rbp_toy_experiments():
    t0 = time.perf_counter()
    # (a) contamination robustness over 50 replications
    wins = 0
    for rep in range(50):
        rng = np.random.default_rng(1000 + rep)
        records = _gamma_records(rng, 2.0, 0.5, 300)
        contaminated = [
            SalesRecord(r.store_id, r.display_id, r.product_id, r.interval_end,
                        r.timedelta_hours, r.quantity_faced,
                        r.units_sold * (10.0 if rng.random() < 0.1 else 1.0), False)
            for r in records
        ]
        post = fit_rbp(contaminated, {"S1": 0},
                       sampler=SamplerConfig(chains=2, draws=250, warmup=250, seed=rep))
        rbp_err = abs(post.pair_draws("P1", "S1").mean() - 2.0)
        ls_err = abs(_ls_slope(contaminated) - 2.0)
        wins += rbp_err < ls_err
    frac_a = wins / 50

    # (b) store-level error shrinks with in-store data; pooled LS plateaus
    rbp_errs = {50: [], 500: []}
    ls_errs = {50: [], 500: []}
    for rep in range(12):
        for n_b in (50, 500):
            rng = np.random.default_rng(2000 + rep)
            records_a = _gamma_records(rng, 1.5, 0.5, 1500, store="A")
            records_b = _gamma_records(rng, 3.0, 0.5, n_b, store="B")
            pooled = records_a + records_b
            post = fit_rbp(pooled, {"A": 0, "B": 0},
                           sampler=SamplerConfig(chains=2, draws=250, warmup=250, seed=rep))
            rbp_errs[n_b].append(abs(post.pair_draws("P1", "B").mean() - 3.0))
            ls_errs[n_b].append(abs(_ls_slope(pooled) - 3.0))
    rbp_drop = np.median(rbp_errs[500]) < np.median(rbp_errs[50])
    ls_plateau = np.median(ls_errs[500]) > 0.5 * np.median(ls_errs[50])
    ls_floor = np.median(ls_errs[500]) > np.median(rbp_errs[500])

    # (c) predictive sd strictly decreases as data grows, 50 -> 500
    sd_wins = 0
    for rep in range(20):
        sds = {}
        for n in (50, 500):
            rng = np.random.default_rng(3000 + rep)
            records = _gamma_records(rng, 2.0, 0.5, n)
            post = fit_rbp(records, {"S1": 0},
                           sampler=SamplerConfig(chains=2, draws=500, warmup=400, seed=rep))
            sds[n] = posterior_predictive(post, "P1", "S1", 15).sd
        sd_wins += sds[500] < sds[50]
    frac_c = sd_wins / 20
    elapsed = time.perf_counter() - t0

    ok = frac_a >= 0.90 and rbp_drop and ls_plateau and ls_floor and frac_c >= 0.90 and elapsed < 600
    detail = (f"(a) robustness wins {frac_a:.0%}; (b) store error drop {rbp_drop}, "
              f"pooled plateau {ls_plateau}, pooled above rbp {ls_floor}; "
              f"(c) sd decrease in {frac_c:.0%}; {elapsed:.0f}s")
    assert report_line(5, "payoff-model toy experiments", ok, detail)


# ------------------------------------------------------------ criterion 6


def test_criterion_06_spagmm_properties():
    t0 = time.perf_counter()
    resp = np.array([0.5, 0.5])
    tracts_std = np.array([[1.0, 0.0], [0.0, 1.0]])
    sigma = map_covariance_update(resp, tracts_std, np.zeros(2), n_stores=1)
    hand_ok = np.allclose(sigma, np.eye(2) / 6.0, atol=1e-12)

    monotone_ok = True
    spd_ok = True
    rng = np.random.default_rng(4)
    for _ in range(100):
        n_stores = int(rng.integers(2, 6))
        n_tracts = int(rng.integers(3, 14))
        stores = [(f"S{i}", float(rng.normal(33, 1)), float(rng.normal(-112, 1)))
                  for i in range(n_stores)]
        tracts = [
            Tract(f"T{j}", float(rng.normal(33, 1)), float(rng.normal(-112, 1)), (0.0,))
            for j in range(n_tracts)
        ]
        m = fit_spagmm(stores, tracts, SpagmmConfig(convergence_rel_tol=0.001, max_iterations=30))
        if np.any(np.diff(m.objective_history) < -1e-8):
            monotone_ok = False
        if min(m.min_eigenvalue_history) <= 0:
            spd_ok = False
    elapsed = time.perf_counter() - t0
    ok = hand_ok and monotone_ok and spd_ok and elapsed < 120
    detail = (f"hand M-step {hand_ok}, objective monotone on 100 instances {monotone_ok}, "
              f"covariances SPD each iteration {spd_ok}; {elapsed:.0f}s")
    assert report_line(6, "anchored-mixture EM properties", ok, detail)


# ------------------------------------------------------------ criterion 7


def test_criterion_07_search_safety_fuzz():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    budget_ok = True
    positive_ok = True
    dominance_ok = True
    for i in range(10000):
        n_state = int(rng.integers(1, 5))
        n_cand = int(rng.integers(0, 5))
        names = [f"P{j}" for j in range(n_state + n_cand)]
        table = {p: float(rng.uniform(-1, 3)) for p in names}
        slots = {p: int(rng.integers(1, 5)) for p in names[:n_state]}
        capacity = sum(slots.values()) + int(rng.integers(0, 4))
        state = DisplayState("D1", "S1", slots, capacity)
        cands = CandidateSet(
            "D1",
            [(p, 1.0 / n_cand) for p in names[n_state:]] if n_cand else [],
            set(), 10,
        )
        eps = 0.0 if i % 2 == 0 else float(rng.uniform(0, 1))
        cfg = SearchConfig(v=int(rng.integers(1, 4)), epsilon=eps, seed=i)

        def scorer(product, quantity, _table=table):
            mean = _table[product]
            return PepfScore(product, "S1", quantity, mean, 0.0, mean, 1.0)

        rec, _ = recommend(state, cands, scorer, cfg)
        if rec.total > state.capacity:
            budget_ok = False
        if any(q < 1 for q in rec.assignment.values()):
            positive_ok = False
        if eps == 0.0:
            victims = [p for p in slots if rec.assignment.get(p, 0) < slots[p]]
            for p, how in rec.provenance.items():
                if how == "swapped-greedy" and victims:
                    if table[p] < min(table[v] for v in victims) - 1e-12:
                        dominance_ok = False
    elapsed = time.perf_counter() - t0
    ok = budget_ok and positive_ok and dominance_ok and elapsed < 120
    detail = (f"10000 instances: budget {budget_ok}, positivity {positive_ok}, "
              f"greedy dominance {dominance_ok}; {elapsed:.0f}s")
    assert report_line(7, "search safety fuzz", ok, detail)


# ------------------------------------------------------------ criterion 8


def _exact_inclusion(weights, m):
    import itertools

    names = sorted(weights)
    probs = {name: 0.0 for name in names}
    for seq in itertools.permutations(names, m):
        prob = 1.0
        remaining = dict(weights)
        for pick in seq:
            prob *= remaining[pick] / sum(remaining.values())
            remaining.pop(pick)
        for pick in seq:
            probs[pick] += prob
    return probs


def test_criterion_08_candidate_sampler_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    catalog = {p: Product(p, p, "Sparkling", 200.0, 60.0) for p in "SABCDE"}
    all_ok = True
    worst = 0.0
    trials = 10000
    for config in range(8):
        n_neighbors = int(rng.integers(2, 6))
        names = list("ABCDE")[:n_neighbors]
        weights = {name: float(rng.integers(1, 9)) for name in names}
        tau = int(rng.integers(1, n_neighbors + 1))
        graph = build_graph([], catalog)
        graph.adjacency = {"S": {k: int(v) for k, v in weights.items()}}
        exact = _exact_inclusion(weights, tau)
        counts = {name: 0 for name in names}
        for trial in range(trials):
            picks = sample_candidates(
                graph, {"S"}, tau=tau,
                rng=np.random.default_rng(np.random.SeedSequence([config, trial])),
            )
            for p, _ in picks:
                counts[p] += 1
        for name in names:
            p_exact = exact[name]
            se = math.sqrt(max(p_exact * (1 - p_exact), 1e-12) / trials)
            z = abs(counts[name] / trials - p_exact) / max(se, 1e-12)
            worst = max(worst, z)
            if z > 3.0 and abs(counts[name] / trials - p_exact) > 1e-9:
                all_ok = False
    elapsed = time.perf_counter() - t0
    ok = all_ok and elapsed < 120
    assert report_line(
        8, "candidate sampler exactness", ok,
        f"8 graphs x {trials} trials, worst |z| = {worst:.2f}; {elapsed:.0f}s",
    )


# ------------------------------------------------------------ criterion 9


def test_criterion_09_replay_calibration():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    actions = [frozenset(s) for s in (
        {"a"}, {"b"}, {"c"}, {"d"}, {"a", "b"}, {"a", "c"}, {"a", "d"},
        {"b", "c"}, {"b", "d"}, {"c", "d"}, {"a", "b", "c"}, {"a", "b", "d"},
        {"a", "c", "d"}, {"b", "c", "d"}, {"a", "b", "c", "d"}, {"e"},
        {"a", "e"}, {"b", "e"}, {"c", "e"}, {"d", "e"},
    )]
    true_mean = {action: float(rng.uniform(0.5, 4.0)) for action in actions}
    offered = DisplayState("D1", "S1", {p: 1 for p in "abcde"}, 8)
    logs = []
    for i in range(50000):
        action = actions[int(rng.integers(len(actions)))]
        reward = float(rng.gamma(4.0, true_mean[action] / 4.0))
        logs.append(LoggedInteraction("D1", T0 + timedelta(minutes=i), offered,
                                      {p: 1 for p in sorted(action)}, reward))
    target = actions[4]
    policy = lambda state, cand: {p: 1 for p in sorted(target)}
    result = replay_evaluate(policy, logs, subsample=1.0, seed=0)
    reward_sd = true_mean[target] / 2.0
    tolerance = 3.0 * reward_sd / math.sqrt(result.matched_count)
    unbiased_ok = abs(result.mean_reward - true_mean[target]) <= tolerance

    low_p = 0
    for rep in range(200):
        rng_rep = np.random.default_rng(9000 + rep)
        rows = []
        for u in range(12):
            group = "treat" if u < 6 else "control"
            base = rng_rep.normal(5.0, 1.0)
            rows.append(PanelRow(f"u{u}", group, "pre", base + rng_rep.normal(0, 1.0)))
            rows.append(PanelRow(f"u{u}", group, "post", base + rng_rep.normal(0, 1.0)))
        p = permutation_test(rows, n_permutations=199, seed=rep)
        low_p += p < 0.05
    frac_low = low_p / 200
    elapsed = time.perf_counter() - t0

    ok = unbiased_ok and 0.01 <= frac_low <= 0.10 and elapsed < 300
    detail = (f"credited mean {result.mean_reward:.3f} vs truth {true_mean[target]:.3f} "
              f"(tol {tolerance:.3f}, n={result.matched_count}); null p<0.05 in "
              f"{frac_low:.1%} of 200; {elapsed:.0f}s")
    assert report_line(9, "replay calibration", ok, detail)


# ----------------------------------------------------------- criterion 10


def _run_cli(args, cwd):
    return subprocess.run(
        [sys.executable, "-m", "shelfrec.cli"] + args,
        capture_output=True, text=True, cwd=cwd,
    )


def _tree_hashes(path: Path) -> dict:
    import hashlib

    return {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(Path(path).iterdir()) if p.is_file()
    }


def test_criterion_10_determinism_and_persistence(tmp_path):
    t0 = time.perf_counter()

    # save/load round trips on 1000 fuzzed states
    rng = np.random.default_rng(8)
    persist_ok = True
    for i in range(1000):
        n = int(rng.integers(0, 12))
        records = [
            SalesRecord(f"S{int(rng.integers(3))}", f"D{int(rng.integers(3))}",
                        f"P{int(rng.integers(5))}",
                        T0 + timedelta(hours=int(rng.integers(0, 500))),
                        float(rng.uniform(1, 48)), int(rng.integers(1, 9)),
                        float(np.round(rng.uniform(0, 30), 6)), bool(rng.random() < 0.2))
            for _ in range(n)
        ]
        state = PipelineState(
            sales_records=records,
            profiles={f"S{j}": [float(v) for v in rng.normal(size=3)] for j in range(int(rng.integers(0, 3)))},
            extras={"tag": int(rng.integers(1000))},
        )
        text = state_to_json(state)
        loaded = state_from_json(text)
        if state_to_json(loaded) != text or loaded.sales_records != records:
            persist_ok = False
            break

    # every CLI subcommand, rerun twice, byte-identical artifacts
    work = tmp_path
    config = work / "world.toml"
    config.write_text(
        "[world]\nstores_per_cluster = 2\ntracts_per_cluster = 4\n"
        "core_products_per_subcat = 4\nnew_products_per_subcat = 2\n"
        'sub_categories = ["Sparkling"]\n'
        "[bench]\nlogging_cycles = 8\neval_cycles = 24\nmcmc_draws = 60\nmcmc_warmup = 60\n"
    )
    panel = work / "panel.csv"
    panel.write_text(
        "unit_id,group,period,value\n"
        "d1,treat,pre,5.0\nd1,treat,post,6.6\nd2,treat,pre,6.6\nd2,treat,post,7.0\n"
        "d3,control,pre,5.2\nd3,control,post,4.6\nd4,control,pre,5.6\nd4,control,post,4.2\n"
    )
    logs = work / "logs.csv"
    lines = ["display_id,timestamp,offered_products,chosen_products,chosen_quantities,reward"]
    for i in range(12):
        lines.append(f"D1,2022-06-{i % 9 + 1:02d}T09:00:00+00:00,a|b|c,a|b,2|2,{1.0 + 0.25 * i}")
    logs.write_text("\n".join(lines) + "\n")

    runs = {
        "simulate": ["simulate", "--config", str(config), "--cycles", "8", "--seed", "3"],
        "did": ["did", "--panel", str(panel), "--permutations", "300", "--seed", "1"],
        "replay": ["replay", "--logs", str(logs), "--policy", "majority",
                   "--subsample", "1.0", "--seed", "2"],
        "bench": ["bench", "--config", str(config), "--seeds", "2",
                  "--policies", "full,eps", "--seed", "0"],
    }
    cli_ok = True
    detail_cmds = []
    sim_dir = None
    for name, args in runs.items():
        out_a = work / f"{name}_a"
        out_b = work / f"{name}_b"
        for out in (out_a, out_b):
            result = _run_cli(args + ["--out", str(out)], cwd=work)
            if result.returncode != 0:
                cli_ok = False
                detail_cmds.append(f"{name}:exit{result.returncode}")
                break
        else:
            if _tree_hashes(out_a) != _tree_hashes(out_b):
                cli_ok = False
                detail_cmds.append(f"{name}:differs")
        if name == "simulate":
            sim_dir = out_a

    # the downstream subcommands consume the simulated world
    downstream = {
        "ingest": ["ingest", "--log", str(sim_dir / "scans.csv"), "--depth", "3"],
        "cluster": ["cluster", "--stores", str(sim_dir / "stores.csv"),
                    "--tracts", str(sim_dir / "tracts.csv"), "--k", "2", "--seed", "1"],
        # tau below the typical degree so the weighted draw path is exercised
        "candidates": ["candidates", "--states", str(sim_dir / "states.csv"),
                       "--catalog", str(sim_dir / "catalog.csv"), "--tau", "2", "--seed", "4"],
    }
    for name, args in downstream.items():
        out_a = work / f"{name}_a"
        out_b = work / f"{name}_b"
        for out in (out_a, out_b):
            result = _run_cli(args + ["--out", str(out)], cwd=work)
            if result.returncode != 0:
                cli_ok = False
                detail_cmds.append(f"{name}:exit{result.returncode}")
                break
        else:
            if _tree_hashes(out_a) != _tree_hashes(out_b):
                cli_ok = False
                detail_cmds.append(f"{name}:differs")

    # fit-rbp and recommend on the ingested artifacts
    fit_args = ["fit-rbp", "--sales", str(work / "ingest_a" / "sales.csv"),
                "--clusters", str(work / "cluster_a" / "clusters.csv"),
                "--chains", "2", "--draws", "80", "--warmup", "80", "--seed", "3"]
    state_json = work / "state.json"
    rbp_dirs = []
    for suffix in ("a", "b"):
        out = work / f"fitrbp_{suffix}"
        result = _run_cli(fit_args + ["--out", str(out)], cwd=work)
        if result.returncode != 0:
            cli_ok = False
            detail_cmds.append(f"fit-rbp:exit{result.returncode}")
        rbp_dirs.append(out)
    if _tree_hashes(rbp_dirs[0]) != _tree_hashes(rbp_dirs[1]):
        cli_ok = False
        detail_cmds.append("fit-rbp:differs")

    import csv as csv_mod
    import json as json_mod

    with (work / "ingest_a" / "sales.csv").open() as fh:
        first = next(csv_mod.DictReader(fh))
    state_json.write_text(json_mod.dumps({
        "display_id": first["display_id"],
        "store_id": first["store_id"],
        "slots": {first["product_id"]: 2},
        "capacity": 6,
    }))
    rec_args = ["recommend", "--state", str(state_json),
                "--candidates", str(work / "candidates_a" / "candidates.csv"),
                "--posterior", str(rbp_dirs[0] / "posterior.json"),
                "--lambda", "1", "--epsilon", "0.05", "--v", "2", "--seed", "7"]
    rec_dirs = []
    for suffix in ("a", "b"):
        out = work / f"rec_{suffix}"
        result = _run_cli(rec_args + ["--out", str(out)], cwd=work)
        if result.returncode != 0:
            cli_ok = False
            detail_cmds.append(f"recommend:exit{result.returncode}")
        rec_dirs.append(out)
    if _tree_hashes(rec_dirs[0]) != _tree_hashes(rec_dirs[1]):
        cli_ok = False
        detail_cmds.append("recommend:differs")

    elapsed = time.perf_counter() - t0
    ok = persist_ok and cli_ok and elapsed < 300
    detail = (f"1000 state round trips {persist_ok}; 9 subcommands byte-identical "
              f"{cli_ok}{' (' + ','.join(detail_cmds) + ')' if detail_cmds else ''}; {elapsed:.0f}s")
    assert report_line(10, "determinism and persistence", ok, detail)
