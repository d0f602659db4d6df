"""Figure rendering for report artifacts.

Every CLI report path writes matplotlib figures next to its delimited
output. Figures are rendered on the Agg backend and saved without date
metadata so reruns are byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .benchmark import BenchmarkReport
from .evaluation import DidReport
from .geocluster import KSelectionReport

FIG_DPI = 120


def save_figure(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=FIG_DPI, metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    return path


def benchmark_policy_figure(report: BenchmarkReport, path) -> Path:
    """Bar chart of mean reward per policy with per-seed scatter."""
    names = sorted(report.policies, key=lambda n: -report.policies[n]["mean_reward"])
    means = [report.policies[n]["mean_reward"] for n in names]
    stds = [report.policies[n]["std_reward"] for n in names]
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(names))
    ax.bar(x, means, yerr=stds, capsize=4, color="#4878a8", alpha=0.85)
    for i, name in enumerate(names):
        seeds = report.policies[name]["per_seed"]
        ax.plot(np.full(len(seeds), i), seeds, "k.", ms=3, alpha=0.35)
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylabel("mean replay reward")
    ax.set_title(f"Policy comparison over {report.n_seeds} seeds")
    return save_figure(fig, path)


def benchmark_ablation_figure(report: BenchmarkReport, path) -> Path:
    """Horizontal bars for the ablation grid, best cell highlighted."""
    if not report.ablations:
        raise ValueError("report has no ablation cells")
    names = sorted(report.ablations, key=lambda n: report.ablations[n]["mean_reward"])
    means = [report.ablations[n]["mean_reward"] for n in names]
    best = max(means)
    colors = ["#a84848" if m < best else "#48a860" for m in means]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    y = np.arange(len(names))
    ax.barh(y, means, color=colors, alpha=0.85)
    ax.set_yticks(y)
    ax.set_yticklabels(names, fontsize=8)
    ax.set_xlabel("mean replay reward")
    ax.set_title("Component ablations")
    return save_figure(fig, path)


def did_figure(report: DidReport, path) -> Path:
    """Pre/post group means with the effect annotated."""
    fig, ax = plt.subplots(figsize=(6, 4))
    x = [0, 1]
    ax.plot(x, [report.pre_treat, report.post_treat], "o-", label="treatment", color="#48a860")
    ax.plot(x, [report.pre_control, report.post_control], "o-", label="control", color="#a84848")
    ax.set_xticks(x)
    ax.set_xticklabels(["pre", "post"])
    ax.set_ylabel("mean daily sales")
    label = f"DID = {report.did_units:+.2f} units ({report.did_percent:+.2f} pp)"
    if report.p_value is not None:
        label += f", p = {report.p_value:.4f}"
    ax.set_title(label)
    ax.legend()
    return save_figure(fig, path)


def select_k_figure(report: KSelectionReport, path) -> Path:
    """Fraction of products with cluster effects against the cluster count."""
    ks = sorted(report.fractions)
    fracs = [report.fractions[k] for k in ks]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ks, fracs, "o-", color="#4878a8")
    ax.axvline(report.recommended_k, color="#48a860", ls="--",
               label=f"recommended k = {report.recommended_k}")
    ax.set_xlabel("number of clusters")
    ax.set_ylabel(f"fraction of products with p < {report.alpha}")
    ax.set_title("Cluster-count selection")
    ax.legend()
    return save_figure(fig, path)


def replay_reward_figure(rewards: list[float], path, title: str = "Credited rewards") -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    if rewards:
        ax.hist(rewards, bins=min(30, max(5, len(rewards) // 5)), color="#4878a8", alpha=0.85)
    ax.set_xlabel("reward")
    ax.set_ylabel("count")
    ax.set_title(title)
    return save_figure(fig, path)
