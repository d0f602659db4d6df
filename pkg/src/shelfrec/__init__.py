"""Shelf-assortment recommendation pipeline.

Sales estimation from count snapshots, spatially anchored demographic
clustering, hierarchical Bayesian payoff modeling with an
uncertainty-penalized ranking, co-occurrence candidate generation,
heuristic assignment search, offline replay evaluation, and a synthetic
retail benchmark.
"""

__version__ = "0.1.0"

from .candidates import CandidateSet, CoOccurrenceGraph, build_graph, prune, sample_candidates
from .evaluation import (
    DidReport,
    LoggedInteraction,
    PanelRow,
    ReplayReport,
    compliance,
    did_analysis,
    did_estimate,
    permutation_test,
    replay_evaluate,
)
from .geocluster import (
    ClusterAssignment,
    MembershipMatrix,
    SpagmmConfig,
    StoreProfile,
    fit_spagmm,
    kmeans,
    select_k,
    store_profiles,
)
from .ingest import (
    Product,
    SalesRecord,
    ScanEvent,
    Tract,
    derive_sales,
    load_catalog,
    load_tracts,
    parse_scan_log,
)
from .persist import PipelineState, load_state, save_state
from .reward import (
    PepfScore,
    PredictiveSummary,
    RbpHyperParams,
    RbpPosterior,
    SamplerConfig,
    fit_rbp,
    make_pepf_scorer,
    mcmc_diagnostics,
    pepf,
    posterior_predictive,
)
from .search import (
    DecayState,
    DisplayState,
    RecommendationSet,
    SearchConfig,
    assortment_combinations,
    decay,
    recommend,
    validate,
)
from .simulator import SyntheticWorld, WorldConfig, gen_world, step

__all__ = [name for name in dir() if not name.startswith("_")]
