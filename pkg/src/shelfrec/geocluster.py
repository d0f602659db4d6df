"""Spatially anchored store-tract matching and store clustering.

The mixture model fixes one Gaussian component per store at the store's
(standardized) coordinates and only learns covariances and mixing weights,
by MAP-EM with an inverse-Wishart prior on each covariance. Its output is
a per-tract membership distribution over stores, which turns tract
demographics into weighted store profiles. Profiles are then grouped with
K-means, and the cluster count can be picked by per-product one-way ANOVA
of sales across candidate clusterings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.special import multigammaln

from .ingest import Tract

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class SpagmmConfig:
    convergence_rel_tol: float = 0.05
    max_iterations: int = 200
    epsilon_stabilizer: float = 1e-12
    # convergence is tested on log-domain likelihood totals by default;
    # raw-density totals are available for comparison
    log_likelihood_convergence: bool = True

    def __post_init__(self):
        if not 0.0 < self.convergence_rel_tol < 1.0:
            raise ValueError("convergence_rel_tol must be in (0, 1)")
        if self.epsilon_stabilizer <= 0.0:
            raise ValueError("epsilon_stabilizer must be positive")


@dataclass
class MembershipMatrix:
    store_ids: list[str]
    tract_ids: list[str]
    probabilities: np.ndarray          # L x Z, columns sum to 1
    mixing_weights: np.ndarray         # length L
    covariances: np.ndarray            # L x 2 x 2
    iterations: int = 0
    objective_history: list[float] = field(default_factory=list)
    likelihood_history: list[float] = field(default_factory=list)
    min_eigenvalue_history: list[float] = field(default_factory=list)
    perturbed_stores: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "store_ids": list(self.store_ids),
            "tract_ids": list(self.tract_ids),
            "probabilities": self.probabilities.tolist(),
            "mixing_weights": self.mixing_weights.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MembershipMatrix":
        return cls(
            store_ids=list(data["store_ids"]),
            tract_ids=list(data["tract_ids"]),
            probabilities=np.asarray(data["probabilities"], dtype=float),
            mixing_weights=np.asarray(data["mixing_weights"], dtype=float),
            covariances=np.asarray(data["covariances"], dtype=float),
        )


@dataclass(frozen=True)
class StoreProfile:
    store_id: str
    profile: tuple[float, ...]


@dataclass
class ClusterAssignment:
    assignment: dict[str, int]
    centroids: np.ndarray              # K x b, means of member profiles
    k: int
    wcss: float = 0.0

    def stores_in(self, cluster_id: int) -> list[str]:
        return sorted(s for s, c in self.assignment.items() if c == cluster_id)

    def to_dict(self) -> dict:
        return {
            "assignment": {s: int(c) for s, c in sorted(self.assignment.items())},
            "centroids": self.centroids.tolist(),
            "k": self.k,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ClusterAssignment":
        return cls(
            assignment={s: int(c) for s, c in data["assignment"].items()},
            centroids=np.asarray(data["centroids"], dtype=float),
            k=int(data["k"]),
        )


def _log_gaussian_2d(points: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log density of each row of points under N(mean, cov), D=2."""
    diff = points - mean
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    if det <= 0 or not np.isfinite(det):
        raise FloatingPointError("covariance is not positive definite")
    inv = np.array([[cov[1, 1], -cov[0, 1]], [-cov[1, 0], cov[0, 0]]]) / det
    quad = np.einsum("zi,ij,zj->z", diff, inv, diff)
    return -0.5 * (quad + math.log(det) + 2.0 * LOG_2PI)


def responsibilities(log_density: np.ndarray, log_weights: np.ndarray, eps: float) -> np.ndarray:
    """Normalize weighted densities per tract (column) across components.

    log_density is L x Z. The stabilizer eps enters the denominator after
    max-subtraction scaling, so it only matters when every component's
    scaled density underflows.
    """
    weighted = log_density + log_weights[:, None]
    top = weighted.max(axis=0, keepdims=True)
    scaled = np.exp(weighted - top)
    denom = scaled.sum(axis=0, keepdims=True) + eps
    return scaled / denom


def map_covariance_update(
    resp_k: np.ndarray, tracts_std: np.ndarray, mu_k: np.ndarray, n_stores: int
) -> np.ndarray:
    """One component's MAP covariance: (Y0 + Yk) / (rk + 2D + 4) with D=2.

    Y0 = I / n_stores^(1/D) is the inverse-Wishart scale keeping eigenvalues
    away from zero, Yk is the responsibility-weighted scatter about the
    fixed component mean, rk the total responsibility mass.
    """
    d = 2
    y0 = np.eye(d) / (n_stores ** (1.0 / d))
    diff = tracts_std - mu_k
    yk = (resp_k[:, None] * diff).T @ diff
    rk = float(resp_k.sum())
    return (y0 + yk) / (rk + 2 * d + 4)


def _log_iw_prior(cov: np.ndarray, n_stores: int) -> float:
    """Log inverse-Wishart density IW(Psi=Y0, nu=D+3) at cov, D=2.

    This is the prior whose MAP update is map_covariance_update; it is the
    penalty term of the EM objective.
    """
    d = 2
    nu = d + 3
    psi = np.eye(d) / (n_stores ** (1.0 / d))
    det_psi = psi[0, 0] * psi[1, 1]
    det_cov = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    inv = np.array([[cov[1, 1], -cov[0, 1]], [-cov[1, 0], cov[0, 0]]]) / det_cov
    trace = psi[0, 0] * inv[0, 0] + psi[1, 1] * inv[1, 1]
    return (
        0.5 * nu * math.log(det_psi)
        - 0.5 * nu * d * math.log(2.0)
        - multigammaln(nu / 2.0, d)
        - 0.5 * (nu + d + 1) * math.log(det_cov)
        - 0.5 * trace
    )


def penalized_objective(
    log_density: np.ndarray, log_weights: np.ndarray, covariances: np.ndarray, n_stores: int
) -> float:
    """Mixture log-likelihood plus covariance prior terms (the MAP objective)."""
    weighted = log_density + log_weights[:, None]
    top = weighted.max(axis=0)
    loglik = float(np.sum(top + np.log(np.exp(weighted - top).sum(axis=0))))
    prior = sum(_log_iw_prior(covariances[k], n_stores) for k in range(covariances.shape[0]))
    return loglik + prior


def fit_spagmm(
    stores: Sequence[tuple[str, float, float]],
    tracts: Sequence[Tract],
    config: SpagmmConfig | None = None,
) -> MembershipMatrix:
    """Fit the anchored mixture and return tract-to-store memberships.

    Store and tract coordinates are both standardized by the store mean and
    standard deviation so the two clouds share one frame. Component means
    stay fixed at the standardized store coordinates; EM updates mixing
    weights and MAP covariances until the relative likelihood improvement
    falls under the configured tolerance.
    """
    config = config or SpagmmConfig()
    if len(stores) == 0:
        raise ValueError("at least one store is required")
    if len(tracts) == 0:
        raise ValueError("at least one tract is required")

    store_ids = [s[0] for s in stores]
    coords = np.array([[s[1], s[2]] for s in stores], dtype=float)
    perturbed = []
    seen: dict[tuple[float, float], int] = {}
    for i in range(len(coords)):
        key = (coords[i, 0], coords[i, 1])
        bump = 0
        while key in seen:
            bump += 1
            key = (coords[i, 0] + 1e-9 * bump, coords[i, 1] + 1e-9 * bump)
        if bump:
            coords[i] = key
            perturbed.append(store_ids[i])
        seen[key] = i

    tract_ids = [t.tract_id for t in tracts]
    tract_coords = np.array([[t.lat, t.lon] for t in tracts], dtype=float)

    center = coords.mean(axis=0)
    scale = coords.std(axis=0)
    scale[scale == 0.0] = 1.0
    mu = (coords - center) / scale
    tracts_std = (tract_coords - center) / scale

    n_stores = len(store_ids)
    n_tracts = len(tract_ids)
    log_weights = np.full(n_stores, -math.log(n_stores))
    covariances = np.array([np.eye(2) for _ in range(n_stores)])

    objective_history: list[float] = []
    likelihood_history: list[float] = []
    min_eig_history: list[float] = []
    resp = np.full((n_stores, n_tracts), 1.0 / n_stores)

    for iteration in range(1, config.max_iterations + 1):
        log_density = np.empty((n_stores, n_tracts))
        for k in range(n_stores):
            log_density[k] = _log_gaussian_2d(tracts_std, mu[k], covariances[k])
        if not np.all(np.isfinite(log_density)):
            raise FloatingPointError(f"non-finite likelihood at iteration {iteration}")

        objective_history.append(
            penalized_objective(log_density, log_weights, covariances, n_stores)
        )
        if config.log_likelihood_convergence:
            weighted = log_density + log_weights[:, None]
            top = weighted.max(axis=0)
            likelihood_history.append(
                float(np.sum(top + np.log(np.exp(weighted - top).sum(axis=0))))
            )
        else:
            likelihood_history.append(float(np.exp(log_density).sum()))

        resp = responsibilities(log_density, log_weights, config.epsilon_stabilizer)

        weights = resp.mean(axis=1)
        log_weights = np.log(np.maximum(weights, 1e-300))
        for k in range(n_stores):
            covariances[k] = map_covariance_update(resp[k], tracts_std, mu[k], n_stores)
        min_eig_history.append(
            float(min(np.linalg.eigvalsh(covariances[k]).min() for k in range(n_stores)))
        )

        if len(likelihood_history) >= 2:
            prev, cur = likelihood_history[-2], likelihood_history[-1]
            improvement = (cur - prev) / max(abs(prev), 1e-300)
            if improvement <= config.convergence_rel_tol:
                break

    return MembershipMatrix(
        store_ids=store_ids,
        tract_ids=tract_ids,
        probabilities=resp,
        mixing_weights=np.exp(log_weights),
        covariances=covariances,
        iterations=len(objective_history),
        objective_history=objective_history,
        likelihood_history=likelihood_history,
        min_eigenvalue_history=min_eig_history,
        perturbed_stores=perturbed,
    )


def store_profiles(membership: MembershipMatrix, tracts: Sequence[Tract]) -> list[StoreProfile]:
    """Weight tract demographics by membership, row-normalized per store.

    Row normalization makes each profile a convex combination of tract
    vectors, so profiles stay comparable across stores with different
    captured probability mass.
    """
    if [t.tract_id for t in tracts] != membership.tract_ids:
        raise ValueError("tract order does not match membership matrix columns")
    demo = np.array([t.demographics for t in tracts], dtype=float)
    profiles = []
    for row, store_id in enumerate(membership.store_ids):
        weights = membership.probabilities[row]
        total = weights.sum()
        if total <= 0.0:
            raise ValueError(f"store {store_id} captured zero membership mass")
        vec = (weights / total) @ demo
        profiles.append(StoreProfile(store_id, tuple(float(v) for v in vec)))
    return profiles


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    dist2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = dist2.sum()
        if total <= 0.0:
            centers[j] = points[rng.integers(n)]
            continue
        centers[j] = points[rng.choice(n, p=dist2 / total)]
        dist2 = np.minimum(dist2, ((points - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(points: np.ndarray, centers: np.ndarray, max_iter: int = 300) -> tuple[np.ndarray, np.ndarray, float]:
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        new_centers = centers.copy()
        for j in range(centers.shape[0]):
            members = points[labels == j]
            if len(members) == 0:
                # re-seed an empty cluster at the point farthest from its center
                far = d2.min(axis=1).argmax()
                new_centers[j] = points[far]
            else:
                new_centers[j] = members.mean(axis=0)
        if np.allclose(new_centers, centers, rtol=0.0, atol=1e-12):
            centers = new_centers
            break
        centers = new_centers
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    wcss = float(d2[np.arange(len(points)), labels].sum())
    return labels, centers, wcss


def kmeans(
    profiles: Sequence[StoreProfile], k: int, seed: int = 0, restarts: int = 10
) -> ClusterAssignment:
    """K-means over standardized profiles, best of `restarts` k-means++ runs.

    Profiles are processed in store-id order so the result does not depend
    on input permutation. Reported centroids are the plain means of member
    profiles in the original feature space.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(profiles):
        raise ValueError(f"k={k} exceeds number of stores {len(profiles)}")
    ordered = sorted(profiles, key=lambda p: p.store_id)
    ids = [p.store_id for p in ordered]
    raw = np.array([p.profile for p in ordered], dtype=float)
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    std[std == 0.0] = 1.0
    points = (raw - mean) / std

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        centers = _kmeans_pp_init(points, k, rng)
        labels, _, wcss = _lloyd(points, centers)
        if best is None or wcss < best[1]:
            best = (labels, wcss)
    labels, wcss = best

    centroids = np.empty((k, raw.shape[1]))
    for j in range(k):
        members = raw[labels == j]
        centroids[j] = members.mean(axis=0) if len(members) else np.nan
    return ClusterAssignment(
        assignment={ids[i]: int(labels[i]) for i in range(len(ids))},
        centroids=centroids,
        k=k,
        wcss=wcss,
    )


@dataclass
class KSelectionReport:
    fractions: dict[int, float]
    tested: dict[int, int]
    excluded: dict[int, int]
    alpha: float
    recommended_k: int


def _one_way_anova_p(groups: list[np.ndarray]) -> float:
    values = np.concatenate(groups)
    if np.allclose(values, values[0]):
        return 1.0
    with np.errstate(invalid="ignore", divide="ignore"):
        f, p = stats.f_oneway(*groups)
    if not np.isfinite(p):
        return 1.0
    return float(p)


def select_k(
    cluster_fn: Callable[[int], ClusterAssignment],
    store_sales: Mapping[str, Mapping[str, float]],
    k_candidates: Sequence[int],
    alpha: float = 0.05,
    improvement_threshold: float = 0.02,
) -> KSelectionReport:
    """Score candidate cluster counts by how many products show cluster effects.

    For each k, stores are clustered and a per-product one-way ANOVA tests
    whether store-level mean sales differ across clusters. A cluster enters
    a product's test only with at least 2 member observations, and the
    product counts only when at least 2 clusters qualify. The recommended k
    is the first whose gain over the previous candidate falls below
    ``improvement_threshold`` (the elbow), else the last candidate.
    """
    fractions: dict[int, float] = {}
    tested: dict[int, int] = {}
    excluded: dict[int, int] = {}
    products = sorted({p for sales in store_sales.values() for p in sales})

    for k in k_candidates:
        assignment = cluster_fn(k)
        significant = 0
        n_tested = 0
        n_excluded = 0
        for product in products:
            groups = []
            for cluster_id in range(assignment.k):
                values = [
                    store_sales[s][product]
                    for s in assignment.stores_in(cluster_id)
                    if s in store_sales and product in store_sales[s]
                ]
                if len(values) >= 2:
                    groups.append(np.asarray(values, dtype=float))
            if len(groups) < 2:
                n_excluded += 1
                continue
            n_tested += 1
            if _one_way_anova_p(groups) < alpha:
                significant += 1
        fractions[k] = significant / n_tested if n_tested else 0.0
        tested[k] = n_tested
        excluded[k] = n_excluded

    ks = sorted(fractions)
    recommended = ks[-1]
    for prev, cur in zip(ks, ks[1:]):
        if fractions[cur] - fractions[prev] < improvement_threshold:
            recommended = cur
            break
    return KSelectionReport(fractions, tested, excluded, alpha, recommended)
