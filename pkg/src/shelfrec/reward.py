"""Hierarchical Bayesian payoff model and uncertainty-penalized ranking.

Reward for a product at a store follows a Gamma likelihood whose mean is
quantity times a store-level coefficient; store coefficients share a
Laplace prior centered on a cluster-level coefficient, which keeps store
estimates pooled toward the cluster while discounting pooling as in-store
data accumulates. All positive parameters are sampled on the log scale
with an adaptive Metropolis-within-Gibbs sweep (block proposals over
conditionally independent coordinates), adaptation frozen after warmup.

The penalized score subtracts a multiple of the posterior-predictive
standard deviation from the predictive mean, so thinly observed products
rank low until the data supports them.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy.special import gammaln

from . import diagnostics
from .ingest import SalesRecord

LOG_2PI = math.log(2.0 * math.pi)


class UnknownProductError(KeyError):
    pass


@dataclass
class RbpHyperParams:
    mu0: float = 0.0
    sigma0: float = 2.0
    mu1: float = 0.0
    sigma1: float = 1.0
    mu2: float = 0.0
    sigma2: float = 2.0

    def __post_init__(self):
        for name in ("sigma0", "sigma1", "sigma2"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("mu0", "sigma0", "mu1", "sigma1", "mu2", "sigma2")}


@dataclass
class SamplerConfig:
    chains: int = 4
    draws: int = 1000
    warmup: int = 1000
    seed: int = 0
    target_accept: float = 0.44

    def __post_init__(self):
        if self.chains < 2:
            raise ValueError("at least 2 chains are required")
        if self.draws < 1 or self.warmup < 0:
            raise ValueError("draws must be >= 1 and warmup >= 0")


def gamma_shape_rate(mean, sd):
    """Convert a (mean, sd) Gamma parameterization to (shape, rate)."""
    var = np.square(sd)
    return np.square(mean) / var, mean / var


def gamma_logpdf_mean_sd(r, mean, sd):
    shape, rate = gamma_shape_rate(mean, sd)
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(r) - rate * r


def folded_normal_logpdf(x, mu, sigma):
    """Log density of |N(mu, sigma)| on x > 0 (HalfNormal when mu = 0)."""
    a = -0.5 * ((x - mu) / sigma) ** 2
    b = -0.5 * ((x + mu) / sigma) ** 2
    return np.logaddexp(a, b) - math.log(sigma) - 0.5 * LOG_2PI


def laplace_logpdf(x, loc, scale):
    return -np.abs(x - loc) / scale - np.log(2.0 * scale)


def truncated_laplace_positive(loc, scale, rng: np.random.Generator):
    """Sample Laplace(loc, scale) conditioned on > 0 by CDF inversion."""
    loc = np.asarray(loc, dtype=float)
    scale = np.asarray(scale, dtype=float)
    # each where-branch is only consumed where its exponent is <= 0; clip the
    # other side to dodge spurious overflow warnings
    f0 = np.where(
        loc >= 0.0,
        0.5 * np.exp(np.minimum(-loc / scale, 0.0)),
        1.0 - 0.5 * np.exp(np.minimum(loc / scale, 0.0)),
    )
    u = f0 + rng.random(np.broadcast(loc, scale).shape) * (1.0 - f0)
    lower = u < 0.5
    with np.errstate(divide="ignore"):
        x = np.where(
            lower,
            loc + scale * np.log(2.0 * u),
            loc - scale * np.log(2.0 * np.maximum(1.0 - u, 1e-300)),
        )
    return np.maximum(x, 1e-12)


@dataclass(frozen=True)
class PredictiveSummary:
    product_id: str
    store_id: str
    quantity: int
    mean: float
    sd: float
    draws: np.ndarray
    source: str  # store | cluster | prior


@dataclass(frozen=True)
class PepfScore:
    product_id: str
    store_id: str
    quantity: int
    mean_payoff: float
    sd_payoff: float
    pepf: float
    lam: float


def pepf(summary: PredictiveSummary, lam: float = 1.0) -> PepfScore:
    """Penalized expected payoff per facing: mean minus lam times sd."""
    if lam < 0.0:
        raise ValueError("lambda must be non-negative")
    return PepfScore(
        product_id=summary.product_id,
        store_id=summary.store_id,
        quantity=summary.quantity,
        mean_payoff=summary.mean,
        sd_payoff=summary.sd,
        pepf=summary.mean - lam * summary.sd,
        lam=lam,
    )


@dataclass
class RbpPosterior:
    products: list[str]
    pair_keys: list[tuple[str, str]]          # (product, store)
    cluster_keys: list[tuple[str, int]]       # (product, cluster)
    store_cluster: dict[str, int]
    beta_store: np.ndarray                    # chains x draws x n_pairs
    beta_cluster: np.ndarray                  # chains x draws x n_cluster_keys
    laplace_scale: np.ndarray                 # chains x draws x n_products
    reward_sd: np.ndarray                     # chains x draws x n_products
    hyperparams: RbpHyperParams
    seed: int
    n_chains: int
    omitted_products: list[str] = field(default_factory=list)
    excluded_zero_records: int = 0
    convergence_warning: bool = False
    diagnostics_report: diagnostics.DiagnosticsReport | None = None

    def __post_init__(self):
        self._pair_index = {k: i for i, k in enumerate(self.pair_keys)}
        self._cluster_index = {k: i for i, k in enumerate(self.cluster_keys)}
        self._product_index = {p: i for i, p in enumerate(self.products)}

    def pair_draws(self, product: str, store: str) -> np.ndarray | None:
        idx = self._pair_index.get((product, store))
        if idx is None:
            return None
        return self.beta_store[:, :, idx].reshape(-1)

    def cluster_draws(self, product: str, cluster: int) -> np.ndarray | None:
        idx = self._cluster_index.get((product, cluster))
        if idx is None:
            return None
        return self.beta_cluster[:, :, idx].reshape(-1)

    def product_draws(self, product: str, which: str) -> np.ndarray:
        idx = self._product_index.get(product)
        if idx is None:
            raise UnknownProductError(product)
        arr = self.laplace_scale if which == "laplace" else self.reward_sd
        return arr[:, :, idx].reshape(-1)

    def knows_product(self, product: str) -> bool:
        return product in self._product_index

    def named_draws(self) -> dict[str, np.ndarray]:
        named = {}
        for i, (product, store) in enumerate(self.pair_keys):
            named[f"beta_store[{product},{store}]"] = self.beta_store[:, :, i]
        for i, (product, cluster) in enumerate(self.cluster_keys):
            named[f"beta_cluster[{product},{cluster}]"] = self.beta_cluster[:, :, i]
        for i, product in enumerate(self.products):
            named[f"laplace_scale[{product}]"] = self.laplace_scale[:, :, i]
            named[f"reward_sd[{product}]"] = self.reward_sd[:, :, i]
        return named

    def to_dict(self) -> dict:
        report = self.diagnostics_report
        return {
            "products": self.products,
            "pair_keys": [list(k) for k in self.pair_keys],
            "cluster_keys": [[p, int(c)] for p, c in self.cluster_keys],
            "store_cluster": {s: int(c) for s, c in sorted(self.store_cluster.items())},
            "draws": {
                "beta_store": self.beta_store.tolist(),
                "beta_cluster": self.beta_cluster.tolist(),
                "laplace_scale": self.laplace_scale.tolist(),
                "reward_sd": self.reward_sd.tolist(),
            },
            "hyperparams": self.hyperparams.to_dict(),
            "seed": self.seed,
            "n_chains": self.n_chains,
            "omitted_products": self.omitted_products,
            "excluded_zero_records": self.excluded_zero_records,
            "convergence_warning": self.convergence_warning,
            "diagnostics": None if report is None else {
                "worst_rhat": report.worst_rhat,
                "min_ess": report.min_ess,
                "passed": report.passed,
                "failing": report.failing,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RbpPosterior":
        post = cls(
            products=list(data["products"]),
            pair_keys=[tuple(k) for k in data["pair_keys"]],
            cluster_keys=[(p, int(c)) for p, c in data["cluster_keys"]],
            store_cluster={s: int(c) for s, c in data["store_cluster"].items()},
            beta_store=np.asarray(data["draws"]["beta_store"], dtype=float),
            beta_cluster=np.asarray(data["draws"]["beta_cluster"], dtype=float),
            laplace_scale=np.asarray(data["draws"]["laplace_scale"], dtype=float),
            reward_sd=np.asarray(data["draws"]["reward_sd"], dtype=float),
            hyperparams=RbpHyperParams(**data["hyperparams"]),
            seed=int(data["seed"]),
            n_chains=int(data["n_chains"]),
            omitted_products=list(data.get("omitted_products", [])),
            excluded_zero_records=int(data.get("excluded_zero_records", 0)),
            convergence_warning=bool(data.get("convergence_warning", False)),
        )
        return post

    @classmethod
    def from_json(cls, text: str) -> "RbpPosterior":
        return cls.from_dict(json.loads(text))


class _ModelIndex:
    """Flat index arrays tying observations to pairs, cluster keys, products."""

    def __init__(self, records: list[SalesRecord], store_cluster: Mapping[str, int]):
        missing = sorted({r.store_id for r in records} - set(store_cluster))
        if missing:
            raise ValueError(f"stores missing a cluster assignment: {missing}")
        self.products = sorted({r.product_id for r in records})
        prod_idx = {p: i for i, p in enumerate(self.products)}
        pair_set = sorted({(r.product_id, r.store_id) for r in records})
        self.pair_keys = pair_set
        pair_idx = {k: i for i, k in enumerate(pair_set)}
        cluster_set = sorted({(p, store_cluster[s]) for p, s in pair_set})
        self.cluster_keys = cluster_set
        ck_idx = {k: i for i, k in enumerate(cluster_set)}

        self.obs_pair = np.array([pair_idx[(r.product_id, r.store_id)] for r in records])
        self.obs_q = np.array([float(r.quantity_faced) for r in records])
        self.obs_r = np.array([r.units_sold for r in records])
        self.pair_product = np.array([prod_idx[p] for p, _ in pair_set])
        self.pair_cluster_key = np.array([ck_idx[(p, store_cluster[s])] for p, s in pair_set])
        self.ck_product = np.array([prod_idx[p] for p, _ in cluster_set])
        self.obs_product = self.pair_product[self.obs_pair]
        self.n_pairs = len(pair_set)
        self.n_ck = len(cluster_set)
        self.n_products = len(self.products)
        self.n_obs = len(records)


class _ChainState:
    def __init__(self, index: _ModelIndex, hp: RbpHyperParams, rng: np.random.Generator):
        self.idx = index
        self.hp = hp
        # least-squares-flavored inits, jittered per chain for overdispersion
        sums_qr = np.bincount(index.obs_pair, index.obs_q * index.obs_r, minlength=index.n_pairs)
        sums_qq = np.bincount(index.obs_pair, index.obs_q ** 2, minlength=index.n_pairs)
        beta0 = np.clip(sums_qr / np.maximum(sums_qq, 1e-12), 0.05, 50.0)
        beta0 *= np.exp(0.2 * rng.standard_normal(index.n_pairs))
        sums = np.bincount(index.pair_cluster_key, beta0, minlength=index.n_ck)
        counts = np.bincount(index.pair_cluster_key, minlength=index.n_ck)
        ck0 = np.clip(sums / np.maximum(counts, 1), 0.05, 50.0)
        resid = index.obs_r - index.obs_q * beta0[index.obs_pair]
        sig_sums = np.bincount(index.obs_product, resid ** 2, minlength=index.n_products)
        sig_counts = np.bincount(index.obs_product, minlength=index.n_products)
        sigma0 = np.clip(np.sqrt(sig_sums / np.maximum(sig_counts, 1)), 0.1, 50.0)
        sigma0 *= np.exp(0.2 * rng.standard_normal(index.n_products))

        self.log_beta = np.log(beta0)
        self.log_ck = np.log(ck0)
        self.log_b = np.log(np.full(index.n_products, 0.5)) + 0.2 * rng.standard_normal(index.n_products)
        self.log_sigma = np.log(sigma0)

        self.step_beta = np.full(index.n_pairs, 0.5)
        self.step_ck = np.full(index.n_ck, 0.5)
        self.step_b = np.full(index.n_products, 0.5)
        self.step_sigma = np.full(index.n_products, 0.5)

        self.obs_ll = self._obs_loglik(np.exp(self.log_beta), np.exp(self.log_sigma))
        self.pair_ll = np.bincount(index.obs_pair, self.obs_ll, minlength=index.n_pairs)

    def _obs_loglik(self, beta: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        idx = self.idx
        mean = idx.obs_q * beta[idx.obs_pair]
        return gamma_logpdf_mean_sd(idx.obs_r, mean, sigma[idx.obs_product])

    def _laplace_terms(self, beta, ck, b) -> np.ndarray:
        idx = self.idx
        return laplace_logpdf(beta, ck[idx.pair_cluster_key], b[idx.pair_product])

    def sweep(self, rng: np.random.Generator, adapt: bool, adapt_rate: float, target: float):
        idx, hp = self.idx, self.hp
        beta = np.exp(self.log_beta)
        ck = np.exp(self.log_ck)
        b = np.exp(self.log_b)
        sigma = np.exp(self.log_sigma)
        lap = self._laplace_terms(beta, ck, b)

        # store-level coefficients: conditionally independent across pairs
        prop = self.log_beta + self.step_beta * rng.standard_normal(idx.n_pairs)
        beta_p = np.exp(prop)
        obs_ll_p = self._obs_loglik(beta_p, sigma)
        pair_ll_p = np.bincount(idx.obs_pair, obs_ll_p, minlength=idx.n_pairs)
        lap_p = self._laplace_terms(beta_p, ck, b)
        delta = (pair_ll_p - self.pair_ll) + (lap_p - lap) + (prop - self.log_beta)
        accept = np.log(rng.random(idx.n_pairs)) < delta
        self.log_beta = np.where(accept, prop, self.log_beta)
        beta = np.exp(self.log_beta)
        self.obs_ll = np.where(accept[idx.obs_pair], obs_ll_p, self.obs_ll)
        self.pair_ll = np.where(accept, pair_ll_p, self.pair_ll)
        lap = np.where(accept, lap_p, lap)
        if adapt:
            self.step_beta *= np.exp(adapt_rate * (accept.astype(float) - target))

        # cluster-level coefficients: independent given store coefficients
        prop = self.log_ck + self.step_ck * rng.standard_normal(idx.n_ck)
        ck_p = np.exp(prop)
        lap_p = self._laplace_terms(beta, ck_p, b)
        delta_lap = np.bincount(idx.pair_cluster_key, lap_p - lap, minlength=idx.n_ck)
        prior = folded_normal_logpdf(ck_p, hp.mu0, hp.sigma0) - folded_normal_logpdf(ck, hp.mu0, hp.sigma0)
        delta = delta_lap + prior + (prop - self.log_ck)
        accept = np.log(rng.random(idx.n_ck)) < delta
        self.log_ck = np.where(accept, prop, self.log_ck)
        ck = np.exp(self.log_ck)
        lap = np.where(accept[idx.pair_cluster_key], lap_p, lap)
        if adapt:
            self.step_ck *= np.exp(adapt_rate * (accept.astype(float) - target))

        # per-product Laplace scales
        prop = self.log_b + self.step_b * rng.standard_normal(idx.n_products)
        b_p = np.exp(prop)
        lap_p = self._laplace_terms(beta, ck, b_p)
        delta_lap = np.bincount(idx.pair_product, lap_p - lap, minlength=idx.n_products)
        prior = folded_normal_logpdf(b_p, hp.mu1, hp.sigma1) - folded_normal_logpdf(b, hp.mu1, hp.sigma1)
        delta = delta_lap + prior + (prop - self.log_b)
        accept = np.log(rng.random(idx.n_products)) < delta
        self.log_b = np.where(accept, prop, self.log_b)
        lap = np.where(accept[idx.pair_product], lap_p, lap)
        if adapt:
            self.step_b *= np.exp(adapt_rate * (accept.astype(float) - target))

        # per-product reward dispersions
        prop = self.log_sigma + self.step_sigma * rng.standard_normal(idx.n_products)
        sigma_p = np.exp(prop)
        obs_ll_p = self._obs_loglik(beta, sigma_p)
        delta_ll = np.bincount(idx.obs_product, obs_ll_p - self.obs_ll, minlength=idx.n_products)
        prior = folded_normal_logpdf(sigma_p, hp.mu2, hp.sigma2) - folded_normal_logpdf(sigma, hp.mu2, hp.sigma2)
        delta = delta_ll + prior + (prop - self.log_sigma)
        accept = np.log(rng.random(idx.n_products)) < delta
        self.log_sigma = np.where(accept, prop, self.log_sigma)
        self.obs_ll = np.where(accept[idx.obs_product], obs_ll_p, self.obs_ll)
        self.pair_ll = np.bincount(idx.obs_pair, self.obs_ll, minlength=idx.n_pairs)
        if adapt:
            self.step_sigma *= np.exp(adapt_rate * (accept.astype(float) - target))


def fit_rbp(
    sales: Iterable[SalesRecord],
    clusters,
    hp: RbpHyperParams | None = None,
    sampler: SamplerConfig | None = None,
) -> RbpPosterior:
    """Sample the joint posterior of the payoff model.

    Records with zero units (clamped observations) are excluded before
    fitting since the Gamma likelihood has positive support; excluded
    counts and fully-zero products are listed on the returned posterior.
    A convergence warning flag is set, never raised, when any parameter's
    split R-hat exceeds 1.1.
    """
    hp = hp or RbpHyperParams()
    sampler = sampler or SamplerConfig()
    store_cluster = clusters.assignment if hasattr(clusters, "assignment") else dict(clusters)

    records = list(sales)
    all_products = sorted({r.product_id for r in records})
    usable = [r for r in records if r.units_sold > 0.0]
    excluded = len(records) - len(usable)
    kept_products = {r.product_id for r in usable}
    omitted = [p for p in all_products if p not in kept_products]
    if not usable:
        raise ValueError("no records with positive units_sold to fit")

    index = _ModelIndex(usable, store_cluster)
    n_draws = sampler.draws
    beta_store = np.empty((sampler.chains, n_draws, index.n_pairs))
    beta_cluster = np.empty((sampler.chains, n_draws, index.n_ck))
    laplace_scale = np.empty((sampler.chains, n_draws, index.n_products))
    reward_sd = np.empty((sampler.chains, n_draws, index.n_products))

    seed_seq = np.random.SeedSequence(sampler.seed)
    chain_seeds = seed_seq.spawn(sampler.chains)
    for c in range(sampler.chains):
        rng = np.random.default_rng(chain_seeds[c])
        state = _ChainState(index, hp, rng)
        for t in range(sampler.warmup):
            rate = min(0.25, (t + 1) ** -0.5)
            state.sweep(rng, adapt=True, adapt_rate=rate, target=sampler.target_accept)
        for t in range(n_draws):
            state.sweep(rng, adapt=False, adapt_rate=0.0, target=sampler.target_accept)
            beta_store[c, t] = np.exp(state.log_beta)
            beta_cluster[c, t] = np.exp(state.log_ck)
            laplace_scale[c, t] = np.exp(state.log_b)
            reward_sd[c, t] = np.exp(state.log_sigma)

    post = RbpPosterior(
        products=index.products,
        pair_keys=index.pair_keys,
        cluster_keys=index.cluster_keys,
        store_cluster={s: int(c) for s, c in store_cluster.items()},
        beta_store=beta_store,
        beta_cluster=beta_cluster,
        laplace_scale=laplace_scale,
        reward_sd=reward_sd,
        hyperparams=hp,
        seed=sampler.seed,
        n_chains=sampler.chains,
        omitted_products=omitted,
        excluded_zero_records=excluded,
    )
    report = diagnostics.diagnose(post.named_draws())
    post.diagnostics_report = report
    post.convergence_warning = not report.rhat_ok
    return post


def mcmc_diagnostics(post: RbpPosterior) -> diagnostics.DiagnosticsReport:
    """Split R-hat and ESS for every scalar parameter of a fitted posterior."""
    if post.n_chains < 2:
        report = diagnostics.diagnose(post.named_draws())
        report.single_chain = True
        return report
    return diagnostics.diagnose(post.named_draws())


def _predictive_rng(post_seed: int, product: str, store: str, quantity: int) -> np.random.Generator:
    key = [
        post_seed & 0xFFFFFFFF,
        zlib.crc32(product.encode()),
        zlib.crc32(store.encode()),
        quantity,
    ]
    return np.random.default_rng(np.random.SeedSequence(key))


def posterior_predictive(
    post: RbpPosterior,
    product: str,
    store: str,
    quantity: int,
    cluster: int | None = None,
) -> PredictiveSummary:
    """Predictive reward distribution for a product at a store and quantity.

    Uses store-level coefficient draws when the pair was observed;
    otherwise falls back to the cluster coefficient widened by a Laplace
    perturbation at the posterior scale (new-store prediction), and to the
    coefficient prior when the product was never seen in the cluster.
    Deterministic given the posterior's seed.
    """
    if quantity < 1:
        raise ValueError("quantity must be >= 1")
    if not post.knows_product(product):
        raise UnknownProductError(product)
    rng = _predictive_rng(post.seed, product, store, quantity)
    sigma = post.product_draws(product, "sigma")
    beta = post.pair_draws(product, store)
    source = "store"
    if beta is None:
        resolved = post.store_cluster.get(store, cluster)
        b_draws = post.product_draws(product, "laplace")
        center = None if resolved is None else post.cluster_draws(product, resolved)
        if center is None:
            hp = post.hyperparams
            center = np.abs(hp.mu0 + hp.sigma0 * rng.standard_normal(sigma.shape))
            source = "prior"
        else:
            source = "cluster"
        beta = truncated_laplace_positive(center, b_draws, rng)
    mean = np.maximum(quantity * beta, 1e-12)
    shape, rate = gamma_shape_rate(mean, np.maximum(sigma, 1e-12))
    draws = rng.gamma(shape, 1.0 / rate)
    return PredictiveSummary(
        product_id=product,
        store_id=store,
        quantity=quantity,
        mean=float(draws.mean()),
        sd=float(draws.std()),
        draws=draws,
        source=source,
    )


def prior_predictive(
    hp: RbpHyperParams, product: str, store: str, quantity: int, n_draws: int = 1000, seed: int = 0
) -> PredictiveSummary:
    """Predictive distribution for a product the posterior has never seen."""
    rng = _predictive_rng(seed, product, store, quantity)
    beta_ck = np.abs(hp.mu0 + hp.sigma0 * rng.standard_normal(n_draws))
    b = np.maximum(np.abs(hp.mu1 + hp.sigma1 * rng.standard_normal(n_draws)), 1e-6)
    beta = truncated_laplace_positive(beta_ck, b, rng)
    sigma = np.maximum(np.abs(hp.mu2 + hp.sigma2 * rng.standard_normal(n_draws)), 1e-12)
    mean = np.maximum(quantity * beta, 1e-12)
    shape, rate = gamma_shape_rate(mean, sigma)
    draws = rng.gamma(shape, 1.0 / rate)
    return PredictiveSummary(
        product_id=product,
        store_id=store,
        quantity=quantity,
        mean=float(draws.mean()),
        sd=float(draws.std()),
        draws=draws,
        source="prior",
    )


def make_pepf_scorer(
    post: RbpPosterior, store: str, lam: float = 1.0, cluster: int | None = None
) -> Callable[[str, int], PepfScore]:
    """Scorer over (product, quantity) with the cold-start fallback chain."""
    def scorer(product: str, quantity: int) -> PepfScore:
        try:
            summary = posterior_predictive(post, product, store, quantity, cluster=cluster)
        except UnknownProductError:
            summary = prior_predictive(
                post.hyperparams, product, store, quantity, seed=post.seed
            )
        return pepf(summary, lam)

    return scorer
