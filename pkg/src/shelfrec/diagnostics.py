"""Split R-hat and effective sample size for MCMC draw arrays.

Draw arrays are shaped (chains, draws). R-hat follows the split-chain
between/within variance form; ESS uses FFT autocovariances combined across
chains with Geyer's initial positive sequence truncation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import next_fast_len, rfft, irfft

RHAT_THRESHOLD = 1.1
ESS_THRESHOLD = 100.0


def _split_chains(draws: np.ndarray) -> np.ndarray:
    chains, n = draws.shape
    half = n // 2
    if half == 0:
        return draws
    return np.concatenate([draws[:, :half], draws[:, half:2 * half]], axis=0)


def split_rhat(draws: np.ndarray) -> float:
    """Potential scale reduction on split chains; inf when chains disagree
    but have no within-chain variance, 1.0 for identical constant chains."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.shape[0] < 2 and draws.shape[1] < 4:
        return math.nan
    split = _split_chains(draws)
    m, n = split.shape
    if n < 2:
        return math.nan
    chain_means = split.mean(axis=1)
    chain_vars = split.var(axis=1, ddof=1)
    w = chain_vars.mean()
    b = n * chain_means.var(ddof=1)
    if w <= 0.0:
        return 1.0 if b <= 0.0 else math.inf
    var_plus = (n - 1) / n * w + b / n
    return math.sqrt(var_plus / w)


def _autocov(x: np.ndarray) -> np.ndarray:
    n = len(x)
    x = x - x.mean()
    size = next_fast_len(2 * n)
    f = rfft(x, size)
    acov = irfft(f * np.conj(f), size)[:n].real
    return acov / n


def effective_sample_size(draws: np.ndarray) -> float:
    """ESS across all chains using the initial positive sequence estimator."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    split = _split_chains(draws)
    m, n = split.shape
    if n < 4:
        return float(m * n)
    acov = np.stack([_autocov(split[i]) for i in range(m)])
    mean_acov = acov.mean(axis=0)
    w = mean_acov[0]
    chain_means = split.mean(axis=1)
    b_over_n = chain_means.var(ddof=1) if m > 1 else 0.0
    var_plus = w * (n - 1) / n + b_over_n
    if var_plus <= 0.0:
        return float(m * n)
    rho = 1.0 - (w - mean_acov) / var_plus
    rho[0] = 1.0

    # Geyer pairs: accumulate while rho[2k] + rho[2k+1] stays positive,
    # enforcing a non-increasing sequence of pair sums.
    tau = 0.0
    prev_pair = math.inf
    for k in range(0, (n - 1) // 2):
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair < 0.0:
            break
        pair = min(pair, prev_pair)
        prev_pair = pair
        tau += 2.0 * pair
    tau = max(tau - 1.0, 1e-8)
    return float(m * n / tau)


@dataclass
class DiagnosticsReport:
    rhat: dict[str, float]
    ess: dict[str, float]
    worst_rhat: float
    min_ess: float
    rhat_ok: bool
    ess_ok: bool
    failing: list[str] = field(default_factory=list)
    single_chain: bool = False

    @property
    def passed(self) -> bool:
        return self.rhat_ok and self.ess_ok


def diagnose(named_draws: dict[str, np.ndarray]) -> DiagnosticsReport:
    """Per-parameter split R-hat / ESS with pass-fail thresholds.

    named_draws maps a parameter name to a (chains, draws) array. With a
    single chain R-hat is unavailable and the report is flagged.
    """
    rhat: dict[str, float] = {}
    ess: dict[str, float] = {}
    failing = []
    single = False
    for name, arr in named_draws.items():
        arr = np.atleast_2d(np.asarray(arr, dtype=float))
        if arr.shape[0] < 2:
            single = True
            rhat[name] = math.nan
        else:
            rhat[name] = split_rhat(arr)
        ess[name] = effective_sample_size(arr)
        bad_rhat = not single and not (rhat[name] <= RHAT_THRESHOLD)
        if bad_rhat or ess[name] < ESS_THRESHOLD:
            failing.append(name)
    finite_rhats = [v for v in rhat.values() if not math.isnan(v)]
    worst = max(finite_rhats) if finite_rhats else math.nan
    min_ess = min(ess.values()) if ess else math.nan
    rhat_ok = (not single) and bool(finite_rhats) and worst <= RHAT_THRESHOLD
    ess_ok = bool(ess) and min_ess >= ESS_THRESHOLD
    return DiagnosticsReport(
        rhat=rhat,
        ess=ess,
        worst_rhat=worst,
        min_ess=min_ess,
        rhat_ok=rhat_ok,
        ess_ok=ess_ok,
        failing=failing,
        single_chain=single,
    )
