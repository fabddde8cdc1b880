"""Rank-normalized split R-hat, bulk/tail ESS, MCSE and E-BFMI.

Draw matrices are laid out as (iterations, chains).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, rankdata

from .errors import NumericError

EBFMI_THRESHOLD = 0.3


def split_chains(x: np.ndarray) -> np.ndarray:
    """Halve each chain; an odd middle draw is dropped."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 2:
        return x
    half = n // 2
    return np.concatenate([x[:half], x[n - half:]], axis=1)


def is_constant(x: np.ndarray) -> bool:
    x = np.asarray(x, dtype=float)
    return bool(np.abs(np.max(x) - np.min(x)) < np.finfo(float).eps)


def _bad(x: np.ndarray) -> bool:
    return (not np.all(np.isfinite(x))) or is_constant(x)


def z_scale(x: np.ndarray) -> np.ndarray:
    r = rankdata(x, method="average").reshape(x.shape)
    return norm.ppf((r - 3.0 / 8.0) / (x.size + 0.25))


def fold(x: np.ndarray) -> np.ndarray:
    return np.abs(x - np.median(x))


def rhat_basic(x: np.ndarray) -> float:
    """Classic potential scale reduction on the given (already split) chains."""
    x = np.asarray(x, dtype=float)
    if _bad(x):
        return float("nan")
    n = x.shape[0]
    means = x.mean(axis=0)
    var_between = n * np.var(means, ddof=1)
    var_within = np.mean(np.var(x, axis=0, ddof=1))
    return float(np.sqrt((var_between / var_within + n - 1) / n))


def rhat(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if _bad(x):
        return float("nan")
    bulk = rhat_basic(z_scale(split_chains(x)))
    tail = rhat_basic(z_scale(split_chains(fold(x))))
    return float(max(bulk, tail))


def autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance (divisor N) by FFT with zero padding."""
    x = np.asarray(x, dtype=float)
    n = x.size
    m = 1
    while m < n:
        m *= 2
    yc = x - x.mean()
    f = np.fft.rfft(yc, 2 * m)
    ac = np.fft.irfft(f * np.conj(f), 2 * m)[:n]
    return ac / n


def ess_basic(x: np.ndarray) -> float:
    """Effective sample size of the given chains via Geyer's initial monotone sequence."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, chains = x.shape
    if n < 3 or _bad(x):
        return float("nan")
    acov = np.stack([autocovariance(x[:, j]) for j in range(chains)], axis=1)
    acov_means = acov.mean(axis=1)
    mean_var = acov_means[0] * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if chains > 1:
        var_plus += np.var(x.mean(axis=0), ddof=1)
    rho = np.zeros(n)
    t = 0
    rho_even = 1.0
    rho[0] = rho_even
    rho_odd = 1.0 - (mean_var - acov_means[1]) / var_plus
    rho[1] = rho_odd
    while t < n - 5 and not np.isnan(rho_even + rho_odd) and rho_even + rho_odd > 0:
        t += 2
        rho_even = 1.0 - (mean_var - acov_means[t]) / var_plus
        rho_odd = 1.0 - (mean_var - acov_means[t + 1]) / var_plus
        if rho_even + rho_odd >= 0:
            rho[t] = rho_even
            rho[t + 1] = rho_odd
    max_t = t
    if rho_even > 0:
        rho[max_t] = rho_even
    t = 0
    while t <= max_t - 4:
        t += 2
        if rho[t] + rho[t + 1] > rho[t - 2] + rho[t - 1]:
            rho[t] = (rho[t - 2] + rho[t - 1]) / 2.0
            rho[t + 1] = rho[t]
    total = chains * n
    tau = -1.0 + 2.0 * np.sum(rho[:max_t]) + rho[max_t]
    tau = max(tau, 1.0 / np.log10(total))
    return float(total / tau)


def ess_bulk(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if _bad(x):
        return float("nan")
    return ess_basic(z_scale(split_chains(x)))


def quantile7(x: np.ndarray, p: float) -> float:
    return float(np.quantile(np.asarray(x, dtype=float).ravel(), p, method="linear"))


def ess_quantile(x: np.ndarray, p: float) -> float:
    x = np.asarray(x, dtype=float)
    if _bad(x):
        return float("nan")
    ind = (x <= quantile7(x, p)).astype(float)
    return ess_basic(split_chains(ind))


def ess_tail(x: np.ndarray) -> float:
    return float(min(ess_quantile(x, 0.05), ess_quantile(x, 0.95)))


def ess_mean(x: np.ndarray) -> float:
    return ess_basic(split_chains(x))


def mcse_mean(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    e = ess_mean(x)
    if np.isnan(e):
        return float("nan")
    return float(np.std(x.ravel(), ddof=1) / np.sqrt(e))


def ebfmi(energy: np.ndarray) -> float:
    e = np.asarray(energy, dtype=float)
    denom = np.sum((e - e.mean()) ** 2)
    if denom == 0:
        return float("nan")
    return float(np.sum(np.diff(e) ** 2) / denom)


@dataclass
class ParameterDiagnostics:
    parameter: str
    rhat: float
    ess_bulk: float
    ess_tail: float
    zero_variance: bool


def check_length(n_iter: int, n_chains: int) -> None:
    if n_iter // 2 < 8:
        raise NumericError(f"too few iterations for diagnostics ({n_iter}); need at least 8 per split chain")


def parameter_diagnostics(names, draws: np.ndarray) -> list[ParameterDiagnostics]:
    """``draws`` has shape (iterations, chains, parameters)."""
    n_iter, n_chains, _ = draws.shape
    check_length(n_iter, n_chains)
    out = []
    for j, name in enumerate(names):
        x = draws[:, :, j]
        zero = bool(np.all(np.isfinite(x)) and is_constant(x))
        out.append(ParameterDiagnostics(name, rhat(x), ess_bulk(x), ess_tail(x), zero))
    return out
