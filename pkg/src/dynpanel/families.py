"""Observation families: log-densities with analytic gradients, means and RNG.

All functions are elementwise over numpy arrays. ``aux`` is the family's
extra positive parameter (gaussian sd, negbin dispersion, gamma shape or
beta precision); it is ignored by families that have none. Categorical
linear predictors carry a trailing axis of length K - 1 (first category is
the reference).
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, gammaln, logsumexp, psi, softmax

from .errors import DataError

LOG_2PI = float(np.log(2.0 * np.pi))

AUX_NAME = {"gaussian": "sigma", "negbin": "phi", "gamma": "phi", "beta": "phi"}
LINK = {
    "gaussian": "identity",
    "poisson": "log",
    "negbin": "log",
    "exponential": "log",
    "gamma": "log",
    "bernoulli": "logit",
    "binomial": "logit",
    "beta": "logit",
    "categorical": "softmax",
}
COUNT_FAMILIES = ("poisson", "negbin", "binomial", "bernoulli")


def has_aux(family: str) -> bool:
    return family in AUX_NAME


def _log1pexp(x):
    return np.logaddexp(0.0, x)


def logpdf(family: str, y, eta, aux=None, trials=None):
    """Return (log density, d/d eta, d/d aux) elementwise.

    ``d/d aux`` is None for families without an auxiliary parameter.
    """
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if family == "gaussian":
        r = y - eta
        inv = 1.0 / aux
        lp = -0.5 * LOG_2PI - np.log(aux) - 0.5 * (r * inv) ** 2
        return lp, r * inv * inv, -inv + r * r * inv ** 3
    if family == "poisson":
        mu = np.exp(eta)
        return y * eta - mu - gammaln(y + 1.0), y - mu, None
    if family == "negbin":
        phi = aux
        mu = np.exp(eta)
        log_pm = np.logaddexp(np.log(phi), eta)
        lp = (gammaln(y + phi) - gammaln(phi) - gammaln(y + 1.0)
              + phi * (np.log(phi) - log_pm) + y * (eta - log_pm))
        denom = phi + mu
        d_eta = phi * (y - mu) / denom
        d_phi = psi(y + phi) - psi(phi) + np.log(phi) - log_pm + 1.0 - (y + phi) / denom
        return lp, d_eta, d_phi
    if family == "bernoulli":
        p = expit(eta)
        return y * eta - _log1pexp(eta), y - p, None
    if family == "binomial":
        n = np.asarray(trials, dtype=float)
        p = expit(eta)
        lp = (gammaln(n + 1.0) - gammaln(y + 1.0) - gammaln(n - y + 1.0)
              + y * eta - n * _log1pexp(eta))
        return lp, y - n * p, None
    if family == "exponential":
        e = y * np.exp(-eta)
        return -eta - e, -1.0 + e, None
    if family == "gamma":
        phi = aux
        e = y * np.exp(-eta)
        lp = phi * np.log(phi) - phi * eta - gammaln(phi) + (phi - 1.0) * np.log(y) - phi * e
        d_eta = -phi + phi * e
        d_phi = np.log(phi) + 1.0 - eta - psi(phi) + np.log(y) - e
        return lp, d_eta, d_phi
    if family == "beta":
        phi = aux
        mu = expit(eta)
        a = mu * phi
        b = (1.0 - mu) * phi
        ly = np.log(y)
        l1y = np.log1p(-y)
        lp = gammaln(phi) - gammaln(a) - gammaln(b) + (a - 1.0) * ly + (b - 1.0) * l1y
        pa, pb = psi(a), psi(b)
        d_eta = phi * mu * (1.0 - mu) * (pb - pa + ly - l1y)
        d_phi = psi(phi) - mu * pa - (1.0 - mu) * pb + mu * ly + (1.0 - mu) * l1y
        return lp, d_eta, d_phi
    if family == "categorical":
        return categorical_logpdf(y, eta)
    raise ValueError(f"unknown family {family!r}")


def categorical_logpdf(y, eta):
    """``y`` holds 0-based category codes; ``eta`` has shape (..., K - 1)."""
    y = np.asarray(y).astype(int)
    full = np.concatenate([np.zeros(eta.shape[:-1] + (1,)), eta], axis=-1)
    lse = logsumexp(full, axis=-1)
    lp = np.take_along_axis(full, y[..., None], axis=-1)[..., 0] - lse
    prob = np.exp(full - lse[..., None])
    onehot = np.zeros_like(full)
    np.put_along_axis(onehot, y[..., None], 1.0, axis=-1)
    return lp, (onehot - prob)[..., 1:], None


def mean(family: str, eta, aux=None, trials=None):
    """Expected value of the response given the linear predictor."""
    if family == "gaussian":
        return np.asarray(eta, dtype=float)
    if family in ("poisson", "negbin", "exponential", "gamma"):
        return np.exp(eta)
    if family in ("bernoulli", "beta"):
        return expit(eta)
    if family == "binomial":
        return np.asarray(trials, dtype=float) * expit(eta)
    if family == "categorical":
        return category_probs(eta)
    raise ValueError(f"unknown family {family!r}")


def category_probs(eta):
    full = np.concatenate([np.zeros(np.shape(eta)[:-1] + (1,)), eta], axis=-1)
    return softmax(full, axis=-1)


def simulate(family: str, eta, aux, trials, rng: np.random.Generator):
    """Draw responses; missing ``eta`` cells give NaN."""
    eta = np.asarray(eta, dtype=float)
    if family == "categorical":
        bad = np.isnan(eta).any(axis=-1)
        p = category_probs(np.where(np.isnan(eta), 0.0, eta))
        u = rng.random(p.shape[:-1])
        code = (np.cumsum(p, axis=-1) < u[..., None]).sum(axis=-1)
        code = np.minimum(code, p.shape[-1] - 1).astype(float)
        return np.where(bad, np.nan, code)
    bad = np.isnan(eta)
    if aux is not None:
        aux = np.broadcast_to(np.asarray(aux, dtype=float), eta.shape)
        bad = bad | np.isnan(aux)
    if family == "binomial":
        trials = np.broadcast_to(np.asarray(trials, dtype=float), eta.shape)
        bad = bad | np.isnan(trials)
    e = np.where(bad, 0.0, eta)
    a = np.where(bad, 1.0, aux) if aux is not None else None
    if family == "gaussian":
        out = e + a * rng.standard_normal(e.shape)
    elif family == "poisson":
        out = rng.poisson(np.exp(e)).astype(float)
    elif family == "negbin":
        mu = np.exp(e)
        lam = rng.gamma(a, mu / a)
        out = rng.poisson(lam).astype(float)
    elif family == "bernoulli":
        out = (rng.random(e.shape) < expit(e)).astype(float)
    elif family == "binomial":
        n = np.where(bad, 0, trials).astype(np.int64)
        out = rng.binomial(n, expit(e)).astype(float)
    elif family == "exponential":
        out = rng.exponential(np.exp(e))
    elif family == "gamma":
        out = rng.gamma(a, np.exp(e) / a)
    elif family == "beta":
        mu = expit(e)
        out = rng.beta(mu * a, (1.0 - mu) * a)
    else:
        raise ValueError(f"unknown family {family!r}")
    return np.where(bad, np.nan, out)


def link_transform(family: str, y: np.ndarray, trials=None) -> np.ndarray:
    """Responses mapped to the linear-predictor scale, used for prior scales."""
    y = np.asarray(y, dtype=float)
    if family == "gaussian":
        return y
    if family in ("poisson", "negbin"):
        return np.log(np.maximum(y, 0.5))
    if family in ("exponential", "gamma"):
        return np.log(y)
    if family == "beta":
        return np.log(y) - np.log1p(-y)
    raise DataError(f"no link transform for family {family!r}")


def link(family: str, m: float) -> float:
    """Link function applied to a mean value (clipped to stay finite)."""
    if family == "gaussian":
        return float(m)
    if family in ("poisson", "negbin", "exponential", "gamma"):
        return float(np.log(m)) if m > 0 else 0.0
    if family in ("bernoulli", "beta", "binomial"):
        p = float(np.clip(m, 0.01, 0.99))
        return float(np.log(p / (1.0 - p)))
    raise ValueError(f"unknown family {family!r}")
