"""Joint log posterior over unconstrained parameters, with analytic gradients.

Parameter blocks per stochastic channel (S linear predictors, S = K - 1 for
categorical channels and 1 otherwise):

    a            (S,)          intercept level at the first modelled time
    omega_alpha  (S, D - 1)    time-varying intercept spline (leading 0 implicit)
    tau_alpha    (S,)          positive
    beta         (S, Kf)
    omega        (S, Kv, D)    spline coefficients of time-varying effects
    tau          (S, Kv)       positive
    aux          ()            sigma or phi, positive

Shared random-effect blocks: sigma_nu (M,) positive, nu (N, M) and the
unconstrained Cholesky factor of the correlation matrix, M(M-1)/2 values.
Under the non-centered variants ``omega``/``omega_alpha`` hold standardized
random-walk increments and ``nu`` holds standard normal scores.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from . import families
from .design import ChannelDesign, DesignSet
from .errors import NumericError, PriorError
from .names import ParameterName, time_label
from .priors import PriorSpec, check_priors, default_priors_for_design, logpdf_grad, parse_prior

HALF_LOG_2PI = 0.5 * families.LOG_2PI


@dataclass
class Block:
    key: str
    channel: int
    shape: tuple
    positive: bool
    start: int = 0

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1

    @property
    def sl(self) -> slice:
        return slice(self.start, self.start + self.size)


class _ChannelPlan:
    def __init__(self, cd: ChannelDesign, ds: DesignSet, m_idx: list[int]):
        self.cd = cd
        self.family = cd.family
        self.S = cd.n_cat
        self.Kf = len(cd.fixed)
        self.Kv = len(cd.varying)
        self.n = cd.n_obs
        self.gidx = cd.gidx
        self.y = cd.y
        self.Xf = cd.Xf
        self.Xv = cd.Xv
        self.Xr = np.column_stack([np.ones(self.n), cd.Xr]) if cd.random_icpt else cd.Xr
        self.offset = cd.offset
        self.trials = cd.trials
        self.m_idx = np.asarray(m_idx, dtype=int)
        self.blocks: dict[str, Block] = {}
        if ds.spline is not None:
            self.Bn = ds.spline.B[cd.tidx - ds.fixed]
        else:
            self.Bn = np.zeros((self.n, 0))


def cpc_forward(y: np.ndarray, M: int) -> tuple[np.ndarray, np.ndarray]:
    """Canonical partial correlations to a Cholesky factor of a correlation matrix."""
    z = np.tanh(y)
    L = np.zeros((M, M))
    L[0, 0] = 1.0
    k = 0
    for i in range(1, M):
        s = 1.0
        for j in range(i):
            L[i, j] = z[k] * np.sqrt(s)
            s *= 1.0 - z[k] ** 2
            k += 1
        L[i, i] = np.sqrt(s)
    return z, L


def cpc_logdensity_grad(y: np.ndarray, M: int, eta: float, gL: np.ndarray):
    """log Jacobian + LKJ-Cholesky log density, and d/dy including ``gL`` (dlp/dL)."""
    z, L = cpc_forward(y, M)
    sech2 = 1.0 / np.cosh(y) ** 2
    ratio = 0.5 * np.sinh(2.0 * y)  # z / (1 - z^2)
    lp = 0.0
    dy = np.zeros_like(y)
    k0 = 0
    for i in range(1, M):
        ks = np.arange(k0, k0 + i)
        coef = 1.0 + 0.5 * (i - 1 - np.arange(i)) + 0.5 * (M - i - 1 + 2.0 * (eta - 1.0))
        lp += float(np.sum(coef * np.log(sech2[ks])))
        dy[ks] += -2.0 * z[ks] * coef
        s = np.concatenate([[1.0], np.cumprod(sech2[ks])])
        row = gL[i, : i + 1] * L[i, : i + 1]
        tail = np.cumsum(row[::-1])[::-1]  # tail[j] = sum_{j' >= j} row[j']
        dz = gL[i, :i] * np.sqrt(s[:i]) - ratio[ks] * tail[1:]
        dy[ks] += dz * sech2[ks]
        k0 += i
    return lp, dy, L


class Model:
    """Log posterior of a dynamic multivariate panel model."""

    def __init__(self, ds: DesignSet, priors: Optional[Sequence[PriorSpec]] = None):
        self.ds = ds
        f = ds.formula
        self.defaults = default_priors_for_design(ds)
        self.priors = check_priors(priors, self.defaults) if priors is not None else list(self.defaults)
        self.spline_nc = bool(f.splines.noncentered) if f.splines is not None else False
        rc = f.random_config
        self.random_nc = rc.noncentered
        self.registry = ds.random_registry
        self.M = len(self.registry)
        self.correlated = rc.correlated and self.M >= 2
        self.N = ds.N
        self.D = ds.spline.df if ds.spline is not None else 0
        self.blocks: list[Block] = []
        self.plans: list[_ChannelPlan] = []
        m = 0
        for ci, cd in enumerate(ds.channels):
            mc = len(cd.random_labels)
            plan = _ChannelPlan(cd, ds, list(range(m, m + mc)))
            m += mc
            S = plan.S
            if cd.has_alpha:
                self._add(plan, "a", ci, (S,), False)
            if cd.varying_icpt:
                self._add(plan, "omega_alpha", ci, (S, self.D - 1), False)
                self._add(plan, "tau_alpha", ci, (S,), True)
            if plan.Kf:
                self._add(plan, "beta", ci, (S, plan.Kf), False)
            if plan.Kv:
                self._add(plan, "omega", ci, (S, plan.Kv, self.D), False)
                self._add(plan, "tau", ci, (S, plan.Kv), True)
            if families.has_aux(cd.family):
                self._add(plan, "aux", ci, (), True)
            self.plans.append(plan)
        self.shared: dict[str, Block] = {}
        if self.M:
            self.shared["sigma_nu"] = self._add(None, "sigma_nu", -1, (self.M,), True)
            self.shared["nu"] = self._add(None, "nu", -1, (self.N, self.M), False)
            if self.correlated:
                self.shared["L"] = self._add(None, "L", -1, (self.M * (self.M - 1) // 2,), False)
        self.dim = sum(b.size for b in self.blocks)
        pos = [np.arange(b.start, b.start + b.size) for b in self.blocks if b.positive]
        self.pos_idx = np.concatenate(pos) if pos else np.zeros(0, dtype=int)
        self._compile_priors()
        self._build_outputs()

    def _add(self, plan, key, ci, shape, positive) -> Block:
        b = Block(key, ci, shape, positive, sum(x.size for x in self.blocks))
        self.blocks.append(b)
        if plan is not None:
            plan.blocks[key] = b
        return b

    # priors -----------------------------------------------------------------
    def _prior_target(self, p: PriorSpec) -> Optional[int]:
        if p.type == "corr_nu":
            return None
        if p.type == "sigma_nu":
            for m, (r, lab) in enumerate(self.registry):
                if p.parameter == f"sigma_nu_{r}_{lab}":
                    return self.shared["sigma_nu"].start + m
        for plan in self.plans:
            cd = plan.cd
            if cd.response != p.response:
                continue
            cats = cd.categories[1:] if cd.categories else [""]
            s = cats.index(p.category) if p.category in cats else 0
            sfx = f"_{p.category}" if p.category else ""
            b = plan.blocks
            if p.type == "alpha":
                return b["a"].start + s
            if p.type == "tau_alpha":
                return b["tau_alpha"].start + s
            if p.type in ("sigma", "phi"):
                return b["aux"].start
            cols = cd.fixed if p.type == "beta" else cd.varying
            for k, col in enumerate(cols):
                name = f"{p.type}_{cd.response}_{col.label}{sfx}"
                if name == p.parameter:
                    if p.type == "beta":
                        return b["beta"].start + s * plan.Kf + k
                    if p.type == "delta":
                        return b["omega"].start + (s * plan.Kv + k) * self.D
                    return b["tau"].start + s * plan.Kv + k
        raise PriorError(f"cannot map prior for {p.parameter!r} to a model parameter")

    def _compile_priors(self) -> None:
        groups: dict[str, tuple[list[int], list[tuple]]] = {}
        self.lkj_eta = 1.0
        for p in self.priors:
            dist = parse_prior(p.prior)
            idx = self._prior_target(p)
            if idx is None:
                self.lkj_eta = dist.args[0]
                continue
            g = groups.setdefault(dist.name, ([], []))
            g[0].append(idx)
            g[1].append(dist.args)
        self.prior_groups = [(name, np.array(ix, dtype=int), np.array(args, dtype=float))
                             for name, (ix, args) in groups.items()]

    # evaluation ---------------------------------------------------------------
    def log_prob(self, theta: np.ndarray) -> float:
        return self.log_prob_grad(theta)[0]

    def log_prob_grad(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        # far-out proposals overflow; the sampler treats them as divergent
        with np.errstate(all="ignore"):
            return self._log_prob_grad(theta)

    def _log_prob_grad(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        val = theta.copy()
        val[self.pos_idx] = np.exp(theta[self.pos_idx])
        gval = np.zeros_like(theta)
        lp = float(theta[self.pos_idx].sum())
        for name, idx, args in self.prior_groups:
            l, g = logpdf_grad(name, val[idx], args)
            lp += float(l.sum())
            gval[idx] += g
        nu = np.zeros((self.N, 0))
        if self.M:
            nu, lp_re, backward = self._random_forward(val)
            lp += lp_re
        gnu = np.zeros_like(nu)
        for plan in self.plans:
            lp += self._channel(plan, val, gval, nu, gnu)
        if self.M:
            backward(gnu, gval)
        grad = gval.copy()
        grad[self.pos_idx] = gval[self.pos_idx] * val[self.pos_idx] + 1.0
        if not np.isfinite(lp):
            return -np.inf, grad
        return lp, grad

    def _spline_coefs(self, plan, val):
        b = plan.blocks
        S, Kv, D = plan.S, plan.Kv, self.D
        out = {}
        if plan.Kv:
            w = val[b["omega"].sl].reshape(S, Kv, D)
            tau = val[b["tau"].sl].reshape(S, Kv)
            if self.spline_nc:
                cs = np.cumsum(w[..., 1:], axis=-1)
                omega = np.concatenate([w[..., :1], w[..., :1] + tau[..., None] * cs], axis=-1)
            else:
                cs = None
                omega = w
            out["omega"] = (w, tau, cs, omega)
        if plan.cd.varying_icpt:
            w = val[b["omega_alpha"].sl].reshape(S, D - 1)
            ta = val[b["tau_alpha"].sl]
            if self.spline_nc:
                cs = np.cumsum(w, axis=-1)
                oa = ta[:, None] * cs
            else:
                cs = None
                oa = w
            out["omega_alpha"] = (w, ta, cs, oa)
        return out

    def _channel(self, plan: _ChannelPlan, val, gval, nu, gnu) -> float:
        cd = plan.cd
        b = plan.blocks
        S, n = plan.S, plan.n
        sp = self._spline_coefs(plan, val)
        lp = 0.0
        # random-walk priors on spline coefficients
        d_omega = d_oa = None
        if "omega" in sp:
            w, tau, cs, omega = sp["omega"]
            d_omega = np.zeros_like(omega)
            if self.spline_nc:
                inc = w[..., 1:]
                lp += float(-0.5 * np.sum(inc * inc)) - inc.size * HALF_LOG_2PI
            else:
                diff = omega[..., 1:] - omega[..., :-1]
                t2 = tau[..., None] ** 2
                lp += float(np.sum(-0.5 * diff * diff / t2) - (self.D - 1) * np.sum(np.log(tau))) \
                    - diff.size * HALF_LOG_2PI
                gd = -diff / t2
                d_omega[..., 1:] += gd
                d_omega[..., :-1] -= gd
                gval[b["tau"].sl] += (np.sum(diff * diff, axis=-1) / tau ** 3 - (self.D - 1) / tau).ravel()
        if "omega_alpha" in sp:
            w, ta, cs, oa = sp["omega_alpha"]
            d_oa = np.zeros_like(oa)
            if self.spline_nc:
                lp += float(-0.5 * np.sum(w * w)) - w.size * HALF_LOG_2PI
            else:
                full = np.concatenate([np.zeros((S, 1)), oa], axis=-1)
                diff = full[:, 1:] - full[:, :-1]
                t2 = ta[:, None] ** 2
                lp += float(np.sum(-0.5 * diff * diff / t2) - (self.D - 1) * np.sum(np.log(ta))) \
                    - diff.size * HALF_LOG_2PI
                gd = -diff / t2
                d_full = np.zeros_like(full)
                d_full[:, 1:] += gd
                d_full[:, :-1] -= gd
                d_oa += d_full[:, 1:]
                gval[b["tau_alpha"].sl] += np.sum(diff * diff, axis=-1) / ta ** 3 - (self.D - 1) / ta
        if n:
            eta = np.zeros((n, S))
            if plan.offset is not None:
                eta += plan.offset[:, None]
            if cd.has_alpha:
                eta += val[b["a"].sl][None, :]
                if cd.varying_icpt:
                    eta += plan.Bn[:, 1:] @ sp["omega_alpha"][3].T
            if plan.Kf:
                beta = val[b["beta"].sl].reshape(S, plan.Kf)
                eta += plan.Xf @ beta.T
            if plan.Kv:
                omega = sp["omega"][3]
                Q = (plan.Bn @ omega.reshape(S * plan.Kv, self.D).T).reshape(n, S, plan.Kv)
                eta += np.einsum("nsk,nk->ns", Q, plan.Xv)
            if len(plan.m_idx):
                eta[:, 0] += np.sum(nu[plan.gidx][:, plan.m_idx] * plan.Xr, axis=1)
            aux = val[b["aux"].start] if "aux" in b else None
            if plan.family == "categorical":
                ll, g, _ = families.categorical_logpdf(plan.y, eta)
                daux = None
            else:
                ll, g1, daux = families.logpdf(plan.family, plan.y, eta[:, 0], aux, plan.trials)
                g = g1[:, None]
            lp += float(np.sum(ll))
            if cd.has_alpha:
                gval[b["a"].sl] += g.sum(axis=0)
                if cd.varying_icpt:
                    d_oa += g.T @ plan.Bn[:, 1:]
            if plan.Kf:
                gval[b["beta"].sl] += (g.T @ plan.Xf).ravel()
            if plan.Kv:
                W = (g[:, :, None] * plan.Xv[:, None, :]).reshape(n, S * plan.Kv)
                d_omega += (W.T @ plan.Bn).reshape(S, plan.Kv, self.D)
            if len(plan.m_idx):
                for j, m in enumerate(plan.m_idx):
                    gnu[:, m] += np.bincount(plan.gidx, g[:, 0] * plan.Xr[:, j], minlength=self.N)
            if daux is not None:
                gval[b["aux"].start] += float(np.sum(daux))
        # map spline gradients back to the sampled blocks
        if d_omega is not None:
            w, tau, cs, omega = sp["omega"]
            if self.spline_nc:
                dw = np.empty_like(w)
                dw[..., 0] = d_omega.sum(axis=-1)
                rc = np.cumsum(d_omega[..., 1:][..., ::-1], axis=-1)[..., ::-1]
                dw[..., 1:] = tau[..., None] * rc - w[..., 1:]
                gval[b["tau"].sl] += np.sum(d_omega[..., 1:] * cs, axis=-1).ravel()
                gval[b["omega"].sl] += dw.ravel()
            else:
                gval[b["omega"].sl] += d_omega.ravel()
        if d_oa is not None:
            w, ta, cs, oa = sp["omega_alpha"]
            if self.spline_nc:
                rc = np.cumsum(d_oa[:, ::-1], axis=-1)[:, ::-1]
                gval[b["omega_alpha"].sl] += (ta[:, None] * rc - w).ravel()
                gval[b["tau_alpha"].sl] += np.sum(d_oa * cs, axis=-1)
            else:
                gval[b["omega_alpha"].sl] += d_oa.ravel()
        return lp

    def _random_forward(self, val):
        M, N = self.M, self.N
        sn = val[self.shared["sigma_nu"].sl]
        raw = val[self.shared["nu"].sl].reshape(N, M)
        lp = -N * M * HALF_LOG_2PI
        if self.correlated:
            y = val[self.shared["L"].sl]
            lp_l, _, L = cpc_logdensity_grad(y, M, self.lkj_eta, np.zeros((M, M)))
            lp += lp_l
        else:
            L = np.eye(M)

        def finish(gL, gval):
            if self.correlated:
                _, dy, _ = cpc_logdensity_grad(y, M, self.lkj_eta, gL)
                gval[self.shared["L"].sl] += dy

        if self.random_nc:
            zl = raw @ L.T
            nu = sn * zl
            lp += float(-0.5 * np.sum(raw * raw))

            def backward(gnu, gval):
                A = gnu * sn
                gval[self.shared["nu"].sl] += (A @ L - raw).ravel()
                gval[self.shared["sigma_nu"].sl] += np.sum(gnu * zl, axis=0)
                finish(np.tril(A.T @ raw), gval)
        else:
            nu = raw
            w = raw / sn
            u = solve_triangular(L, w.T, lower=True) if self.correlated else w.T
            lp += float(-0.5 * np.sum(u * u) - N * np.sum(np.log(sn)) - N * np.sum(np.log(np.diag(L))))

            def backward(gnu, gval):
                v = solve_triangular(L.T, u, lower=False) if self.correlated else u
                gw = -v.T
                gval[self.shared["nu"].sl] += (gnu + gw / sn).ravel()
                gval[self.shared["sigma_nu"].sl] += np.sum(gw * (-raw / sn ** 2), axis=0) - N / sn
                gL = np.tril(v @ u.T)
                gL[np.diag_indices(M)] -= N / np.diag(L)
                finish(gL, gval)

        return nu, lp, backward

    # outputs -----------------------------------------------------------------
    def _build_outputs(self) -> None:
        names: list[ParameterName] = []
        ds = self.ds
        times = [time_label(t) for t in ds.panel.times[ds.fixed:]]
        for plan in self.plans:
            cd = plan.cd
            r = cd.response
            cats = cd.categories[1:] if cd.categories else [None]
            for cat in cats:
                if cd.has_alpha:
                    if cd.varying_icpt:
                        names += [ParameterName("alpha", r, None, t, None, cat) for t in times]
                    else:
                        names.append(ParameterName("alpha", r, None, None, None, cat))
                if cd.varying_icpt:
                    names.append(ParameterName("tau_alpha", r, None, None, None, cat))
                names += [ParameterName("beta", r, c.label, None, None, cat) for c in cd.fixed]
                for c in cd.varying:
                    names += [ParameterName("delta", r, c.label, t, None, cat) for t in times]
                names += [ParameterName("tau", r, c.label, None, None, cat) for c in cd.varying]
                if cd.varying_icpt:
                    names += [ParameterName("omega", r, "alpha", str(d), None, cat) for d in range(1, self.D)]
                for c in cd.varying:
                    names += [ParameterName("omega", r, c.label, str(d), None, cat)
                              for d in range(1, self.D + 1)]
            if cd.family == "gaussian":
                names.append(ParameterName("sigma", r))
            elif families.has_aux(cd.family):
                names.append(ParameterName("phi", r))
        for r, lab in self.registry:
            names.append(ParameterName("sigma_nu", r, lab))
        if self.correlated:
            for i in range(self.M):
                for j in range(i + 1, self.M):
                    (r1, l1), (r2, l2) = self.registry[i], self.registry[j]
                    names.append(ParameterName("corr_nu", r1, f"{l1}__{r2}_{l2}"))
        groups = ds.panel.group_labels()
        for r, lab in self.registry:
            names += [ParameterName("nu", r, lab, None, g) for g in groups]
        self.output_names = names
        self.output_labels = [n.render() for n in names]
        if len(set(self.output_labels)) != len(self.output_labels):
            raise PriorError("parameter names are not unique; rename variables to avoid clashes")

    def outputs(self, theta: np.ndarray) -> np.ndarray:
        """Constrained, named quantities in the order of :attr:`output_labels`."""
        with np.errstate(over="ignore"):
            return self._outputs(theta)

    def _outputs(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        val = theta.copy()
        val[self.pos_idx] = np.exp(theta[self.pos_idx])
        ds = self.ds
        B = ds.spline.B if ds.spline is not None else None
        out: list[np.ndarray] = []
        for plan in self.plans:
            cd = plan.cd
            b = plan.blocks
            S = plan.S
            sp = self._spline_coefs(plan, val)
            for s in range(S):
                if cd.has_alpha:
                    a = val[b["a"].start + s]
                    if cd.varying_icpt:
                        out.append(a + B[:, 1:] @ sp["omega_alpha"][3][s])
                    else:
                        out.append(np.array([a]))
                if cd.varying_icpt:
                    out.append(val[b["tau_alpha"].start + s: b["tau_alpha"].start + s + 1])
                if plan.Kf:
                    out.append(val[b["beta"].sl].reshape(S, plan.Kf)[s])
                if plan.Kv:
                    omega = sp["omega"][3][s]
                    out.append((omega @ B.T).ravel())
                    out.append(val[b["tau"].sl].reshape(S, plan.Kv)[s])
                if cd.varying_icpt:
                    out.append(sp["omega_alpha"][3][s])
                if plan.Kv:
                    out.append(sp["omega"][3][s].ravel())
            if "aux" in b:
                out.append(val[b["aux"].sl])
        if self.M:
            nu, _, _ = self._random_forward(val)
            out.append(val[self.shared["sigma_nu"].sl])
            if self.correlated:
                _, L = cpc_forward(val[self.shared["L"].sl], self.M)
                C = L @ L.T
                out.append(C[np.triu_indices(self.M, 1)])
            out.append(nu.T.ravel())
        res = np.concatenate(out) if out else np.zeros(0)
        return res

    # misc ------------------------------------------------------------------------
    def block(self, key: str, channel: int = -1) -> Block:
        for b in self.blocks:
            if b.key == key and b.channel == channel:
                return b
        raise KeyError((key, channel))

    def random_init(self, rng: np.random.Generator, radius: float = 2.0) -> np.ndarray:
        return rng.uniform(-radius, radius, self.dim)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.ds.formula.format().encode())
        for p in self.priors:
            h.update(f"{p.parameter}|{p.prior}".encode())
        for plan in self.plans:
            for arr in (plan.y, plan.Xf, plan.Xv, plan.Xr, plan.gidx, plan.cd.tidx):
                h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        return h.hexdigest()[:16]
