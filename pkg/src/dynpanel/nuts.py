"""Multinomial No-U-Turn sampler with a diagonal metric.

The transition follows the multinomial variant with biased progressive
sampling at the top level, generalized U-turn checks that also span the
boundaries between sub-trees, and a divergence threshold of 1000 on the
energy error. Warmup uses dual averaging for the step size and windowed
estimation of the diagonal metric (75 iteration initial buffer, doubling
windows starting at 25, 50 iteration terminal buffer).
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NumericError

MAX_DELTA_H = 1000.0
STAT_NAMES = ("accept_stat", "stepsize", "treedepth", "n_leapfrog", "divergent", "energy")


@dataclass
class SamplerConfig:
    chains: int = 4
    iter_warmup: int = 1000
    iter_sampling: int = 1000
    seed: int = 0
    target_accept: float = 0.8
    max_treedepth: int = 10
    init_radius: float = 2.0
    cores: int = 1

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.iter_warmup < 0 or self.iter_sampling < 1:
            raise ValueError("iter_warmup must be >= 0 and iter_sampling >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_treedepth < 1:
            raise ValueError("max_treedepth must be >= 1")


@dataclass
class ChainResult:
    chain: int
    draws: np.ndarray
    stats: dict[str, np.ndarray]
    warmup_stats: dict[str, np.ndarray]
    stepsize: float
    inv_metric: np.ndarray
    time_warmup: float
    time_sampling: float
    init: np.ndarray = field(default=None)


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    """Counter-based per-chain stream derived from (seed, chain)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & (2**63 - 1), chain])))


class _State:
    __slots__ = ("q", "p", "lp", "grad")

    def __init__(self, q, p, lp, grad):
        self.q = q
        self.p = p
        self.lp = lp
        self.grad = grad

    def copy(self) -> "_State":
        return _State(self.q, self.p, self.lp, self.grad)


class DualAveraging:
    def __init__(self, delta: float, gamma: float = 0.05, t0: float = 10.0, kappa: float = 0.75):
        self.delta = delta
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.mu = math.log(10.0)
        self.restart()

    def restart(self) -> None:
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def learn(self, accept_stat: float) -> float:
        self.counter += 1
        a = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - a)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return math.exp(x)

    def final(self) -> float:
        return math.exp(self.x_bar)


class WindowedVariance:
    """Metric adaptation windows; returns a new inverse metric at window ends."""

    def __init__(self, num_warmup: int, dim: int, init_buffer: int = 75, term_buffer: int = 50,
                 base_window: int = 25):
        self.num_warmup = num_warmup
        if init_buffer + base_window + term_buffer > num_warmup:
            init_buffer = int(0.15 * num_warmup)
            term_buffer = int(0.1 * num_warmup)
            base_window = num_warmup - (init_buffer + term_buffer)
        self.init_buffer = init_buffer
        self.term_buffer = term_buffer
        self.window_size = base_window
        self.next_window = init_buffer + base_window - 1
        self.counter = 0
        self.dim = dim
        self._reset()

    def _reset(self) -> None:
        self.n = 0
        self.mean = np.zeros(self.dim)
        self.m2 = np.zeros(self.dim)

    def _in_window(self) -> bool:
        return (self.counter >= self.init_buffer
                and self.counter < self.num_warmup - self.term_buffer
                and self.counter != self.num_warmup)

    def _end_window(self) -> bool:
        return self.counter == self.next_window and self.counter != self.num_warmup

    def _compute_next_window(self) -> None:
        last = self.num_warmup - self.term_buffer - 1
        if self.next_window == last:
            return
        self.window_size *= 2
        self.next_window = self.counter + self.window_size
        if self.next_window != last:
            if self.next_window + 2 * self.window_size >= self.num_warmup - self.term_buffer:
                self.next_window = last

    def learn(self, q: np.ndarray) -> Optional[np.ndarray]:
        if self._in_window():
            self.n += 1
            d = q - self.mean
            self.mean += d / self.n
            self.m2 += d * (q - self.mean)
        if self._end_window():
            self._compute_next_window()
            n = self.n
            var = self.m2 / (n - 1) if n > 1 else np.ones(self.dim)
            var = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            self._reset()
            self.counter += 1
            return var
        self.counter += 1
        return None


def _log_sum_exp(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    m = max(a, b)
    return m + math.log(math.exp(a - m) + math.exp(b - m))


class NUTS:
    def __init__(self, target: Callable, dim: int, rng: np.random.Generator, max_depth: int = 10):
        self.target = target
        self.dim = dim
        self.rng = rng
        self.max_depth = max_depth
        self.inv_metric = np.ones(dim)
        self.epsilon = 1.0
        self.n_leapfrog = 0
        self.sum_metro_prob = 0.0
        self.divergent = False

    # Hamiltonian pieces
    def _eval(self, q):
        lp, g = self.target(q)
        lp = float(lp)
        if not np.isfinite(lp) or not np.all(np.isfinite(g)):
            return -math.inf, np.zeros_like(q)
        return lp, np.asarray(g, dtype=float)

    def hamiltonian(self, z: _State) -> float:
        h = -z.lp + 0.5 * float(np.dot(z.p, self.inv_metric * z.p))
        return math.inf if math.isnan(h) else h

    def sample_p(self) -> np.ndarray:
        return self.rng.standard_normal(self.dim) / np.sqrt(self.inv_metric)

    def evolve(self, z: _State, eps: float) -> _State:
        if not np.isfinite(z.lp):
            return _State(z.q, z.p, -math.inf, z.grad)
        p = z.p + 0.5 * eps * z.grad
        q = z.q + eps * self.inv_metric * p
        lp, g = self._eval(q)
        p = p + 0.5 * eps * g
        return _State(q, p, lp, g)

    def init_stepsize(self, z: _State) -> None:
        if self.epsilon == 0 or self.epsilon > 1e7:
            return
        z0 = _State(z.q, self.sample_p(), z.lp, z.grad)
        H0 = self.hamiltonian(z0)
        z1 = self.evolve(z0, self.epsilon)
        delta_h = H0 - self.hamiltonian(z1)
        direction = 1 if delta_h > math.log(0.8) else -1
        while True:
            z0 = _State(z.q, self.sample_p(), z.lp, z.grad)
            H0 = self.hamiltonian(z0)
            z1 = self.evolve(z0, self.epsilon)
            delta_h = H0 - self.hamiltonian(z1)
            if direction == 1 and not delta_h > math.log(0.8):
                break
            if direction == -1 and not delta_h < math.log(0.8):
                break
            self.epsilon = 2.0 * self.epsilon if direction == 1 else 0.5 * self.epsilon
            if self.epsilon > 1e7:
                raise NumericError("posterior is improper; the step size diverged to infinity")
            if self.epsilon == 0:
                raise NumericError("no acceptably small step size could be found")

    def _criterion(self, p_sharp_minus, p_sharp_plus, rho) -> bool:
        return float(np.dot(p_sharp_plus, rho)) > 0 and float(np.dot(p_sharp_minus, rho)) > 0

    def _build_tree(self, depth, z, H0, sign):
        """Returns (valid, z_end, z_propose, p_sharp_beg, p_sharp_end, rho, p_beg, p_end, log_w)."""
        if depth == 0:
            z = self.evolve(z, sign * self.epsilon)
            self.n_leapfrog += 1
            h = self.hamiltonian(z)
            if h - H0 > MAX_DELTA_H:
                self.divergent = True
            log_w = H0 - h
            self.sum_metro_prob += 1.0 if log_w > 0 else math.exp(log_w)
            p_sharp = self.inv_metric * z.p
            return (not self.divergent, z, z, p_sharp, p_sharp, z.p.copy(), z.p, z.p, log_w)
        ok, z, prop_init, ps_beg, ps_init_end, rho_init, p_beg, p_init_end, lw_init = \
            self._build_tree(depth - 1, z, H0, sign)
        if not ok:
            return (False, z, prop_init, ps_beg, ps_init_end, rho_init, p_beg, p_init_end, lw_init)
        ok, z, prop_final, ps_final_beg, ps_end, rho_final, p_final_beg, p_end, lw_final = \
            self._build_tree(depth - 1, z, H0, sign)
        if not ok:
            return (False, z, prop_init, ps_beg, ps_end, rho_init, p_beg, p_end, lw_init)
        lw_sub = _log_sum_exp(lw_init, lw_final)
        if lw_final > lw_sub:
            prop = prop_final
        else:
            prop = prop_final if self.rng.random() < math.exp(lw_final - lw_sub) else prop_init
        rho = rho_init + rho_final
        persist = self._criterion(ps_beg, ps_end, rho)
        persist &= self._criterion(ps_beg, ps_final_beg, rho_init + p_final_beg)
        persist &= self._criterion(ps_init_end, ps_end, rho_final + p_init_end)
        return (persist, z, prop, ps_beg, ps_end, rho, p_beg, p_end, lw_sub)

    def transition(self, q, lp, grad):
        z = _State(q, self.sample_p(), lp, grad)
        p_sharp = self.inv_metric * z.p
        z_fwd = z_bck = z_sample = z
        p_fwd_fwd = p_fwd_bck = p_bck_fwd = p_bck_bck = z.p
        ps_fwd_fwd = ps_fwd_bck = ps_bck_fwd = ps_bck_bck = p_sharp
        rho = z.p.copy()
        log_sum_w = 0.0
        H0 = self.hamiltonian(z)
        self.n_leapfrog = 0
        self.sum_metro_prob = 0.0
        self.divergent = False
        depth = 0
        while depth < self.max_depth:
            if self.rng.random() > 0.5:
                rho_bck = rho
                p_bck_fwd, ps_bck_fwd = p_fwd_bck, ps_fwd_bck
                ok, z_fwd, z_prop, ps_fwd_bck, ps_fwd_fwd, rho_fwd, p_fwd_bck, p_fwd_fwd, lw_sub = \
                    self._build_tree(depth, z_fwd, H0, 1)
            else:
                rho_fwd = rho
                p_fwd_bck, ps_fwd_bck = p_bck_fwd, ps_bck_fwd
                ok, z_bck, z_prop, ps_bck_fwd, ps_bck_bck, rho_bck, p_bck_fwd, p_bck_bck, lw_sub = \
                    self._build_tree(depth, z_bck, H0, -1)
            if not ok:
                break
            depth += 1
            if lw_sub > log_sum_w:
                z_sample = z_prop
            elif self.rng.random() < math.exp(lw_sub - log_sum_w):
                z_sample = z_prop
            log_sum_w = _log_sum_exp(log_sum_w, lw_sub)
            rho = rho_bck + rho_fwd
            persist = self._criterion(ps_bck_bck, ps_fwd_fwd, rho)
            persist &= self._criterion(ps_bck_bck, ps_fwd_bck, rho_bck + p_fwd_bck)
            persist &= self._criterion(ps_bck_fwd, ps_fwd_fwd, rho_fwd + p_bck_fwd)
            if not persist:
                break
        n = max(self.n_leapfrog, 1)
        stats = {
            "accept_stat": self.sum_metro_prob / n,
            "stepsize": self.epsilon,
            "treedepth": depth,
            "n_leapfrog": self.n_leapfrog,
            "divergent": int(self.divergent),
            "energy": self.hamiltonian(z_sample),
        }
        return z_sample.q, z_sample.lp, z_sample.grad, stats


def _find_init(target, dim, rng, radius, init=None):
    if init is not None:
        q = np.asarray(init, dtype=float)
        lp, g = target(q)
        if np.isfinite(lp) and np.all(np.isfinite(g)):
            return q, float(lp), np.asarray(g, dtype=float)
        raise NumericError("supplied initial values give a non-finite log density")
    for _ in range(100):
        q = rng.uniform(-radius, radius, dim)
        lp, g = target(q)
        if np.isfinite(lp) and np.all(np.isfinite(g)):
            return q, float(lp), np.asarray(g, dtype=float)
    raise NumericError("initialization failed after 100 attempts; the log density is not finite")


def run_chain(target: Callable, dim: int, cfg: SamplerConfig, chain: int,
              output: Optional[Callable] = None, init=None) -> ChainResult:
    """Run one chain; ``output`` maps unconstrained draws to recorded values."""
    rng = chain_rng(cfg.seed, chain)
    q, lp, g = _find_init(target, dim, rng, cfg.init_radius, init)
    q0 = q.copy()
    nuts = NUTS(target, dim, rng, cfg.max_treedepth)
    if dim == 0:
        raise NumericError("the model has no parameters to sample")
    adapt = DualAveraging(cfg.target_accept)
    windows = WindowedVariance(cfg.iter_warmup, dim)
    nuts.init_stepsize(_State(q, None, lp, g))
    record = output or (lambda x: x)
    warm = {k: np.zeros(cfg.iter_warmup) for k in STAT_NAMES}
    t0 = time.perf_counter()
    for it in range(cfg.iter_warmup):
        q, lp, g, st = nuts.transition(q, lp, g)
        for k in STAT_NAMES:
            warm[k][it] = st[k]
        nuts.epsilon = adapt.learn(st["accept_stat"])
        var = windows.learn(q)
        if var is not None:
            nuts.inv_metric = var
            nuts.init_stepsize(_State(q, None, lp, g))
            adapt.mu = math.log(10.0 * nuts.epsilon)
            adapt.restart()
    if cfg.iter_warmup > 0:
        nuts.epsilon = adapt.final()
        if warm["divergent"].all():
            raise NumericError(f"chain {chain + 1}: every warmup iteration diverged")
    t1 = time.perf_counter()
    first = np.asarray(record(q))
    draws = np.empty((cfg.iter_sampling, first.size))
    stats = {k: np.zeros(cfg.iter_sampling) for k in STAT_NAMES}
    for it in range(cfg.iter_sampling):
        q, lp, g, st = nuts.transition(q, lp, g)
        draws[it] = record(q)
        for k in STAT_NAMES:
            stats[k][it] = st[k]
    t2 = time.perf_counter()
    return ChainResult(chain, draws, stats, warm, nuts.epsilon, nuts.inv_metric.copy(), t1 - t0, t2 - t1, q0)


def _run_chain_job(args):
    target, dim, cfg, chain, output = args
    return run_chain(target, dim, cfg, chain, output)


def sample(target: Callable, dim: int, cfg: SamplerConfig, output: Optional[Callable] = None) -> list[ChainResult]:
    """Run ``cfg.chains`` independent chains, in parallel when ``cfg.cores`` > 1.

    Results depend only on the seed and chain index, never on the number of
    worker processes.
    """
    jobs = [(target, dim, cfg, c, output) for c in range(cfg.chains)]
    workers = min(cfg.cores, cfg.chains, os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_run_chain_job, jobs))
    return [_run_chain_job(j) for j in jobs]
