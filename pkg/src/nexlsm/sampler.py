"""Adaptive Hamiltonian Monte Carlo over any (density, gradient) target.

The engine is static-trajectory HMC with a per-iteration uniform jitter
on the leapfrog step count. Warmup adapts the step size by dual
averaging toward a target acceptance statistic and estimates a diagonal
mass matrix from the second half of warmup; sampling runs with frozen
tuning. Targets are callables ``q -> (log density, gradient)`` that
signal rejection by returning ``-inf``; they must be safe for
concurrent pure evaluation so chains can run as independent tasks.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass

import numpy as np


class SamplerError(RuntimeError):
    """Raised when a chain cannot make progress."""


@dataclass(frozen=True)
class HmcConfig:
    """Tuning knobs for one sampling run.

    ``trajectory_length`` is the targeted integration time; the per
    iteration step count is jittered uniformly on 1..L where
    L = ceil(trajectory_length / step size), capped at ``max_leapfrog``.
    """

    warmup: int = 1000
    draws: int = 1000
    target_accept: float = 0.95
    max_leapfrog: int = 4096
    init_step_size: float = 0.1
    trajectory_length: float = 1.0
    chains: int = 1
    seed: int = 0
    divergence_threshold: float = 1000.0

    def __post_init__(self):
        if self.draws < 1:
            raise ValueError("draws must be positive")
        if self.warmup < 0:
            raise ValueError("warmup must be nonnegative")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target acceptance must be in (0, 1)")
        if self.max_leapfrog < 1:
            raise ValueError("max_leapfrog must be positive")
        if not self.init_step_size > 0:
            raise ValueError("init_step_size must be positive")
        if not self.trajectory_length > 0:
            raise ValueError("trajectory_length must be positive")
        if self.chains < 1:
            raise ValueError("chains must be positive")


@dataclass
class ChainDraws:
    """Post-warmup draws plus per-draw diagnostics for one chain."""

    draws: np.ndarray  # (n_draws, dim), unconstrained scale
    logp: np.ndarray
    accept_stat: np.ndarray
    energy: np.ndarray
    divergent: np.ndarray
    n_leapfrog: np.ndarray
    step_size: float
    inv_mass: np.ndarray
    warmup_divergences: int

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def dim(self) -> int:
        return self.draws.shape[1]


def leapfrog(q, p, eps: float, nsteps: int, grad, inv_mass=None):
    """Position-momentum leapfrog with diagonal mass.

    ``grad`` maps position to the gradient of the log density. Returns
    the advanced (q, p); raises SamplerError on a non-finite gradient,
    which callers treat as a divergence signal.
    """
    if not eps > 0:
        raise ValueError("step size must be positive")
    q = np.array(q, dtype=np.float64)
    p = np.array(p, dtype=np.float64)
    if inv_mass is None:
        inv_mass = np.ones_like(q)
    g = np.asarray(grad(q), dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise SamplerError("non-finite gradient at the initial point")
    p = p + 0.5 * eps * g
    for step in range(nsteps):
        q = q + eps * inv_mass * p
        g = np.asarray(grad(q), dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise SamplerError(f"non-finite gradient at leapfrog step {step + 1}")
        p = p + (eps if step < nsteps - 1 else 0.5 * eps) * g
    return q, p


class _DualAveraging:
    """Step-size adaptation toward a target acceptance statistic."""

    def __init__(self, eps0: float, target: float, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = np.log(10.0 * eps0)
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.log_eps = np.log(eps0)
        self.log_eps_bar = np.log(eps0)
        self.h_bar = 0.0
        self.count = 0

    def update(self, accept_stat: float) -> float:
        self.count += 1
        m = self.count
        eta = 1.0 / (m + self.t0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat)
        self.log_eps = self.mu - (np.sqrt(m) / self.gamma) * self.h_bar
        w = m**-self.kappa
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar
        return float(np.exp(self.log_eps))

    def restart(self, eps0: float) -> None:
        self.mu = np.log(10.0 * eps0)
        self.log_eps = np.log(eps0)
        self.log_eps_bar = np.log(eps0)
        self.h_bar = 0.0
        self.count = 0

    @property
    def averaged(self) -> float:
        return float(np.exp(self.log_eps_bar))


def run_chain(target, cfg: HmcConfig, init, rng: np.random.Generator) -> ChainDraws:
    """Run one adaptive chain; fully deterministic given the rng state."""
    q = np.array(init, dtype=np.float64)
    dim = q.size
    logp, grad = target(q)
    if not np.isfinite(logp):
        raise SamplerError("target is not evaluable at the initial point")

    eps = cfg.init_step_size
    da = _DualAveraging(eps, cfg.target_accept)
    inv_mass = np.ones(dim)

    # Mass window inside the second half of warmup; the tail re-adapts
    # the step size under the new metric.
    if cfg.warmup >= 40:
        mass_lo = cfg.warmup // 2
        mass_hi = int(0.8 * cfg.warmup)
    else:
        mass_lo = mass_hi = cfg.warmup + 1
    mass_buffer: list[np.ndarray] = []

    n_total = cfg.warmup + cfg.draws
    draws = np.empty((cfg.draws, dim))
    out_logp = np.empty(cfg.draws)
    out_accept = np.empty(cfg.draws)
    out_energy = np.empty(cfg.draws)
    out_div = np.zeros(cfg.draws, dtype=bool)
    out_steps = np.empty(cfg.draws, dtype=np.int64)
    warmup_div = 0
    consecutive_div = 0

    for it in range(n_total):
        in_warmup = it < cfg.warmup
        z = rng.standard_normal(dim)
        p = z / np.sqrt(inv_mass)
        kin0 = 0.5 * float(np.sum(inv_mass * p * p))
        h0 = -logp + kin0

        max_steps = int(np.ceil(cfg.trajectory_length / eps))
        max_steps = max(1, min(cfg.max_leapfrog, max_steps))
        nsteps = int(rng.integers(1, max_steps + 1))

        q_new = q.copy()
        p_new = p + 0.5 * eps * grad
        ok = True
        logp_new, grad_new = logp, grad
        for step in range(nsteps):
            q_new = q_new + eps * inv_mass * p_new
            logp_new, grad_new = target(q_new)
            if not np.isfinite(logp_new):
                ok = False
                break
            p_new = p_new + (eps if step < nsteps - 1 else 0.5 * eps) * grad_new

        if ok:
            kin1 = 0.5 * float(np.sum(inv_mass * p_new * p_new))
            h1 = -logp_new + kin1
            delta_h = h1 - h0
        else:
            delta_h = np.inf
        divergent = (not np.isfinite(delta_h)) or (delta_h > cfg.divergence_threshold)
        if divergent:
            accept_stat = 0.0
        else:
            accept_stat = float(min(1.0, np.exp(-max(delta_h, -700.0))))

        if (not divergent) and rng.uniform() < accept_stat:
            q, logp, grad = q_new, logp_new, grad_new
            energy = h1
        else:
            energy = h0

        if divergent:
            consecutive_div += 1
            if in_warmup:
                warmup_div += 1
        else:
            consecutive_div = 0
        if consecutive_div >= 200:
            raise SamplerError(
                f"200 consecutive divergences at iteration {it} "
                f"(step size {eps:.3g}); target may be pathological"
            )

        if in_warmup:
            eps = da.update(accept_stat)
            if eps < 1e-14:
                raise SamplerError(
                    f"step size collapsed to {eps:.3g} during warmup; "
                    "persistent divergence at all step sizes"
                )
            if mass_lo <= it < mass_hi:
                mass_buffer.append(q.copy())
            if it == mass_hi - 1 and mass_buffer:
                samples = np.asarray(mass_buffer)
                n_s = samples.shape[0]
                var = samples.var(axis=0, ddof=1) if n_s > 1 else np.ones(dim)
                # Shrink toward a small constant, as a guard for short windows.
                var = (n_s / (n_s + 5.0)) * var + (5.0 / (n_s + 5.0)) * 1e-3
                inv_mass = np.maximum(var, 1e-12)
                eps_now = da.averaged
                da.restart(eps_now)
                eps = eps_now
            if it == cfg.warmup - 1:
                eps = da.averaged if da.count > 0 else eps
        else:
            idx = it - cfg.warmup
            draws[idx] = q
            out_logp[idx] = logp
            out_accept[idx] = accept_stat
            out_energy[idx] = energy
            out_div[idx] = divergent
            out_steps[idx] = nsteps

    return ChainDraws(
        draws=draws,
        logp=out_logp,
        accept_stat=out_accept,
        energy=out_energy,
        divergent=out_div,
        n_leapfrog=out_steps,
        step_size=float(eps),
        inv_mass=inv_mass,
        warmup_divergences=warmup_div,
    )


def _run_chain_worker(args):
    target, cfg, init_fn, seed_seq = args
    rng = np.random.default_rng(seed_seq)
    init = init_fn(rng)
    return run_chain(target, cfg, init, rng)


def run_chains(target, cfg: HmcConfig, init_fn, parallel: bool = True):
    """Run cfg.chains independent chains with per-chain rng streams.

    ``init_fn(rng) -> vector`` supplies each chain's start. Streams are
    spawned from cfg.seed, so results do not depend on scheduling.
    """
    seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    jobs = [(target, cfg, init_fn, seq) for seq in seqs]
    if parallel and cfg.chains > 1:
        try:
            with concurrent.futures.ProcessPoolExecutor(
                max_workers=min(cfg.chains, 4)
            ) as pool:
                return list(pool.map(_run_chain_worker, jobs))
        except (OSError, concurrent.futures.process.BrokenProcessPool):
            pass
    return [_run_chain_worker(job) for job in jobs]


def grad_check(target, point, h: float = 1e-5) -> float:
    """Max relative error of the target gradient vs central differences.

    The per-coordinate denominator is max(1, |gradient|).
    """
    if not h > 0:
        raise ValueError("step must be positive")
    point = np.asarray(point, dtype=np.float64)
    _, grad = target(point)
    fd = np.empty_like(point)
    for i in range(point.size):
        shift = np.zeros_like(point)
        shift[i] = h
        f_hi, _ = target(point + shift)
        f_lo, _ = target(point - shift)
        fd[i] = (f_hi - f_lo) / (2.0 * h)
    rel = np.abs(fd - grad) / np.maximum(1.0, np.abs(grad))
    return float(rel.max())
