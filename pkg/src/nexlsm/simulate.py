"""Synthetic network generators for the simulation studies.

Three generating mechanisms: the nested exemplar model itself
(bipartite or symmetric), the dynamic latent factor model (symmetric,
no self-edges) and a dynamic stochastic block model with fixed balanced
memberships and smoothly evolving block probabilities. Every dataset
records the true probability tensor and the true parameters so fits can
be scored against ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import nexmodel
from .kernels import chol_jitter, exp_kernel, index_distance
from .tensor3 import Tensor3

GENERATORS = ("nex", "dlf", "dsbm")


@dataclass(frozen=True)
class SimSpec:
    """Generator selection, dimensions and true-model settings.

    ``m`` is None for symmetric networks. ``holdout`` lists 1-based
    time slices marked unobserved; None means the final slice.
    ``sigma2`` of None resolves to 2 / sqrt(k_true). ``mu_sd`` scales
    the intercept covariance (0 pins the intercept at mu0 exactly).
    """

    generator: str = "nex"
    n: int = 20
    m: int | None = 25
    t: int = 40
    k_true: int = 5
    h_true: int = 2
    blocks: int = 4
    k_w: float = 0.04
    k_mu: float = 0.04
    sigma2: float | None = None
    mu0: float = -0.6
    mu_sd: float = 1.0
    a1: float = 2.0
    a2: float = 2.0
    seed: int = 0
    holdout: tuple[int, ...] | None = field(default=None)

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}")
        if self.n < 1 or self.t < 1:
            raise ValueError("dimensions must be positive")
        if self.m is not None and self.m < 1:
            raise ValueError("dimensions must be positive")
        if self.generator == "nex":
            cols = self.m if self.m is not None else self.n
            if self.k_true > min(self.n, cols) * self.h_true:
                raise ValueError("true rank exceeds what the dims support")
            if self.h_true > self.k_true:
                raise ValueError("h_true must not exceed k_true")
        if self.generator == "dsbm":
            if self.m is not None:
                raise ValueError("block-model networks are symmetric; leave m unset")
            if self.blocks >= self.n:
                raise ValueError(f"need fewer blocks than nodes, got {self.blocks}")
        if self.generator == "dlf" and self.m is not None:
            raise ValueError("latent factor generator is symmetric; leave m unset")
        if self.mu_sd < 0:
            raise ValueError("mu_sd must be nonnegative")

    @property
    def symmetric(self) -> bool:
        return self.m is None

    @property
    def n_cols(self) -> int:
        return self.n if self.m is None else self.m

    def resolved_sigma2(self) -> float:
        if self.sigma2 is not None:
            return self.sigma2
        return 2.0 / np.sqrt(self.k_true)

    def holdout_slices(self) -> tuple[int, ...]:
        return self.holdout if self.holdout is not None else (self.t,)


@dataclass(frozen=True)
class SyntheticDataset:
    """Generated data plus the truth that produced it."""

    data: nexmodel.DesignData
    pi: Tensor3
    params: dict
    spec: SimSpec


def _observation_mask(spec: SimSpec) -> np.ndarray:
    omega = np.ones((spec.n, spec.n_cols, spec.t))
    for slice_1b in spec.holdout_slices():
        if not 1 <= slice_1b <= spec.t:
            raise ValueError(f"holdout slice {slice_1b} out of range 1..{spec.t}")
        omega[:, :, slice_1b - 1] = 0.0
    if spec.symmetric:
        off_diag = 1.0 - np.eye(spec.n)
        omega *= off_diag[:, :, None]
    return omega


def _bernoulli(pi: np.ndarray, spec: SimSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.symmetric:
        n = spec.n
        upper = np.triu(np.ones((n, n)), k=1).astype(bool)
        a = np.zeros_like(pi)
        for t in range(spec.t):
            draw = (rng.random((n, n)) < pi[:, :, t]) & upper
            a[:, :, t] = draw + draw.T
        return a.astype(np.float64)
    return (rng.random(pi.shape) < pi).astype(np.float64)


def simulate_nex(spec: SimSpec, rng: np.random.Generator) -> SyntheticDataset:
    """Generate from the nested exemplar model with unit weights."""
    if spec.generator != "nex":
        raise ValueError("spec.generator must be 'nex'")
    n, m, t = spec.n, spec.n_cols, spec.t
    k, h = spec.k_true, spec.h_true
    sigma = np.sqrt(spec.resolved_sigma2())

    dist = index_distance(t)
    chol_w = chol_jitter(exp_kernel(dist, spec.k_w))
    chol_mu = chol_jitter(exp_kernel(dist, spec.k_mu))

    def draw_set(n_rows):
        u = sigma * rng.standard_normal((n_rows, k))
        v = sigma * rng.standard_normal((h, k))
        w = chol_w.lower @ rng.standard_normal((t, k))
        return u, v, w

    ux, vx, wx = draw_set(n)
    params = {
        "log_theta_k": np.zeros(k),
        "log_theta_h": np.zeros(h),
        "ux": ux,
        "vx": vx,
        "wx": wx,
        "mu": spec.mu0 + spec.mu_sd * (chol_mu.lower @ rng.standard_normal(t)),
    }
    if not spec.symmetric:
        uy, vy, wy = draw_set(m)
        params.update({"uy": uy, "vy": vy, "wy": wy})

    pi_values = expit(_nex_propensity(params, spec))
    a = _bernoulli(pi_values, spec, rng)
    data = nexmodel.DesignData(
        a=Tensor3(a),
        omega=Tensor3(_observation_mask(spec)),
        symmetric=spec.symmetric,
    )
    return SyntheticDataset(data=data, pi=Tensor3(pi_values), params=params, spec=spec)


def _nex_propensity(params: dict, spec: SimSpec) -> np.ndarray:
    lam_k = np.cumprod(np.exp(np.asarray(params["log_theta_k"])))
    lam_h = np.cumprod(np.exp(np.asarray(params["log_theta_h"])))
    x = np.einsum(
        "k,ik,hk,tk->iht", lam_k, params["ux"], params["vx"], params["wx"],
        optimize=True,
    )
    if "uy" in params:
        y = np.einsum(
            "k,ik,hk,tk->iht", lam_k, params["uy"], params["vy"], params["wy"],
            optimize=True,
        )
    else:
        y = x
    s = np.einsum("h,iht,jht->ijt", lam_h, x, y, optimize=True)
    return s + np.asarray(params["mu"])[None, None, :]


def simulate_dlf(spec: SimSpec, rng: np.random.Generator) -> SyntheticDataset:
    """Generate a symmetric network from free latent paths.

    Paths use variance-1/2 exponential kernels and per-dimension
    precisions tau_h built from gamma increments with shapes (a1, a2).
    """
    if spec.generator != "dlf":
        raise ValueError("spec.generator must be 'dlf'")
    n, t, h = spec.n, spec.t, spec.h_true

    dist = index_distance(t)
    chol_x = chol_jitter(0.5 * exp_kernel(dist, spec.k_w))
    chol_mu = chol_jitter(0.5 * exp_kernel(dist, spec.k_mu))

    shapes = np.full(h, spec.a2)
    shapes[0] = spec.a1
    vartheta = rng.gamma(shape=shapes, scale=1.0)
    tau = np.cumprod(vartheta)

    z = rng.standard_normal((n, h, t))
    x = np.einsum("ts,ihs->iht", chol_x.lower, z) / np.sqrt(tau)[None, :, None]
    mu = spec.mu_sd * (chol_mu.lower @ rng.standard_normal(t))

    s = np.einsum("iht,jht->ijt", x, x, optimize=True) + mu[None, None, :]
    pi_values = expit(s)
    a = _bernoulli(pi_values, spec, rng)
    data = nexmodel.DesignData(
        a=Tensor3(a),
        omega=Tensor3(_observation_mask(spec)),
        symmetric=True,
    )
    params = {"x": x, "mu": mu, "log_vartheta": np.log(vartheta)}
    return SyntheticDataset(data=data, pi=Tensor3(pi_values), params=params, spec=spec)


def simulate_dsbm(spec: SimSpec, rng: np.random.Generator) -> SyntheticDataset:
    """Generate a symmetric network from a dynamic block model.

    Node i belongs to block i mod B (fixed over time); block-pair
    probability paths are inverse-logit transforms of Gaussian draws
    with covariance exp(-k_w |t - t'|) / 4.
    """
    if spec.generator != "dsbm":
        raise ValueError("spec.generator must be 'dsbm'")
    n, t, b = spec.n, spec.t, spec.blocks

    membership = np.arange(n) % b
    chol_b = chol_jitter(0.25 * exp_kernel(index_distance(t), spec.k_w))

    paths = np.zeros((b, b, t))
    for b1 in range(b):
        for b2 in range(b1, b):
            g = chol_b.lower @ rng.standard_normal(t)
            paths[b1, b2] = g
            paths[b2, b1] = g
    block_pi = expit(paths)

    pi_values = block_pi[membership[:, None], membership[None, :], :]
    a = _bernoulli(pi_values, spec, rng)
    data = nexmodel.DesignData(
        a=Tensor3(a),
        omega=Tensor3(_observation_mask(spec)),
        symmetric=True,
    )
    params = {"membership": membership, "block_logits": paths}
    return SyntheticDataset(
        data=data, pi=Tensor3(pi_values), params=params, spec=spec
    )


def simulate(spec: SimSpec, rng: np.random.Generator) -> SyntheticDataset:
    """Dispatch on spec.generator."""
    return {
        "nex": simulate_nex,
        "dlf": simulate_dlf,
        "dsbm": simulate_dsbm,
    }[spec.generator](spec, rng)


def recompute_pi(ds: SyntheticDataset) -> Tensor3:
    """Probability tensor recomputed from the stored true parameters."""
    spec = ds.spec
    if spec.generator == "nex":
        return Tensor3(expit(_nex_propensity(ds.params, spec)))
    if spec.generator == "dlf":
        x = np.asarray(ds.params["x"])
        mu = np.asarray(ds.params["mu"])
        s = np.einsum("iht,jht->ijt", x, x, optimize=True) + mu[None, None, :]
        return Tensor3(expit(s))
    membership = np.asarray(ds.params["membership"], dtype=np.int64)
    block_pi = expit(np.asarray(ds.params["block_logits"]))
    return Tensor3(block_pi[membership[:, None], membership[None, :], :])
