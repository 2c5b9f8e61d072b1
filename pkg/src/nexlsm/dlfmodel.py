"""Dynamic latent factor competitor model.

Each node carries H latent coordinates whose full time paths are free
parameters with Gaussian-process priors, so the latent block alone has
(N + M) * H * T unknowns. A multiplicative gamma chain on per-dimension
precisions tau_h shrinks redundant latent dimensions. The model shares
the design-data container, the likelihood conventions and the sampler
with the nested exemplar model, which keeps comparisons between the two
apples to apples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln

from .kernels import CovSpec, chol_jitter, cov_matrix, precision_matrix
from .nexmodel import VARIANTS, DesignData, _likelihood_mask, _year_index
from .tensor3 import Tensor3


@dataclass(frozen=True)
class DlfConfig:
    """Dimensions and priors for one dynamic latent factor model."""

    n: int
    m: int
    t: int
    h: int
    cov_x: CovSpec
    cov_mu: CovSpec
    variant: str = "bipartite"
    a1: float = 2.0
    a2: float = 2.0
    n_plant_effects: int = 0
    n_year_effects: int = 0
    eta0: float = 100.0
    sigma02: float = 1.0
    beta_mean: float = 0.0
    beta_sd: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        for name in ("n", "m", "t", "h"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.variant == "symmetric" and self.n != self.m:
            raise ValueError("symmetric variant requires n == m")
        if not (self.a1 > 0 and self.a2 > 0):
            raise ValueError("shrinkage shapes must be positive")
        if self.cov_x.size != self.t or self.cov_mu.size != self.t:
            raise ValueError("covariance specs must match t")
        if self.variant == "conditional" and self.n_plant_effects != self.n:
            raise ValueError("conditional variant needs one alpha per row node")

    @property
    def bipartite_factors(self) -> bool:
        return self.variant != "symmetric"


@dataclass(frozen=True)
class DlfParams:
    """Latent paths, intercept and shrinkage state.

    ``x`` is N x H x T (``y`` M x H x T for the bipartite variant);
    ``log_vartheta`` holds the log gamma increments whose cumulative
    products are the precisions tau_h.
    """

    log_vartheta: np.ndarray
    x: np.ndarray
    mu: np.ndarray
    y: np.ndarray | None = None
    alpha: np.ndarray | None = None
    gamma: np.ndarray | None = None
    beta: float | None = None
    log_s2_alpha: float | None = None
    log_s2_gamma: float | None = None

    @property
    def vartheta(self) -> np.ndarray:
        return np.exp(self.log_vartheta)

    @property
    def tau(self) -> np.ndarray:
        return np.cumprod(self.vartheta)


@dataclass(frozen=True)
class DlfLayout:
    blocks: tuple[tuple[str, tuple[int, ...]], ...]
    offsets: dict = field(repr=False, default_factory=dict)
    dim: int = 0

    @classmethod
    def for_config(cls, cfg: DlfConfig) -> "DlfLayout":
        blocks = [
            ("log_vartheta", (cfg.h,)),
            ("x", (cfg.n, cfg.h, cfg.t)),
        ]
        if cfg.bipartite_factors:
            blocks.append(("y", (cfg.m, cfg.h, cfg.t)))
        blocks.append(("mu", (cfg.t,)))
        if cfg.variant == "conditional":
            blocks += [
                ("alpha", (cfg.n_plant_effects,)),
                ("gamma", (cfg.n_year_effects,)),
                ("beta", (1,)),
                ("log_s2_alpha", (1,)),
                ("log_s2_gamma", (1,)),
            ]
        offsets = {}
        pos = 0
        for name, shape in blocks:
            size = int(np.prod(shape))
            offsets[name] = (pos, pos + size, shape)
            pos += size
        return cls(blocks=tuple(blocks), offsets=offsets, dim=pos)

    def view(self, v: np.ndarray, name: str) -> np.ndarray:
        lo, hi, shape = self.offsets[name]
        return v[lo:hi].reshape(shape)

    def names(self) -> list[str]:
        out = []
        for name, shape in self.blocks:
            if int(np.prod(shape)) == 1 and len(shape) == 1:
                out.append(name)
            else:
                for idx in np.ndindex(shape):
                    label = ",".join(str(i + 1) for i in idx)
                    out.append(f"{name}[{label}]")
        return out


def to_unconstrained(p: DlfParams, cfg: DlfConfig) -> np.ndarray:
    layout = DlfLayout.for_config(cfg)
    v = np.empty(layout.dim)
    for name, _ in layout.blocks:
        val = getattr(p, name)
        if val is None:
            raise ValueError(f"parameter block {name} missing for {cfg.variant}")
        layout.view(v, name)[...] = val
    return v


def from_unconstrained(v: np.ndarray, cfg: DlfConfig) -> DlfParams:
    layout = DlfLayout.for_config(cfg)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size != layout.dim:
        raise ValueError(f"expected length {layout.dim}, got {v.size}")
    kwargs = {}
    for name, shape in layout.blocks:
        block = layout.view(v, name).copy()
        if name in ("beta", "log_s2_alpha", "log_s2_gamma"):
            kwargs[name] = float(block[0])
        else:
            kwargs[name] = block
    return DlfParams(**kwargs)


def _propensity_values(p: DlfParams, cfg: DlfConfig, d: DesignData) -> np.ndarray:
    y = p.y if cfg.bipartite_factors else p.x
    s = np.einsum("iht,jht->ijt", p.x, y, optimize=True)
    s += p.mu[None, None, :]
    if cfg.variant == "conditional":
        s += p.alpha[:, None, None]
        year0 = _year_index_dlf(cfg, d)
        s += p.gamma[year0][None, None, :]
        if d.covariate is not None:
            s += p.beta * d.covariate[None, None, :]
    return s


def _year_index_dlf(cfg: DlfConfig, d: DesignData) -> np.ndarray:
    if d.year_of is not None:
        return np.asarray(d.year_of, dtype=np.int64) - 1
    return np.zeros(cfg.t, dtype=np.int64)


def dlf_propensity(p: DlfParams, cfg: DlfConfig, d: DesignData) -> Tensor3:
    """Latent log-odds tensor; inner product of free latent paths."""
    values = _propensity_values(p, cfg, d)
    if values.shape != d.dims:
        raise ValueError(f"propensity shape {values.shape} != data dims {d.dims}")
    return Tensor3(values)


class DlfPosterior:
    """Log posterior and gradient for the dynamic latent factor model.

    Same calling protocol and failure contract as NexPosterior.
    """

    def __init__(self, cfg: DlfConfig, data: DesignData):
        if data.dims != (cfg.n, cfg.m, cfg.t):
            raise ValueError(
                f"data dims {data.dims} do not match config "
                f"({cfg.n}, {cfg.m}, {cfg.t})"
            )
        if cfg.variant == "symmetric" and not data.symmetric:
            raise ValueError("symmetric variant requires symmetric data")
        self.cfg = cfg
        self.data = data
        self.layout = DlfLayout.for_config(cfg)
        self.dim = self.layout.dim

        self._mask = _likelihood_mask(data)
        self._masked_a = self._mask * data.a.values

        chol_x = chol_jitter(cov_matrix(cfg.cov_x))
        chol_m = chol_jitter(cov_matrix(cfg.cov_mu))
        self._chol_x = chol_x
        self._chol_mu = chol_m
        self._prec_x = precision_matrix(chol_x)
        self._prec_mu = precision_matrix(chol_m)

        self._a_vec = np.full(cfg.h, cfg.a2)
        self._a_vec[0] = cfg.a1

        n_paths = cfg.n * cfg.h + (cfg.m * cfg.h if cfg.bipartite_factors else 0)
        self._n_paths = n_paths
        self._const = float(
            -0.5 * n_paths * (cfg.t * np.log(2.0 * np.pi) + chol_x.log_det())
            - 0.5 * (cfg.t * np.log(2.0 * np.pi) + chol_m.log_det())
            - np.sum(gammaln(self._a_vec))  # rate-1 gammas
        )
        if cfg.variant == "conditional":
            a0 = cfg.eta0 / 2.0
            b0 = cfg.eta0 * cfg.sigma02 / 2.0
            self._eff_a0, self._eff_b0 = a0, b0
            self._const += float(
                2.0 * (a0 * np.log(b0) - gammaln(a0))
                - 0.5 * np.log(2.0 * np.pi * cfg.beta_sd**2)
            )
            self._year0 = _year_index_dlf(cfg, data)
            self._cov = (
                data.covariate if data.covariate is not None else np.zeros(cfg.t)
            )

    def __call__(self, v: np.ndarray) -> tuple[float, np.ndarray]:
        return self.logp_and_grad(v)

    def logp_and_grad(self, v: np.ndarray) -> tuple[float, np.ndarray]:
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            logp, grad = self._impl(np.asarray(v, dtype=np.float64))
        if not np.isfinite(logp) or not np.all(np.isfinite(grad)):
            return -np.inf, np.zeros(self.dim)
        return logp, grad

    def _impl(self, v: np.ndarray) -> tuple[float, np.ndarray]:
        cfg = self.cfg
        lay = self.layout
        grad = np.zeros(self.dim)

        xi = lay.view(v, "log_vartheta")
        vartheta = np.exp(xi)
        tau = np.cumprod(vartheta)
        if not np.all(np.isfinite(tau)):
            return -np.inf, grad

        x = lay.view(v, "x")
        mu = lay.view(v, "mu")
        bip = cfg.bipartite_factors
        y = lay.view(v, "y") if bip else x

        s = np.einsum("iht,jht->ijt", x, y, optimize=True)
        s += mu[None, None, :]
        if cfg.variant == "conditional":
            alpha = lay.view(v, "alpha")
            gam = lay.view(v, "gamma")
            beta = lay.view(v, "beta")[0]
            ls2a = lay.view(v, "log_s2_alpha")[0]
            ls2g = lay.view(v, "log_s2_gamma")[0]
            s += alpha[:, None, None]
            s += gam[self._year0][None, None, :]
            s += beta * self._cov[None, None, :]

        mask = self._mask
        logp = float(np.sum(self._masked_a * s) - np.sum(mask * np.logaddexp(0.0, s)))
        resid = self._masked_a - mask * expit(s)

        g_mu = resid.sum(axis=(0, 1)) - self._prec_mu @ mu
        logp -= 0.5 * float(mu @ (self._prec_mu @ mu))
        lay.view(grad, "mu")[...] = g_mu

        if bip:
            gx = np.einsum("ijt,jht->iht", resid, y, optimize=True)
            gy = np.einsum("ijt,iht->jht", resid, x, optimize=True)
        else:
            resid_sym = resid + resid.transpose(1, 0, 2)
            gx = np.einsum("ijt,jht->iht", resid_sym, x, optimize=True)

        d_log_tau = np.zeros(cfg.h)
        path_sets = [("x", x, gx, cfg.n)]
        if bip:
            path_sets.append(("y", y, gy, cfg.m))
        for name, paths, g_lik, n_nodes in path_sets:
            q = np.matmul(paths, self._prec_x)  # (nodes, h, t) x (t, t)
            quad_h = np.einsum("iht,iht->h", paths, q)
            logp += float(0.5 * cfg.t * n_nodes * np.sum(np.log(tau)))
            logp -= 0.5 * float(tau @ quad_h)
            d_log_tau += 0.5 * cfg.t * n_nodes - 0.5 * tau * quad_h
            lay.view(grad, name)[...] = g_lik - tau[None, :, None] * q

        # gamma(a, 1) increments plus log-transform Jacobian
        logp += float(np.sum(self._a_vec * xi - vartheta))
        lay.view(grad, "log_vartheta")[...] = (
            np.cumsum(d_log_tau[::-1])[::-1] + self._a_vec - vartheta
        )

        if cfg.variant == "conditional":
            s2a = np.exp(ls2a)
            s2g = np.exp(ls2g)
            n_a = cfg.n_plant_effects
            n_g = cfg.n_year_effects
            a0, b0 = self._eff_a0, self._eff_b0
            logp += float(
                -0.5 * n_a * np.log(2.0 * np.pi * s2a)
                - 0.5 * np.sum(alpha * alpha) / s2a
                - 0.5 * n_g * np.log(2.0 * np.pi * s2g)
                - 0.5 * np.sum(gam * gam) / s2g
                - 0.5 * (beta - cfg.beta_mean) ** 2 / cfg.beta_sd**2
                - a0 * ls2a - b0 * np.exp(-ls2a)
                - a0 * ls2g - b0 * np.exp(-ls2g)
            )
            resid_t = resid.sum(axis=(0, 1))
            lay.view(grad, "alpha")[...] = resid.sum(axis=(1, 2)) - alpha / s2a
            lay.view(grad, "gamma")[...] = (
                np.bincount(self._year0, weights=resid_t, minlength=n_g) - gam / s2g
            )
            lay.view(grad, "beta")[...] = (
                float(resid_t @ self._cov) - (beta - cfg.beta_mean) / cfg.beta_sd**2
            )
            lay.view(grad, "log_s2_alpha")[...] = (
                0.5 * np.sum(alpha * alpha) / s2a - 0.5 * n_a - a0 + b0 * np.exp(-ls2a)
            )
            lay.view(grad, "log_s2_gamma")[...] = (
                0.5 * np.sum(gam * gam) / s2g - 0.5 * n_g - a0 + b0 * np.exp(-ls2g)
            )

        return logp + self._const, grad

    def initial_point(self, rng: np.random.Generator) -> np.ndarray:
        """Prior draw with latent path blocks scaled down by 0.1."""
        cfg = self.cfg
        lay = self.layout
        v = np.empty(self.dim)
        lay.view(v, "log_vartheta")[...] = np.log(
            rng.gamma(shape=self._a_vec, scale=1.0)
        )
        tau = np.cumprod(np.exp(lay.view(v, "log_vartheta")))
        scale = 0.1
        for name, n_nodes in (("x", cfg.n), ("y", cfg.m)):
            if name == "y" and not cfg.bipartite_factors:
                continue
            z = rng.standard_normal((n_nodes, cfg.h, cfg.t))
            paths = np.einsum("ts,ihs->iht", self._chol_x.lower, z)
            paths /= np.sqrt(tau)[None, :, None]
            lay.view(v, name)[...] = scale * paths
        lay.view(v, "mu")[...] = self._chol_mu.lower @ rng.standard_normal(cfg.t)
        if cfg.variant == "conditional":
            lay.view(v, "alpha")[...] = scale * rng.standard_normal(cfg.n_plant_effects)
            lay.view(v, "gamma")[...] = scale * rng.standard_normal(cfg.n_year_effects)
            lay.view(v, "beta")[...] = scale * rng.standard_normal()
            lay.view(v, "log_s2_alpha")[...] = 0.0
            lay.view(v, "log_s2_gamma")[...] = 0.0
        return v

    def propensity(self, v: np.ndarray) -> np.ndarray:
        return _propensity_values(from_unconstrained(v, self.cfg), self.cfg, self.data)


def dlf_posterior_and_gradient(
    v: np.ndarray, cfg: DlfConfig, d: DesignData
) -> tuple[float, np.ndarray]:
    """One-shot evaluation; builds the posterior context each call."""
    return DlfPosterior(cfg, d)(v)


def coordinate_names(cfg: DlfConfig) -> list[str]:
    return DlfLayout.for_config(cfg).names()
