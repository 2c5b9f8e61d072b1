"""Nested exemplar latent space model (NEX).

The model represents a binary dynamic network through a latent
propensity tensor S. Each node carries H latent traits per time step;
the trait tensors are themselves rank-K combinations of per-node
exemplar loadings, trait-space loadings and shared temporal curves.
Multiplicative-gamma weight vectors shrink redundant trait and exemplar
dimensions.

Three variants share one code path:

* ``bipartite``  - S_ijt = mu_t + sum_h lamH_h X_iht Y_jht
* ``symmetric``  - single factor set, S_t = mu_t 11' + X_t diag(lamH) X_t',
  likelihood over i < j only
* ``conditional`` - bipartite plus row random effects alpha_i, year
  random effects gamma_r and a fixed covariate effect beta, with cells
  outside the co-occurrence mask excluded from the likelihood

The module exposes the log posterior over an unconstrained flat vector
together with its exact analytic gradient, which is what the sampler
consumes. Positive parameters are stored on the log scale so that
packing and unpacking are bit-exact bijections; the appropriate
log-Jacobian terms are included in the density.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, gammaln

from .kernels import CovSpec, chol_jitter, cov_matrix, precision_matrix
from .tensor3 import Tensor3

VARIANTS = ("bipartite", "symmetric", "conditional")

# Double-shrinkage defaults: first-index gamma keeps weights near one,
# later-index gammas with mean < 1 shrink higher dimensions; the trait
# space shrinks harder than the exemplar space.
MGP_K_DEFAULT = (7.0, 6.0, 2.5, 7.5)
MGP_H_DEFAULT = (7.0, 6.0, 3.0, 12.0)


@dataclass(frozen=True)
class MgpHyper:
    """Gamma hyperparameters for one multiplicative shrinkage chain."""

    a1: float
    b1: float
    a2: float
    b2: float

    def __post_init__(self):
        for name in ("a1", "b1", "a2", "b2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def shapes(self, size: int) -> np.ndarray:
        out = np.full(size, self.a2)
        out[0] = self.a1
        return out

    def rates(self, size: int) -> np.ndarray:
        out = np.full(size, self.b2)
        out[0] = self.b1
        return out


@dataclass(frozen=True)
class NexConfig:
    """Dimensions, priors and variant selection for one NEX model."""

    n: int
    m: int
    t: int
    h: int
    k: int
    cov_w: CovSpec
    cov_mu: CovSpec
    variant: str = "bipartite"
    hyper_k: MgpHyper = MgpHyper(*MGP_K_DEFAULT)
    hyper_h: MgpHyper = MgpHyper(*MGP_H_DEFAULT)
    sigma2: float = 1.0
    mu0: float = 0.0
    n_plant_effects: int = 0
    n_year_effects: int = 0
    eta0: float = 100.0
    sigma02: float = 1.0
    beta_mean: float = 0.0
    beta_sd: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        for name in ("n", "m", "t", "h", "k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.h > self.k:
            raise ValueError(
                f"trait dimension H={self.h} must not exceed exemplar "
                f"dimension K={self.k}"
            )
        if self.variant == "symmetric" and self.n != self.m:
            raise ValueError("symmetric variant requires n == m")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if self.cov_w.size != self.t or self.cov_mu.size != self.t:
            raise ValueError("covariance specs must match t")
        if self.variant == "conditional":
            if self.n_plant_effects != self.n:
                raise ValueError("conditional variant needs one alpha per row node")
            if self.n_year_effects < 1:
                raise ValueError("conditional variant needs at least one year")
            if not (self.eta0 > 0 and self.sigma02 > 0 and self.beta_sd > 0):
                raise ValueError("conditional hyperparameters must be positive")

    @property
    def bipartite_factors(self) -> bool:
        return self.variant != "symmetric"


def _binary_tensor(x: Tensor3, name: str) -> None:
    vals = x.values
    if not np.all((vals == 0.0) | (vals == 1.0)):
        raise ValueError(f"{name} must be binary")


@dataclass(frozen=True)
class DesignData:
    """Observed network tensor plus masks and optional covariate structure.

    ``omega`` marks observed cells (1 = observed). ``occ`` is the
    optional co-occurrence mask; cells with occ == 0 are structural
    zeros and carry no likelihood. ``week_of`` / ``year_of`` map each
    flat time index to a (week, year) pair for two-coordinate designs,
    and ``covariate`` is a per-slice scalar (temperature).
    """

    a: Tensor3
    omega: Tensor3
    occ: Tensor3 | None = None
    covariate: np.ndarray | None = None
    week_of: np.ndarray | None = None
    year_of: np.ndarray | None = None
    symmetric: bool = False

    def __post_init__(self):
        _binary_tensor(self.a, "adjacency")
        _binary_tensor(self.omega, "observation mask")
        if self.omega.dims != self.a.dims:
            raise ValueError(
                f"mask dims {self.omega.dims} differ from data dims {self.a.dims}"
            )
        if self.occ is not None:
            _binary_tensor(self.occ, "co-occurrence mask")
            if self.occ.dims != self.a.dims:
                raise ValueError("co-occurrence dims differ from data dims")
        if self.symmetric and self.a.dims[0] != self.a.dims[1]:
            raise ValueError("symmetric data must have square slices")
        t = self.a.dims[2]
        for name in ("covariate", "week_of", "year_of"):
            val = getattr(self, name)
            if val is None:
                continue
            arr = np.asarray(val, dtype=np.float64 if name == "covariate" else np.int64)
            if arr.shape != (t,):
                raise ValueError(f"{name} must have length t={t}")
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.a.dims

    @property
    def n_years(self) -> int:
        if self.year_of is None:
            return 1
        return int(self.year_of.max())


@dataclass(frozen=True)
class NexParams:
    """Full parameter state for one NEX model.

    Positive shrinkage parameters are held as logs (``log_theta_k``,
    ``log_theta_h``) so that the flat-vector transform is a bit-exact
    bijection; the positive values are exposed as properties.
    ``uy``/``vy``/``wy`` are None for the symmetric variant; the
    conditional extras are None otherwise.
    """

    log_theta_k: np.ndarray
    log_theta_h: np.ndarray
    ux: np.ndarray
    vx: np.ndarray
    wx: np.ndarray
    mu: np.ndarray
    uy: np.ndarray | None = None
    vy: np.ndarray | None = None
    wy: np.ndarray | None = None
    alpha: np.ndarray | None = None
    gamma: np.ndarray | None = None
    beta: float | None = None
    log_s2_alpha: float | None = None
    log_s2_gamma: float | None = None

    @property
    def theta_k(self) -> np.ndarray:
        return np.exp(self.log_theta_k)

    @property
    def theta_h(self) -> np.ndarray:
        return np.exp(self.log_theta_h)

    @property
    def lambda_k(self) -> np.ndarray:
        return mgp_weights(self.theta_k)

    @property
    def lambda_h(self) -> np.ndarray:
        return mgp_weights(self.theta_h)


def inv_link(s):
    """Logistic inverse link 1 / (1 + exp(-s)), overflow-safe."""
    return expit(s)


def mgp_weights(theta) -> np.ndarray:
    """Cumulative products of positive gammas: weight k is prod_{s<=k}."""
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(theta <= 0):
        raise ValueError("multiplicative gamma terms must be positive")
    return np.cumprod(theta)


def mgp_moments(hyper: MgpHyper, k: int) -> tuple[float, float]:
    """Closed-form mean and variance of the k-th cumulative weight."""
    if k < 1:
        raise ValueError("index must be >= 1")
    r1 = hyper.a1 / hyper.b1
    r2 = hyper.a2 / hyper.b2
    mean = r1 * r2 ** (k - 1)
    var = (
        r1**2
        * r2 ** (2 * (k - 1))
        * ((1.0 + 1.0 / hyper.a1) * (1.0 + 1.0 / hyper.a2) ** (k - 1) - 1.0)
    )
    return float(mean), float(var)


def empirical_mu0(d: DesignData) -> float:
    """Logit of observed interaction prevalence over unmasked cells."""
    omega = d.omega.values
    n_tot = float(omega.sum())
    if n_tot == 0:
        raise ValueError("no observed cells")
    prevalence = float((omega * d.a.values).sum()) / n_tot
    if prevalence <= 0.0 or prevalence >= 1.0:
        raise ValueError(f"prevalence {prevalence} gives an undefined logit")
    return float(np.log(prevalence / (1.0 - prevalence)))


# ---------------------------------------------------------------------------
# flat-vector layout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamLayout:
    """Block offsets of the flat unconstrained vector for one config."""

    blocks: tuple[tuple[str, tuple[int, ...]], ...]
    offsets: dict = field(repr=False, default_factory=dict)
    dim: int = 0

    @classmethod
    def for_config(cls, cfg: NexConfig) -> "ParamLayout":
        blocks = [
            ("log_theta_k", (cfg.k,)),
            ("log_theta_h", (cfg.h,)),
            ("ux", (cfg.n, cfg.k)),
            ("vx", (cfg.h, cfg.k)),
            ("wx", (cfg.t, cfg.k)),
        ]
        if cfg.bipartite_factors:
            blocks += [
                ("uy", (cfg.m, cfg.k)),
                ("vy", (cfg.h, cfg.k)),
                ("wy", (cfg.t, cfg.k)),
            ]
        blocks += [("mu", (cfg.t,))]
        if cfg.variant == "conditional":
            blocks += [
                ("alpha", (cfg.n_plant_effects,)),
                ("gamma", (cfg.n_year_effects,)),
                ("beta", (1,)),
                ("log_s2_alpha", (1,)),
                ("log_s2_gamma", (1,)),
            ]
        return cls._build(blocks)

    @classmethod
    def _build(cls, blocks) -> "ParamLayout":
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

    def has(self, name: str) -> bool:
        return name in self.offsets

    def names(self) -> list[str]:
        """One label per coordinate, 1-based indices, C order."""
        out = []
        for name, shape in self.blocks:
            if int(np.prod(shape)) == 1 and len(shape) == 1:
                out.append(name)
            elif len(shape) == 1:
                out.extend(f"{name}[{i + 1}]" for i in range(shape[0]))
            else:
                out.extend(
                    f"{name}[{i + 1},{j + 1}]"
                    for i in range(shape[0])
                    for j in range(shape[1])
                )
        return out


def to_unconstrained(p: NexParams, cfg: NexConfig) -> np.ndarray:
    """Pack parameters into the flat unconstrained vector."""
    layout = ParamLayout.for_config(cfg)
    v = np.empty(layout.dim)
    for name, _ in layout.blocks:
        val = getattr(p, name)
        if val is None:
            raise ValueError(f"parameter block {name} missing for {cfg.variant}")
        layout.view(v, name)[...] = val
    return v


def from_unconstrained(v: np.ndarray, cfg: NexConfig) -> NexParams:
    """Unpack the flat unconstrained vector; inverse of to_unconstrained."""
    layout = ParamLayout.for_config(cfg)
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
    return NexParams(**kwargs)


def transform_log_jacobian(v: np.ndarray, cfg: NexConfig) -> float:
    """Log |d positive / d unconstrained| summed over log-transformed coords."""
    layout = ParamLayout.for_config(cfg)
    total = float(layout.view(v, "log_theta_k").sum())
    total += float(layout.view(v, "log_theta_h").sum())
    if layout.has("log_s2_alpha"):
        total += float(layout.view(v, "log_s2_alpha")[0])
        total += float(layout.view(v, "log_s2_gamma")[0])
    return total


def coordinate_names(cfg: NexConfig) -> list[str]:
    return ParamLayout.for_config(cfg).names()


# ---------------------------------------------------------------------------
# propensity and likelihood
# ---------------------------------------------------------------------------


def _propensity_values(p: NexParams, cfg: NexConfig, d: DesignData) -> np.ndarray:
    lam_k = p.lambda_k
    lam_h = p.lambda_h
    x = np.einsum("k,ik,hk,tk->iht", lam_k, p.ux, p.vx, p.wx, optimize=True)
    if cfg.bipartite_factors:
        y = np.einsum("k,ik,hk,tk->iht", lam_k, p.uy, p.vy, p.wy, optimize=True)
    else:
        y = x
    s = np.einsum("h,iht,jht->ijt", lam_h, x, y, optimize=True)
    s += p.mu[None, None, :]
    if cfg.variant == "conditional":
        s += p.alpha[:, None, None]
        year0 = _year_index(cfg, d)
        s += p.gamma[year0][None, None, :]
        if d.covariate is not None:
            s += p.beta * d.covariate[None, None, :]
    return s


def _year_index(cfg: NexConfig, d: DesignData) -> np.ndarray:
    if d.year_of is not None:
        return np.asarray(d.year_of, dtype=np.int64) - 1
    return np.zeros(cfg.t, dtype=np.int64)


def compute_propensity(p: NexParams, cfg: NexConfig, d: DesignData) -> Tensor3:
    """Latent log-odds tensor S for the given parameters."""
    values = _propensity_values(p, cfg, d)
    if values.shape != d.dims:
        raise ValueError(f"propensity shape {values.shape} != data dims {d.dims}")
    return Tensor3(values)


def _likelihood_mask(d: DesignData) -> np.ndarray:
    mask = d.omega.values.astype(np.float64)
    if d.occ is not None:
        mask = mask * d.occ.values
    if d.symmetric:
        n = d.dims[0]
        upper = np.triu(np.ones((n, n)), k=1)
        mask = mask * upper[:, :, None]
    return mask


def log_likelihood(d: DesignData, s: Tensor3) -> float:
    """Masked Bernoulli log likelihood of the data given log-odds s.

    Cells with omega == 0 (and occ == 0 when a co-occurrence mask is
    present) contribute exactly zero; symmetric data sums over i < j.
    """
    sv = s.values if isinstance(s, Tensor3) else np.asarray(s, dtype=np.float64)
    if sv.shape != d.dims:
        raise ValueError(f"propensity dims {sv.shape} != data dims {d.dims}")
    mask = _likelihood_mask(d)
    # a*s - log(1 + exp(s)) equals a log(pi) + (1-a) log(1-pi)
    return float(np.sum(mask * (d.a.values * sv - np.logaddexp(0.0, sv))))


# ---------------------------------------------------------------------------
# posterior density and gradient
# ---------------------------------------------------------------------------


def _reverse_cumsum(z: np.ndarray) -> np.ndarray:
    return np.cumsum(z[::-1])[::-1]


def _bernoulli_terms(masked_a, mask, s):
    """Masked Bernoulli log likelihood and score wrt s, sharing one exp.

    Uses exp(-|s|) for both the softplus term and the logistic
    probability, so the whole likelihood costs two transcendental
    passes.
    """
    es = np.exp(-np.abs(s))
    softplus = np.maximum(s, 0.0) + np.log1p(es)
    denom = 1.0 + es
    pi = np.where(s >= 0, 1.0 / denom, es / denom)
    logp = float(np.sum(masked_a * s) - np.sum(mask * softplus))
    resid = masked_a - mask * pi
    return logp, resid


class NexPosterior:
    """Unnormalized log posterior over the unconstrained vector.

    Instances precompute masks, covariance factorizations and precision
    matrices once; evaluation is then pure and safe to call concurrently
    from independent chains. Calling the instance returns
    ``(log density, gradient)``; non-finite intermediates yield
    ``(-inf, zeros)`` as a rejection signal rather than raising.
    """

    def __init__(self, cfg: NexConfig, data: DesignData):
        if data.dims != (cfg.n, cfg.m, cfg.t):
            raise ValueError(
                f"data dims {data.dims} do not match config "
                f"({cfg.n}, {cfg.m}, {cfg.t})"
            )
        if cfg.variant == "symmetric" and not data.symmetric:
            raise ValueError("symmetric variant requires symmetric data")
        if cfg.variant == "conditional":
            if data.year_of is not None and data.n_years > cfg.n_year_effects:
                raise ValueError("data has more years than configured effects")
        self.cfg = cfg
        self.data = data
        self.layout = ParamLayout.for_config(cfg)
        self.dim = self.layout.dim

        self._mask = _likelihood_mask(data)
        self._masked_a = self._mask * data.a.values
        # time-major copies keep the per-slice matmuls contiguous
        self._mask_t = np.ascontiguousarray(self._mask.transpose(2, 0, 1))
        self._masked_a_t = np.ascontiguousarray(self._masked_a.transpose(2, 0, 1))

        chol_w = chol_jitter(cov_matrix(cfg.cov_w))
        chol_m = chol_jitter(cov_matrix(cfg.cov_mu))
        self._chol_w = chol_w
        self._chol_mu = chol_m
        self._prec_w = precision_matrix(chol_w)
        self._prec_mu = precision_matrix(chol_m)

        self._ak = cfg.hyper_k.shapes(cfg.k)
        self._bk = cfg.hyper_k.rates(cfg.k)
        self._ah = cfg.hyper_h.shapes(cfg.h)
        self._bh = cfg.hyper_h.rates(cfg.h)

        n_wcols = 2 * cfg.k if cfg.bipartite_factors else cfg.k
        n_gauss = cfg.n * cfg.k + cfg.h * cfg.k
        if cfg.bipartite_factors:
            n_gauss += cfg.m * cfg.k + cfg.h * cfg.k
        self._const = float(
            -0.5 * n_gauss * np.log(2.0 * np.pi * cfg.sigma2)
            - 0.5 * n_wcols * (cfg.t * np.log(2.0 * np.pi) + chol_w.log_det())
            - 0.5 * (cfg.t * np.log(2.0 * np.pi) + chol_m.log_det())
            + np.sum(self._ak * np.log(self._bk) - gammaln(self._ak))
            + np.sum(self._ah * np.log(self._bh) - gammaln(self._ah))
        )
        if cfg.variant == "conditional":
            a0 = cfg.eta0 / 2.0
            b0 = cfg.eta0 * cfg.sigma02 / 2.0
            self._eff_a0, self._eff_b0 = a0, b0
            self._const += float(
                2.0 * (a0 * np.log(b0) - gammaln(a0))
                - 0.5 * np.log(2.0 * np.pi * cfg.beta_sd**2)
            )
            self._year0 = _year_index(cfg, data)
            self._cov = (
                data.covariate
                if data.covariate is not None
                else np.zeros(cfg.t)
            )

    # -- target protocol ---------------------------------------------------

    def __call__(self, v: np.ndarray) -> tuple[float, np.ndarray]:
        return self.logp_and_grad(v)

    def logp_and_grad(self, v: np.ndarray) -> tuple[float, np.ndarray]:
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            logp, grad = self._impl(np.asarray(v, dtype=np.float64))
        if not np.isfinite(logp) or not np.all(np.isfinite(grad)):
            return -np.inf, np.zeros(self.dim)
        return logp, grad

    # -- implementation ----------------------------------------------------

    def _impl(self, v: np.ndarray) -> tuple[float, np.ndarray]:
        cfg = self.cfg
        lay = self.layout
        n, m, t, h, k = cfg.n, cfg.m, cfg.t, cfg.h, cfg.k
        grad = np.zeros(self.dim)

        xi_k = lay.view(v, "log_theta_k")
        xi_h = lay.view(v, "log_theta_h")
        theta_k = np.exp(xi_k)
        theta_h = np.exp(xi_h)
        lam_k = np.cumprod(theta_k)
        lam_h = np.cumprod(theta_h)
        if not (np.all(np.isfinite(lam_k)) and np.all(np.isfinite(lam_h))):
            return -np.inf, grad

        ux = lay.view(v, "ux")
        vx = lay.view(v, "vx")
        wx = lay.view(v, "wx")
        mu = lay.view(v, "mu")
        bip = cfg.bipartite_factors
        if bip:
            uy = lay.view(v, "uy")
            vy = lay.view(v, "vy")
            wy = lay.view(v, "wy")

        # Factor tensors via one GEMM each: rows (U scaled by lam_k)
        # against the per-component trait-by-time profiles b = v (x) w.
        bx = np.ascontiguousarray(vx.T[:, :, None] * wx.T[:, None, :])  # (k, h, t)
        x_flat = (ux * lam_k) @ bx.reshape(k, h * t)
        x_tm = np.ascontiguousarray(
            x_flat.reshape(n, h, t).transpose(2, 0, 1)
        )  # (t, n, h)
        if bip:
            by = np.ascontiguousarray(vy.T[:, :, None] * wy.T[:, None, :])
            y_flat = (uy * lam_k) @ by.reshape(k, h * t)
            y_tm = np.ascontiguousarray(y_flat.reshape(m, h, t).transpose(2, 0, 1))
        else:
            by, y_tm = bx, x_tm

        s = np.matmul(x_tm * lam_h[None, None, :], y_tm.transpose(0, 2, 1))  # (t, n, m)
        s += mu[:, None, None]
        if cfg.variant == "conditional":
            alpha = lay.view(v, "alpha")
            gam = lay.view(v, "gamma")
            beta = lay.view(v, "beta")[0]
            ls2a = lay.view(v, "log_s2_alpha")[0]
            ls2g = lay.view(v, "log_s2_gamma")[0]
            s += alpha[None, :, None]
            s += gam[self._year0][:, None, None]
            s += beta * self._cov[:, None, None]

        mask_t = self._mask_t
        logp, resid = _bernoulli_terms(self._masked_a_t, mask_t, s)

        # intercept
        g_mu = resid.sum(axis=(1, 2)) - self._prec_mu @ (mu - cfg.mu0)
        diff_mu = mu - cfg.mu0
        logp -= 0.5 * float(diff_mu @ (self._prec_mu @ diff_mu))
        lay.view(grad, "mu")[...] = g_mu

        # trait-space weights and factor tensors; gx/gy are the
        # likelihood gradients wrt the factor tensors, time-major
        if bip:
            gx0 = np.matmul(resid, y_tm)  # (t, n, h), lam_h not yet applied
            gy0 = np.matmul(resid.transpose(0, 2, 1), x_tm)
            d_lam_h = np.einsum("tih,tih->h", gx0, x_tm)
        else:
            resid_sym = resid + resid.transpose(0, 2, 1)
            gx0 = np.matmul(resid_sym, x_tm)
            # X_i X_j is exchange-symmetric, so the symmetrized product
            # double-counts the upper-triangle sum
            d_lam_h = 0.5 * np.einsum("tih,tih->h", gx0, x_tm)

        d_lam_k = np.zeros(k)
        sets = [("ux", "vx", "wx", ux, vx, wx, gx0, bx, n)]
        if bip:
            sets.append(("uy", "vy", "wy", uy, vy, wy, gy0, by, m))
        for name_u, name_v, name_w, u_m, v_m, w_m, g0, b_m, rows in sets:
            g_t = np.ascontiguousarray(
                (g0 * lam_h[None, None, :]).transpose(1, 2, 0)
            ).reshape(rows, h * t)
            du = g_t @ b_m.reshape(k, h * t).T  # (rows, k)
            t1 = (u_m.T @ g_t).reshape(k, h, t)
            dv = np.einsum("kht,tk->hk", t1, w_m)
            dw = np.einsum("kht,hk->tk", t1, v_m)
            d_lam_k += np.einsum("tk,tk->k", dw, w_m)
            prec_w_m = self._prec_w @ w_m
            logp += float(
                -0.5 * (np.sum(u_m * u_m) + np.sum(v_m * v_m)) / cfg.sigma2
                - 0.5 * np.sum(w_m * prec_w_m)
            )
            lay.view(grad, name_u)[...] = lam_k[None, :] * du - u_m / cfg.sigma2
            lay.view(grad, name_v)[...] = lam_k[None, :] * dv - v_m / cfg.sigma2
            lay.view(grad, name_w)[...] = lam_k[None, :] * dw - prec_w_m

        # shrinkage chains, with gamma priors and log-transform Jacobian
        logp += float(np.sum(self._ak * xi_k - self._bk * theta_k))
        logp += float(np.sum(self._ah * xi_h - self._bh * theta_h))
        lay.view(grad, "log_theta_k")[...] = (
            _reverse_cumsum(d_lam_k * lam_k) + self._ak - self._bk * theta_k
        )
        lay.view(grad, "log_theta_h")[...] = (
            _reverse_cumsum(d_lam_h * lam_h) + self._ah - self._bh * theta_h
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
            resid_t = resid.sum(axis=(1, 2))
            lay.view(grad, "alpha")[...] = resid.sum(axis=(0, 2)) - alpha / s2a
            lay.view(grad, "gamma")[...] = (
                np.bincount(self._year0, weights=resid_t, minlength=n_g)
                - gam / s2g
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

    # -- convenience --------------------------------------------------------

    def initial_point(self, rng: np.random.Generator) -> np.ndarray:
        """Prior draw with latent factor blocks scaled down by 0.1.

        The scaling keeps initial propensities away from the saturated
        tails of the link.
        """
        cfg = self.cfg
        lay = self.layout
        v = np.empty(self.dim)
        lay.view(v, "log_theta_k")[...] = np.log(
            rng.gamma(shape=self._ak, scale=1.0 / self._bk)
        )
        lay.view(v, "log_theta_h")[...] = np.log(
            rng.gamma(shape=self._ah, scale=1.0 / self._bh)
        )
        sd = np.sqrt(cfg.sigma2)
        scale = 0.1
        lay.view(v, "ux")[...] = scale * sd * rng.standard_normal((cfg.n, cfg.k))
        lay.view(v, "vx")[...] = scale * sd * rng.standard_normal((cfg.h, cfg.k))
        lay.view(v, "wx")[...] = scale * (
            self._chol_w.lower @ rng.standard_normal((cfg.t, cfg.k))
        )
        if cfg.bipartite_factors:
            lay.view(v, "uy")[...] = scale * sd * rng.standard_normal((cfg.m, cfg.k))
            lay.view(v, "vy")[...] = scale * sd * rng.standard_normal((cfg.h, cfg.k))
            lay.view(v, "wy")[...] = scale * (
                self._chol_w.lower @ rng.standard_normal((cfg.t, cfg.k))
            )
        lay.view(v, "mu")[...] = cfg.mu0 + self._chol_mu.lower @ rng.standard_normal(
            cfg.t
        )
        if cfg.variant == "conditional":
            lay.view(v, "alpha")[...] = scale * rng.standard_normal(cfg.n_plant_effects)
            lay.view(v, "gamma")[...] = scale * rng.standard_normal(cfg.n_year_effects)
            lay.view(v, "beta")[...] = scale * rng.standard_normal()
            lay.view(v, "log_s2_alpha")[...] = 0.0
            lay.view(v, "log_s2_gamma")[...] = 0.0
        return v

    def propensity(self, v: np.ndarray) -> np.ndarray:
        """Raw propensity values for one unconstrained draw."""
        return _propensity_values(from_unconstrained(v, self.cfg), self.cfg, self.data)


def posterior_density_and_gradient(
    v: np.ndarray, cfg: NexConfig, d: DesignData
) -> tuple[float, np.ndarray]:
    """One-shot evaluation; builds the posterior context each call.

    For repeated evaluation (sampling), construct a NexPosterior once.
    """
    return NexPosterior(cfg, d)(v)


def default_sigma2(k_star: int = 7) -> float:
    """Prior variance heuristic for loading entries given a rank guess."""
    if k_star < 1:
        raise ValueError("k_star must be positive")
    return 1.0 / np.sqrt(k_star)


def with_mu0(cfg: NexConfig, d: DesignData) -> NexConfig:
    """Config with mu0 replaced by the empirical prevalence logit."""
    return replace(cfg, mu0=empirical_mu0(d))
