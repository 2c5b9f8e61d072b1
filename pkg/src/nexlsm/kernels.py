"""Temporal covariance construction and multivariate normal utilities.

Covariances are L1-exponential kernels of user-supplied distance
matrices, entrywise ``exp(-k * d)``, optionally combined as a Hadamard
product of two such kernels for designs with two time coordinates
(within-season and across-year distance). Cholesky factorization applies
an escalating jitter because near-duplicate time points make these
kernels numerically singular.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a covariance cannot be factored at any jitter level."""


def _check_distance(d, name: str) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError(f"{name} must be square, got shape {d.shape}")
    if not np.all(np.isfinite(d)):
        raise ValueError(f"{name} contains non-finite entries")
    if np.any(d < 0):
        raise ValueError(f"{name} has negative distances")
    if not np.array_equal(d, d.T):
        raise ValueError(f"{name} is not symmetric")
    if np.any(np.diagonal(d) != 0):
        raise ValueError(f"{name} has nonzero self-distances")
    return d


@dataclass(frozen=True)
class CovSpec:
    """Distance matrices plus length scales defining a temporal covariance.

    With only ``d1``/``k1`` the covariance is ``exp(-k1 d1)``; with both
    pairs it is the entrywise product ``exp(-k1 d1) * exp(-k2 d2)``.
    """

    d1: np.ndarray
    k1: float
    d2: np.ndarray | None = None
    k2: float | None = None

    def __post_init__(self):
        d1 = _check_distance(self.d1, "d1")
        d1.flags.writeable = False
        object.__setattr__(self, "d1", d1)
        if not self.k1 > 0:
            raise ValueError(f"length scale k1 must be positive, got {self.k1}")
        if (self.d2 is None) != (self.k2 is None):
            raise ValueError("d2 and k2 must be supplied together")
        if self.d2 is not None:
            d2 = _check_distance(self.d2, "d2")
            if d2.shape != d1.shape:
                raise ValueError(
                    f"d1 and d2 dims differ: {d1.shape} vs {d2.shape}"
                )
            if not self.k2 > 0:
                raise ValueError(f"length scale k2 must be positive, got {self.k2}")
            d2 = d2.copy()
            d2.flags.writeable = False
            object.__setattr__(self, "d2", d2)

    @property
    def size(self) -> int:
        return self.d1.shape[0]


@dataclass(frozen=True)
class CholFactor:
    """Lower Cholesky factor together with the jitter that was applied."""

    lower: np.ndarray
    jitter: float

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=np.float64)
        lower = lower.copy()
        lower.flags.writeable = False
        object.__setattr__(self, "lower", lower)

    @property
    def size(self) -> int:
        return self.lower.shape[0]

    def log_det(self) -> float:
        """Log determinant of the (jittered) covariance."""
        return 2.0 * float(np.sum(np.log(np.diagonal(self.lower))))


def exp_kernel(d, k: float) -> np.ndarray:
    """Entrywise ``exp(-k * d)`` covariance for distance matrix d."""
    d = _check_distance(d, "d")
    if not k > 0:
        raise ValueError(f"length scale must be positive, got {k}")
    return np.exp(-k * d)


def separable_kernel(spec: CovSpec) -> np.ndarray:
    """Hadamard product of the two exponential kernels in spec."""
    if spec.d2 is None:
        raise ValueError("separable kernel needs both distance matrices")
    return np.exp(-(spec.k1 * spec.d1 + spec.k2 * spec.d2))


def cov_matrix(spec: CovSpec) -> np.ndarray:
    """Covariance for a spec, separable when two distances are present."""
    if spec.d2 is None:
        return exp_kernel(spec.d1, spec.k1)
    return separable_kernel(spec)


def chol_jitter(sigma, base_jitter: float | None = None) -> CholFactor:
    """Lower Cholesky of ``sigma + j*I`` with the smallest working jitter.

    Tries j in {0, base, 10*base, ..., 1e6*base}. The default base is
    1e-8 relative to the mean diagonal.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError(f"covariance must be square, got shape {sigma.shape}")
    if not np.allclose(sigma, sigma.T, rtol=0.0, atol=1e-10 * max(1.0, np.abs(sigma).max())):
        raise ValueError("covariance is not symmetric")
    if base_jitter is None:
        base_jitter = 1e-8 * max(float(np.mean(np.diagonal(sigma))), 1e-300)
    levels = [0.0] + [base_jitter * 10.0**p for p in range(7)]
    eye = np.eye(sigma.shape[0])
    for j in levels:
        try:
            lower = np.linalg.cholesky(sigma + j * eye)
            return CholFactor(lower=lower, jitter=j)
        except np.linalg.LinAlgError:
            continue
    raise NotPositiveDefiniteError(
        f"covariance not positive definite up to jitter {levels[-1]:g}"
    )


def mvn_logpdf(x, mean, chol: CholFactor) -> float:
    """Exact Gaussian log density via triangular solve against chol."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    n = chol.size
    if x.size != n or mean.size != n:
        raise ValueError(
            f"dimension mismatch: x {x.size}, mean {mean.size}, factor {n}"
        )
    z = solve_triangular(chol.lower, x - mean, lower=True)
    return float(
        -0.5 * n * np.log(2.0 * np.pi) - 0.5 * chol.log_det() - 0.5 * z @ z
    )


def mvn_sample(mean, chol: CholFactor, rng: np.random.Generator) -> np.ndarray:
    """Draw ``mean + L z`` with z standard normal from rng."""
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    if mean.size != chol.size:
        raise ValueError(
            f"dimension mismatch: mean {mean.size}, factor {chol.size}"
        )
    z = rng.standard_normal(chol.size)
    return mean + chol.lower @ z


def precision_matrix(chol: CholFactor) -> np.ndarray:
    """Dense inverse of the (jittered) covariance, from its factor."""
    eye = np.eye(chol.size)
    linv = solve_triangular(chol.lower, eye, lower=True)
    return linv.T @ linv


def index_distance(t: int) -> np.ndarray:
    """|i - j| distance matrix on an integer grid of length t."""
    idx = np.arange(t, dtype=np.float64)
    return np.abs(idx[:, None] - idx[None, :])
