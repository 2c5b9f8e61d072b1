"""Dense 3-mode tensors and rank-K outer-product (CP) arithmetic.

Everything here is desk scale: tensors are stored densely as float64
arrays and all operations are pure. The canonical linear order of tensor
entries is mode-1 fastest (Fortran order); file serialization and flat
views rely on that order being fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _finite_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class Tensor3:
    """Immutable dense tensor with dims (n1, n2, n3).

    The backing array is copied on construction and marked read-only, so
    instances are safe to share across threads.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = _finite_array(self.values, "values")
        if arr.ndim != 3:
            raise ValueError(f"expected 3 modes, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"all dims must be positive, got {arr.shape}")
        arr = arr.copy(order="C")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    def flat(self) -> np.ndarray:
        """Entries in canonical order (mode-1 fastest)."""
        return self.values.ravel(order="F")

    @classmethod
    def from_flat(cls, flat, dims: tuple[int, int, int]) -> "Tensor3":
        """Inverse of :meth:`flat` for the given dims."""
        arr = np.asarray(flat, dtype=np.float64).reshape(dims, order="F")
        return cls(arr)


@dataclass(frozen=True)
class CpFactorSet:
    """Weights plus factor matrices for one rank-K decomposition.

    ``weights`` has length K and ``u``, ``v``, ``w`` are n1 x K, n2 x K
    and n3 x K. Component k contributes
    ``weights[k] * outer(u[:, k], v[:, k], w[:, k])``.
    """

    weights: np.ndarray
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        weights = _finite_array(self.weights, "weights").reshape(-1)
        mats = {}
        for name in ("u", "v", "w"):
            mat = _finite_array(getattr(self, name), name)
            if mat.ndim != 2:
                raise ValueError(f"{name} must be a matrix, got shape {mat.shape}")
            if mat.shape[1] != weights.size:
                raise ValueError(
                    f"{name} has {mat.shape[1]} columns but weights has length "
                    f"{weights.size}"
                )
            mat = mat.copy()
            mat.flags.writeable = False
            mats[name] = mat
        weights = weights.copy()
        weights.flags.writeable = False
        object.__setattr__(self, "weights", weights)
        for name, mat in mats.items():
            object.__setattr__(self, name, mat)

    @property
    def rank(self) -> int:
        return self.weights.size

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.u.shape[0], self.v.shape[0], self.w.shape[0])


def cp_reconstruct(f: CpFactorSet) -> Tensor3:
    """Evaluate the rank-K sum of outer products as a dense tensor.

    Entry (i, h, t) is ``sum_k weights[k] u[i,k] v[h,k] w[t,k]``.
    """
    values = np.einsum("k,ik,hk,tk->iht", f.weights, f.u, f.v, f.w, optimize=True)
    return Tensor3(values)


def frontal_slice(x: Tensor3, t: int) -> np.ndarray:
    """Return the n1 x n2 matrix at time index t (1-based)."""
    n3 = x.dims[2]
    if not 1 <= t <= n3:
        raise IndexError(f"slice index {t} out of range 1..{n3}")
    return x.values[:, :, t - 1].copy()
