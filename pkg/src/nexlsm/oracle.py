"""Exact low-rank representations used as a correctness oracle.

Any sequence of propensity matrices can be written exactly as per-slice
factor products via the SVD, and those per-slice factors can in turn be
expanded in the canonical basis as a rank-NH combination of node
loadings, trait loadings and temporal curves. Chaining the two
constructions demonstrates that the nested exemplar parameterization
can represent an arbitrary tensor at finite rank, and provides exact
targets for reconstruction tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor3 import CpFactorSet, Tensor3


class InsufficientRankError(ValueError):
    """Requested trait dimension below the max numerical slice rank."""

    def __init__(self, needed: int, given: int):
        super().__init__(
            f"trait dimension {given} is below the maximum slice rank {needed}"
        )
        self.needed = needed
        self.given = given


RANK_RTOL = 1e-10  # singular values below this fraction of the largest count as zero


@dataclass(frozen=True)
class ExactRep:
    """Per-slice factors reproducing each slice exactly (up to roundoff).

    ``x_seq[t]`` and ``y_seq[t]`` are n x H and m x H with trailing
    zero-padding columns; ``max_error`` is the achieved max Frobenius
    residual and ``h0`` the maximum numerical rank across slices.
    """

    x_seq: tuple[np.ndarray, ...]
    y_seq: tuple[np.ndarray, ...]
    max_error: float
    h0: int


def exact_factorization(slices, h: int) -> ExactRep:
    """Factor each slice as X_t Y_t' via its SVD, zero-padded to width h.

    Requires h at least the maximum numerical rank of the slices
    (singular values below RANK_RTOL of the largest are treated as
    zero). The intercept is taken as zero; callers remove any common
    mean beforehand.
    """
    mats = [np.asarray(s, dtype=np.float64) for s in slices]
    if not mats:
        raise ValueError("need at least one slice")
    shape = mats[0].shape
    for s in mats:
        if s.ndim != 2 or s.shape != shape:
            raise ValueError("slices must all share one 2-d shape")

    ranks = []
    svds = []
    for s in mats:
        left, sing, right_t = np.linalg.svd(s, full_matrices=False)
        if sing.size and sing[0] > 0:
            rank = int(np.sum(sing > RANK_RTOL * sing[0]))
        else:
            rank = 0
        ranks.append(rank)
        svds.append((left, sing, right_t))
    h0 = max(ranks)
    if h < h0:
        raise InsufficientRankError(needed=h0, given=h)

    x_seq = []
    y_seq = []
    max_err = 0.0
    for s, rank, (left, sing, right_t) in zip(mats, ranks, svds):
        root = np.sqrt(sing[:rank])
        x_t = np.zeros((shape[0], h))
        y_t = np.zeros((shape[1], h))
        x_t[:, :rank] = left[:, :rank] * root[None, :]
        y_t[:, :rank] = right_t[:rank].T * root[None, :]
        max_err = max(max_err, float(np.linalg.norm(s - x_t @ y_t.T)))
        x_seq.append(x_t)
        y_seq.append(y_t)
    return ExactRep(
        x_seq=tuple(x_seq), y_seq=tuple(y_seq), max_error=max_err, h0=h0
    )


def canonical_cp(x_seq) -> CpFactorSet:
    """Expand per-slice factor matrices in the canonical basis.

    Component k = n_nodes * (h - 1) + n (1-based) pairs node basis
    vector e_n with trait basis vector e_h; its temporal curve is the
    (n, h) entry path across slices. All weights are one and the
    reconstruction of every slice is exact.
    """
    mats = [np.asarray(x, dtype=np.float64) for x in x_seq]
    if not mats:
        raise ValueError("need at least one slice")
    n, h = mats[0].shape
    for m in mats:
        if m.shape != (n, h):
            raise ValueError("slices must all share one 2-d shape")
    t = len(mats)
    k = n * h
    u = np.zeros((n, k))
    v = np.zeros((h, k))
    w = np.zeros((t, k))
    stacked = np.stack(mats)  # (t, n, h)
    for h_idx in range(h):
        for n_idx in range(n):
            col = n * h_idx + n_idx  # 0-based form of k = N(h-1)+n
            u[n_idx, col] = 1.0
            v[h_idx, col] = 1.0
            w[:, col] = stacked[:, n_idx, h_idx]
    return CpFactorSet(weights=np.ones(k), u=u, v=v, w=w)


def canonical_index(n_nodes: int, n: int, h: int) -> int:
    """1-based component index of node n, trait h in the canonical map."""
    if not (1 <= n <= n_nodes and h >= 1):
        raise ValueError("indices are 1-based and must be in range")
    return n_nodes * (h - 1) + n


def verify_representation(s_target: Tensor3, mu, x_seq, y_seq) -> float:
    """Max Frobenius residual of mu_t 11' + X_t Y_t' against the target."""
    target = s_target.values if isinstance(s_target, Tensor3) else np.asarray(s_target)
    n, m, t = target.shape
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    if mu.size != t or len(x_seq) != t or len(y_seq) != t:
        raise ValueError("time dimensions do not conform")
    worst = 0.0
    for idx in range(t):
        approx = mu[idx] + np.asarray(x_seq[idx]) @ np.asarray(y_seq[idx]).T
        if approx.shape != (n, m):
            raise ValueError("factor shapes do not conform to the target")
        worst = max(worst, float(np.linalg.norm(target[:, :, idx] - approx)))
    return worst
