"""Model assessment: ranking metrics, cross-validation folds, posterior
summaries and chain diagnostics.

Predictive probabilities for held-out cells are posterior means of the
per-draw probabilities (averaging on the probability scale). The
split-half potential scale reduction uses the conservative form
``sqrt((W + B) / W)`` with the between-half variance computed as a
population variance, which makes the statistic invariant under chain
duplication and exactly one when all half-chains agree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .nexmodel import NexConfig, ParamLayout


def auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative.

    Ties count one half; equals brute-force enumeration over all
    positive-negative pairs.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.size != labels.size:
        raise ValueError("scores and labels differ in length")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be binary")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one positive and one negative label")
    ranks = rankdata(scores, method="average")
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class FoldAssignment:
    """Partition of observed cells into folds of near-equal size."""

    cells: np.ndarray  # (n_cells, 3) of 1-based (i, j, t)
    fold: np.ndarray  # (n_cells,) fold ids in 1..n_folds
    n_folds: int
    seed: int

    def cells_in_fold(self, f: int) -> np.ndarray:
        return self.cells[self.fold == f]


def observed_cells(data) -> np.ndarray:
    """1-based (i, j, t) of all cells carrying likelihood."""
    from .nexmodel import _likelihood_mask

    mask = _likelihood_mask(data)
    idx = np.argwhere(mask > 0)
    return idx + 1


def make_cv_folds(data, n_folds: int, seed: int) -> FoldAssignment:
    """Uniform random partition of observed cells, sizes within one."""
    if n_folds < 2:
        raise ValueError("need at least two folds")
    cells = observed_cells(data)
    if cells.shape[0] < n_folds:
        raise ValueError(
            f"only {cells.shape[0]} observed cells for {n_folds} folds"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(cells.shape[0])
    fold = np.empty(cells.shape[0], dtype=np.int64)
    fold[order] = (np.arange(cells.shape[0]) % n_folds) + 1
    return FoldAssignment(cells=cells, fold=fold, n_folds=n_folds, seed=seed)


def heldout_ratio(pi, edge_cells, nonedge_cells) -> float:
    """Mean held-out probability over edges divided by that over non-edges."""
    pi_values = pi.values if hasattr(pi, "values") else np.asarray(pi)

    def gather(cells, name):
        cells = np.asarray(cells, dtype=np.int64)
        if cells.size == 0:
            raise ValueError(f"{name} set is empty")
        idx = cells - 1
        return pi_values[idx[:, 0], idx[:, 1], idx[:, 2]]

    edge_mean = float(gather(edge_cells, "edge").mean())
    nonedge_mean = float(gather(nonedge_cells, "non-edge").mean())
    if nonedge_mean == 0.0:
        raise ValueError("non-edge mean probability is zero")
    return edge_mean / nonedge_mean


def _split_halves(chains) -> list[np.ndarray]:
    halves = []
    for chain in chains:
        chain = np.asarray(chain, dtype=np.float64).reshape(-1)
        if chain.size < 4:
            raise ValueError("need at least 4 draws per chain")
        half = chain.size // 2
        halves.append(chain[:half])
        halves.append(chain[half : 2 * half])
    return halves


def split_rhat(chains, extract=None) -> float:
    """Split-half potential scale reduction across one or more chains.

    ``chains`` holds per-chain quantity draws (1-d arrays), or draw
    matrices if ``extract`` maps a matrix to a quantity vector.
    """
    if extract is not None:
        chains = [extract(np.asarray(c)) for c in chains]
    halves = _split_halves(chains)
    means = np.array([h.mean() for h in halves])
    variances = np.array([h.var(ddof=1) for h in halves])
    w = float(variances.mean())
    b = float(((means - means.mean()) ** 2).mean())
    if w == 0.0:
        return 1.0
    return float(np.sqrt((w + b) / w))


def ess(chains) -> float:
    """Effective draw count via per-chain initial positive sequences."""
    total = 0.0
    for chain in chains:
        chain = np.asarray(chain, dtype=np.float64).reshape(-1)
        n = chain.size
        if n < 4:
            raise ValueError("need at least 4 draws per chain")
        centered = chain - chain.mean()
        var0 = float(centered @ centered) / n
        if var0 == 0.0:
            total += n
            continue
        # autocovariances via FFT
        size = int(2 ** np.ceil(np.log2(2 * n)))
        fft = np.fft.rfft(centered, size)
        acov = np.fft.irfft(fft * np.conj(fft), size)[:n].real / n
        rho = acov / acov[0]
        # Geyer: sum consecutive pairs while positive
        tau = 1.0
        for lag in range(1, n - 1, 2):
            pair = rho[lag] + rho[lag + 1] if lag + 1 < n else rho[lag]
            if pair < 0:
                break
            tau += 2.0 * pair
        total += n / max(tau, 1.0 / n)
    return float(total)


QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass(frozen=True)
class PosteriorSummary:
    """Moments, quantiles and mixing diagnostics for one quantity."""

    mean: float
    sd: float
    quantiles: tuple[float, ...]
    rhat: float
    ess: float

    @classmethod
    def from_chains(cls, chains) -> "PosteriorSummary":
        pooled = np.concatenate([np.asarray(c, dtype=np.float64).reshape(-1) for c in chains])
        return cls(
            mean=float(pooled.mean()),
            sd=float(pooled.std(ddof=1)) if pooled.size > 1 else 0.0,
            quantiles=tuple(float(q) for q in np.quantile(pooled, QUANTILES)),
            rhat=split_rhat(chains),
            ess=ess(chains),
        )


SHRINKAGE_FLAG_FRACTION = 0.05  # dimension flagged when mean weight falls below
# this fraction of the leading weight


def weight_draws(draw_matrices, cfg: NexConfig, space: str) -> list[np.ndarray]:
    """Per-chain draws of the cumulative shrinkage weights.

    ``space`` selects "k" (exemplar) or "h" (trait) weights; each
    returned array is (n_draws, size) on the constrained scale.
    """
    layout = ParamLayout.for_config(cfg)
    name = {"k": "log_theta_k", "h": "log_theta_h"}[space]
    lo, hi, _ = layout.offsets[name]
    out = []
    for draws in draw_matrices:
        draws = np.asarray(draws, dtype=np.float64)
        out.append(np.cumprod(np.exp(draws[:, lo:hi]), axis=1))
    return out


def shrinkage_report(draw_matrices, cfg: NexConfig) -> list[dict]:
    """Posterior summaries of every shrinkage weight, with dimension flags.

    A dimension is flagged effectively zero when its posterior mean
    falls below SHRINKAGE_FLAG_FRACTION of the leading dimension's.
    """
    rows = []
    for space, size in (("k", cfg.k), ("h", cfg.h)):
        per_chain = weight_draws(draw_matrices, cfg, space)
        means = np.concatenate(per_chain).mean(axis=0)
        lead = means[0]
        for idx in range(size):
            chains = [chain[:, idx] for chain in per_chain]
            summary = PosteriorSummary.from_chains(chains)
            rows.append(
                {
                    "space": space,
                    "index": idx + 1,
                    "mean": summary.mean,
                    "sd": summary.sd,
                    "quantiles": summary.quantiles,
                    "rhat": summary.rhat,
                    "ess": summary.ess,
                    "flagged": bool(means[idx] < SHRINKAGE_FLAG_FRACTION * lead),
                }
            )
    return rows


def pearson(a, b) -> float:
    """Pearson correlation of two flat arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size or a.size < 2:
        raise ValueError("need two conforming arrays with at least 2 entries")
    return float(np.corrcoef(a, b)[0, 1])


def mean_abs_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise ValueError("arrays do not conform")
    return float(np.abs(a - b).mean())
