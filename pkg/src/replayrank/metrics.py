"""Ranking metrics: precision@K, Kendall's tau, and Krippendorff's alpha.

Rankings are canonicalized from raw scores (descending, ties broken by
ascending index) so every metric is invariant to strictly monotone
transforms of the underlying scores.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UndefinedAlphaError(ValueError):
    """Krippendorff's alpha is undefined for the given rating matrix."""


@dataclass
class Ranking:
    """A permutation of {0..M-1}, best-first."""

    order: np.ndarray

    def __post_init__(self):
        self.order = np.ascontiguousarray(self.order, dtype=np.int64)
        m = self.order.shape[0]
        if self.order.ndim != 1 or not np.array_equal(np.sort(self.order), np.arange(m)):
            raise ValueError("order must be a permutation of 0..M-1")

    @property
    def m(self) -> int:
        return int(self.order.shape[0])

    def positions(self) -> np.ndarray:
        """positions()[item] = rank of that item (0 = best)."""
        pos = np.empty(self.m, dtype=np.int64)
        pos[self.order] = np.arange(self.m)
        return pos


def ranking_from_scores(scores: np.ndarray) -> Ranking:
    """Best-first ranking: descending score, ties broken by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1:
        raise ValueError(f"scores must be a vector, got shape {scores.shape}")
    if not np.isfinite(scores).all():
        raise ValueError("scores contain non-finite values")
    return Ranking(np.argsort(-scores, kind="stable"))


def precision_at_k(pred: Ranking, gt: Ranking, k: int) -> float:
    """|top-k(pred) ∩ top-k(gt)| / k."""
    if pred.m != gt.m:
        raise ValueError(f"rankings have different sizes: {pred.m} vs {gt.m}")
    if not 1 <= k <= pred.m:
        raise ValueError(f"k={k} out of range [1, {pred.m}]")
    return len(set(pred.order[:k].tolist()) & set(gt.order[:k].tolist())) / k


def kendall_tau(a: Ranking, b: Ranking) -> float:
    """(concordant - discordant) / (M*(M-1)/2) between two strict rankings."""
    if a.m != b.m:
        raise ValueError(f"rankings have different sizes: {a.m} vs {b.m}")
    pa, pb = a.positions(), b.positions()
    da = np.sign(pa[:, None] - pa[None, :])
    db = np.sign(pb[:, None] - pb[None, :])
    iu = np.triu_indices(a.m, k=1)
    prod = da[iu] * db[iu]
    return float(prod.sum()) / (a.m * (a.m - 1) // 2)


def random_precision_monte_carlo(
    m: int, ks: tuple[int, ...], trials: int, seed: int
) -> dict[int, float]:
    """Monte-Carlo mean precision@K of uniform-random rankings vs a fixed GT.

    The expectation is K/M; this estimates it by sampling whole rankings.
    """
    rng = np.random.default_rng(seed)
    gt = np.arange(m)
    perms = np.tile(np.arange(m), (trials, 1))
    rng.permuted(perms, axis=1, out=perms)
    out = {}
    for k in ks:
        gt_top = np.zeros(m, dtype=bool)
        gt_top[gt[:k]] = True
        hits = gt_top[perms[:, :k]].sum(axis=1)
        out[k] = float(hits.mean()) / k
    return out


def krippendorff_alpha(ratings: np.ndarray, metric: str = "ordinal") -> float:
    """Krippendorff's alpha for a (raters x items) matrix; NaN marks missing.

    alpha = 1 - D_o / D_e over the coincidence matrix of the pairable
    values. The ordinal difference uses the cumulative marginals of the
    sorted category values; "interval" uses squared value differences.
    """
    ratings = np.asarray(ratings, dtype=np.float64)
    if ratings.ndim != 2:
        raise ValueError(f"ratings must be a 2-D raters x items matrix, got {ratings.shape}")
    if ratings.shape[0] < 2:
        raise UndefinedAlphaError("need at least 2 raters")
    if metric not in ("ordinal", "interval"):
        raise ValueError(f"unsupported metric '{metric}'")

    present = np.isfinite(ratings)
    pairable = present.sum(axis=0) >= 2
    if pairable.sum() < 2:
        raise UndefinedAlphaError("need at least 2 items with 2 or more ratings")

    values = np.unique(ratings[present])
    n_cat = values.shape[0]
    if n_cat < 2:
        raise UndefinedAlphaError("all pairable ratings identical; alpha undefined")
    cat_index = {v: c for c, v in enumerate(values)}

    coincidence = np.zeros((n_cat, n_cat))
    for item in np.nonzero(pairable)[0]:
        vals = ratings[present[:, item], item]
        m_u = vals.shape[0]
        idx = np.array([cat_index[v] for v in vals])
        counts = np.bincount(idx, minlength=n_cat).astype(np.float64)
        pair_counts = np.outer(counts, counts) - np.diag(counts)
        coincidence += pair_counts / (m_u - 1)

    n_c = coincidence.sum(axis=1)
    n_total = n_c.sum()

    if metric == "ordinal":
        cum = np.cumsum(n_c)
        delta = np.zeros((n_cat, n_cat))
        for c in range(n_cat):
            for k in range(c + 1, n_cat):
                span = cum[k] - cum[c] + n_c[c] - (n_c[c] + n_c[k]) / 2.0
                delta[c, k] = delta[k, c] = span * span
    else:
        diff = values[:, None] - values[None, :]
        delta = diff * diff

    d_o = float((coincidence * delta).sum()) / n_total
    d_e = float((np.outer(n_c, n_c) * delta).sum()) / (n_total * (n_total - 1.0))
    if d_e == 0.0:
        raise UndefinedAlphaError("expected disagreement is zero; alpha undefined")
    return 1.0 - d_o / d_e
