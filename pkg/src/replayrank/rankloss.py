"""Pairwise comparison targets and the margin ranking loss.

Targets are ordered index pairs (i, j) with s = sign(y_i - y_j) taken from
the ground-truth scores; tied pairs (s = 0) are skipped because they add a
constant to the loss and nothing to the gradient. When there are more
non-tied pairs than `max_pairs`, pairs are sampled uniformly with
replacement so every video contributes the same number of terms.

The loss for one pair is max(0, -s * (p_i - p_j) + margin), averaged over
all pairs; its exact subgradient (0 at the hinge kink) is returned
alongside, ready to feed into the autodiff graph.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# beyond this length the sign matrix is not materialized; pairs are
# rejection-sampled in batches instead (O(max_pairs) memory)
_DENSE_LIMIT = 2048


@dataclass
class ComparisonTargets:
    pairs_i: np.ndarray
    pairs_j: np.ndarray
    signs: np.ndarray
    source_len: int
    seed: int
    degenerate: bool = False

    def __post_init__(self):
        self.pairs_i = np.ascontiguousarray(self.pairs_i, dtype=np.int64)
        self.pairs_j = np.ascontiguousarray(self.pairs_j, dtype=np.int64)
        self.signs = np.ascontiguousarray(self.signs, dtype=np.int8)
        if not (self.pairs_i.shape == self.pairs_j.shape == self.signs.shape):
            raise ValueError("pairs_i, pairs_j and signs must have identical length")
        if self.pairs_i.size:
            if np.any(self.pairs_i == self.pairs_j):
                raise ValueError("self-comparisons (i == j) are not allowed")
            if np.any(self.signs == 0):
                raise ValueError("tied targets (s == 0) are not allowed")
            hi = max(self.pairs_i.max(), self.pairs_j.max())
            if hi >= self.source_len:
                raise ValueError(f"pair index {hi} out of range for source_len {self.source_len}")

    def __len__(self) -> int:
        return int(self.pairs_i.size)

    @property
    def pairs(self) -> list[tuple[int, int, int]]:
        return list(zip(self.pairs_i.tolist(), self.pairs_j.tolist(), self.signs.tolist()))


def _count_nontied(gt: np.ndarray) -> int:
    n = gt.shape[0]
    _, counts = np.unique(gt, return_counts=True)
    tied = int((counts * (counts - 1)).sum())
    return n * (n - 1) - tied


def build_targets(gt: np.ndarray, max_pairs: int, seed: int) -> ComparisonTargets:
    """Comparison targets for one video's ground-truth score vector.

    All non-tied ordered pairs are returned (row-major order) when they fit
    within max_pairs; otherwise max_pairs are sampled uniformly with
    replacement. An all-tied curve yields empty targets flagged degenerate.
    """
    gt = np.asarray(gt, dtype=np.float64)
    if gt.ndim != 1 or gt.shape[0] < 2:
        raise ValueError(f"ground truth must be a vector of length >= 2, got shape {gt.shape}")
    if max_pairs < 1:
        raise ValueError("max_pairs must be >= 1")
    n = gt.shape[0]
    seed = int(seed)

    nontied = _count_nontied(gt)
    if nontied == 0:
        empty = np.empty(0, dtype=np.int64)
        return ComparisonTargets(empty, empty, empty.astype(np.int8), n, seed, degenerate=True)

    if nontied <= max_pairs:
        if n <= _DENSE_LIMIT:
            sgn = np.sign(gt[:, None] - gt[None, :])
            ii, jj = np.nonzero(sgn)
            return ComparisonTargets(ii, jj, sgn[ii, jj].astype(np.int8), n, seed)
        parts_i, parts_j, parts_s = [], [], []
        for i in range(n):
            row = np.sign(gt[i] - gt)
            jj = np.nonzero(row)[0]
            parts_i.append(np.full(jj.size, i, dtype=np.int64))
            parts_j.append(jj)
            parts_s.append(row[jj].astype(np.int8))
        return ComparisonTargets(
            np.concatenate(parts_i), np.concatenate(parts_j), np.concatenate(parts_s), n, seed
        )

    rng = np.random.default_rng(np.random.SeedSequence([seed, n]))
    got_i, got_j = [], []
    remaining = max_pairs
    while remaining > 0:
        draw = max(2 * remaining, 64)
        ii = rng.integers(0, n, size=draw)
        jj = rng.integers(0, n, size=draw)
        keep = gt[ii] != gt[jj]
        ii, jj = ii[keep][:remaining], jj[keep][:remaining]
        got_i.append(ii)
        got_j.append(jj)
        remaining -= ii.size
    ii = np.concatenate(got_i)
    jj = np.concatenate(got_j)
    return ComparisonTargets(ii, jj, np.sign(gt[ii] - gt[jj]).astype(np.int8), n, seed)


def margin_rank_loss(
    pred: np.ndarray, targets: ComparisonTargets, margin: float
) -> tuple[float, np.ndarray]:
    """Mean hinge loss over target pairs and its exact subgradient w.r.t. pred."""
    pred = np.asarray(pred, dtype=np.float64)
    if pred.ndim != 1:
        raise ValueError(f"pred must be a vector, got shape {pred.shape}")
    if margin < 0:
        raise ValueError("margin must be >= 0")
    grad = np.zeros_like(pred)
    if len(targets) == 0:
        return 0.0, grad
    if targets.pairs_i.max() >= pred.shape[0] or targets.pairs_j.max() >= pred.shape[0]:
        raise ValueError(
            f"target indices exceed prediction length {pred.shape[0]} "
            f"(source_len was {targets.source_len})"
        )

    s = targets.signs.astype(np.float64)
    resid = margin - s * (pred[targets.pairs_i] - pred[targets.pairs_j])
    active = resid > 0
    n_pairs = len(targets)
    loss = float(resid[active].sum()) / n_pairs
    coeff = s[active] / n_pairs
    np.add.at(grad, targets.pairs_i[active], -coeff)
    np.add.at(grad, targets.pairs_j[active], coeff)
    return loss, grad
