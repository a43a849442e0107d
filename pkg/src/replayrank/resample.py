"""Length alignment between feature sequences (length T) and curves (length 100).

Two schemes, matching the two training setups:
  * interpolate a 100-point curve up/down to an arbitrary length, and
  * average features (or curve values) into a fixed number of bins.

Binning uses floor-rule edges floor(b*T/bins), so bin widths differ by at
most one and every bin is nonempty whenever bins <= T. The same partition
rule is reused for the attention model's local windows.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import CURVE_LEN, FeatureSequence, ReplayCurve


@dataclass
class ResampledCurve:
    """A 100-point curve resampled to length L (interpolated or binned)."""

    scores: np.ndarray
    source_length: int = CURVE_LEN

    def __post_init__(self):
        self.scores = np.ascontiguousarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 1 or self.scores.shape[0] < 2:
            raise ValueError(f"resampled curve must have length >= 2, got shape {self.scores.shape}")


@dataclass
class BinnedFeatures:
    """Bin-averaged features: (bins, 1024) rows plus the segment-index edges."""

    features: np.ndarray
    bin_edges: np.ndarray

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.bin_edges = np.ascontiguousarray(self.bin_edges, dtype=np.int64)
        if self.bin_edges.shape[0] != self.features.shape[0] + 1:
            raise ValueError("bin_edges must have one more entry than there are bins")


def partition_edges(total: int, bins: int) -> np.ndarray:
    """Floor-rule edges: bin b covers [floor(b*total/bins), floor((b+1)*total/bins))."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if bins > total:
        raise ValueError(f"cannot split {total} items into {bins} nonempty bins")
    return (np.arange(bins + 1, dtype=np.int64) * total) // bins


def interpolate_scores(values: np.ndarray, target_len: int) -> np.ndarray:
    """Linearly resample a score vector onto target_len evenly spaced points.

    Both grids are normalized to [0, 1] (k/(L-1) against i/(n-1)), so the
    endpoints are preserved exactly.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.shape[0] < 2:
        raise ValueError(f"need a vector of length >= 2, got shape {values.shape}")
    if target_len < 2:
        raise ValueError(f"target_len must be >= 2, got {target_len}")
    n = values.shape[0]
    if target_len == n:
        return values.copy()
    u = np.arange(target_len, dtype=np.float64) / (target_len - 1)
    src = np.arange(n, dtype=np.float64) / (n - 1)
    out = np.interp(u, src, values)
    out[0] = values[0]
    out[-1] = values[-1]
    return out


def bin_matrix_rows(matrix: np.ndarray, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Average consecutive row blocks of a matrix into `bins` rows."""
    matrix = np.asarray(matrix, dtype=np.float64)
    edges = partition_edges(matrix.shape[0], bins)
    # np.add.reduceat sums rows between consecutive edges
    sums = np.add.reduceat(matrix, edges[:-1], axis=0)
    widths = np.diff(edges).astype(np.float64)
    return sums / widths[:, None], edges


def interpolate_curve(curve: ReplayCurve, target_len: int) -> ResampledCurve:
    """Resample a 100-point ground-truth curve to target_len points."""
    return ResampledCurve(interpolate_scores(curve.scores, target_len))


def bin_features(seq: FeatureSequence, bins: int) -> BinnedFeatures:
    """Average the (T, 1024) feature rows into `bins` uniform-size bins."""
    if bins > seq.t:
        raise ValueError(f"bins={bins} exceeds segment count T={seq.t}")
    binned, edges = bin_matrix_rows(seq.features.astype(np.float64), bins)
    return BinnedFeatures(binned, edges)


def bin_curve(curve: ReplayCurve, bins: int) -> ResampledCurve:
    """Average the 100 ground-truth values into `bins` uniform-size blocks."""
    if bins > CURVE_LEN:
        raise ValueError(f"bins={bins} exceeds curve length {CURVE_LEN}")
    binned, _ = bin_matrix_rows(curve.scores[:, None], bins)
    return ResampledCurve(binned[:, 0])
