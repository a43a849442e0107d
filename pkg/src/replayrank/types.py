"""Core domain types: per-video feature sequences, replay curves, score vectors.

A video is represented by a (T, 1024) float32 feature matrix (one row per
~1.1s segment) and a ground-truth replay curve of exactly 100 scalars in
[0, 1]. Models emit one sigmoid score per scored segment.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FEATURE_DIM = 1024
CURVE_LEN = 100
MIN_SEGMENTS = 10


class DatasetError(Exception):
    """Base class for dataset loading/validation failures."""


class DatasetLoadError(DatasetError):
    """A required dataset file is missing or unreadable."""


class DatasetFormatError(DatasetError):
    """A dataset file exists but its shape/size does not match the index."""


class CurveValidationError(DatasetError):
    """A replay curve violates the length/range contract."""


@dataclass
class FeatureSequence:
    """Per-video sequence of T feature vectors, stored as float32 (T, 1024)."""

    video_id: str
    features: np.ndarray

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        if self.features.ndim != 2 or self.features.shape[1] != FEATURE_DIM:
            raise DatasetFormatError(
                f"feature matrix for '{self.video_id}' has shape "
                f"{self.features.shape}, expected (T, {FEATURE_DIM})"
            )
        if self.features.shape[0] < MIN_SEGMENTS:
            raise DatasetFormatError(
                f"feature matrix for '{self.video_id}' has T={self.features.shape[0]} "
                f"segments, minimum is {MIN_SEGMENTS}"
            )
        if not np.isfinite(self.features).all():
            raise DatasetFormatError(
                f"feature matrix for '{self.video_id}' contains non-finite entries"
            )

    @property
    def t(self) -> int:
        return self.features.shape[0]


@dataclass
class ReplayCurve:
    """Ground-truth replay curve: exactly 100 scalars in [0, 1]."""

    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.ascontiguousarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 1 or self.scores.shape[0] != CURVE_LEN:
            raise CurveValidationError(
                f"curve length {self.scores.shape[0] if self.scores.ndim == 1 else self.scores.shape} "
                f"≠ {CURVE_LEN}"
            )
        if not np.isfinite(self.scores).all():
            raise CurveValidationError("curve contains non-finite values")
        if self.scores.min() < 0.0 or self.scores.max() > 1.0:
            bad = self.scores[(self.scores < 0.0) | (self.scores > 1.0)][0]
            raise CurveValidationError(f"curve value {bad} outside [0, 1]")


@dataclass
class ScoreVector:
    """Model predictions: one scalar strictly inside (0, 1) per segment."""

    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.ascontiguousarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 1:
            raise ValueError(f"scores must be a vector, got shape {self.scores.shape}")
        if not np.isfinite(self.scores).all():
            raise ValueError("scores contain non-finite values")
        if self.scores.min() <= 0.0 or self.scores.max() >= 1.0:
            raise ValueError("scores must lie strictly inside (0, 1)")

    def __len__(self) -> int:
        return self.scores.shape[0]


@dataclass
class DatasetRecord:
    """One video: features plus its ground-truth curve (and loader metadata)."""

    features: FeatureSequence
    ground_truth: ReplayCurve
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.features.video_id:
            raise DatasetFormatError("record has an empty video_id")

    @property
    def video_id(self) -> str:
        return self.features.video_id


@dataclass
class SyntheticLaw:
    """Seeded feature->score law used to generate verifiable synthetic data.

    Per-segment raw score is sigmoid(features @ weight) plus Gaussian noise,
    smoothed by a centered moving average, resampled to 100 points and
    min-max rescaled. A linear readout like this is learnable by both model
    families, which is what makes the end-to-end training check meaningful.
    """

    seed: int
    weight: np.ndarray
    noise_std: float = 0.0
    smoothing_window: int = 1

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        if self.weight.shape != (FEATURE_DIM,):
            raise ValueError(f"weight must have shape ({FEATURE_DIM},), got {self.weight.shape}")
        norm = float(np.linalg.norm(self.weight))
        if not np.isclose(norm, 1.0, rtol=0, atol=1e-9):
            raise ValueError(f"weight must have unit norm, got {norm}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.smoothing_window < 1:
            raise ValueError("smoothing_window must be a positive integer")

    @classmethod
    def from_seed(cls, seed: int, noise_std: float = 0.0, smoothing_window: int = 1) -> "SyntheticLaw":
        """Draw a unit-norm weight vector from the seed's own stream."""
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5157]))
        w = rng.standard_normal(FEATURE_DIM)
        w /= np.linalg.norm(w)
        return cls(seed=int(seed), weight=w, noise_std=noise_std, smoothing_window=smoothing_window)
