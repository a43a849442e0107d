"""On-disk dataset format, loader/writer, and the synthetic dataset generator.

Directory layout:
    index.json        {"videos": [{"id": str, "t": int}, ...]}
    feat/<id>.f32     exactly 4*T*1024 bytes, little-endian float32, row-major
    mr/<id>.json      {"scores": [100 floats in [0, 1]]}

The float32 blobs and JSON curves round-trip bit-exactly, so generated
datasets can be regenerated and diffed byte for byte.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .resample import bin_matrix_rows, interpolate_scores
from .types import (
    CURVE_LEN,
    FEATURE_DIM,
    CurveValidationError,
    DatasetFormatError,
    DatasetLoadError,
    DatasetRecord,
    FeatureSequence,
    ReplayCurve,
    SyntheticLaw,
)

INDEX_NAME = "index.json"
FEAT_DIR = "feat"
CURVE_DIR = "mr"
_F32 = np.dtype("<f4")


def load_dataset(root_path: str | Path) -> list[DatasetRecord]:
    """Load every indexed video; validates shapes, sizes and curve ranges."""
    root = Path(root_path)
    index_path = root / INDEX_NAME
    if not index_path.is_file():
        raise DatasetLoadError(f"missing index file {index_path}")
    try:
        index = json.loads(index_path.read_text())
        videos = index["videos"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetFormatError(f"malformed index file {index_path}: {exc}") from exc

    records = []
    for entry in videos:
        vid = str(entry["id"])
        t = int(entry["t"])
        feat_path = root / FEAT_DIR / f"{vid}.f32"
        curve_path = root / CURVE_DIR / f"{vid}.json"
        if not feat_path.is_file():
            raise DatasetLoadError(f"missing feature file for video '{vid}': {feat_path}")
        if not curve_path.is_file():
            raise DatasetLoadError(f"missing annotation file for video '{vid}': {curve_path}")

        blob = feat_path.read_bytes()
        expected = 4 * t * FEATURE_DIM
        if len(blob) != expected:
            raise DatasetFormatError(
                f"feature file for '{vid}' has {len(blob)} bytes, expected "
                f"{expected} (= 4*{t}*{FEATURE_DIM})"
            )
        features = np.frombuffer(blob, dtype=_F32).reshape(t, FEATURE_DIM)

        try:
            payload = json.loads(curve_path.read_text())
            scores = payload["scores"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DatasetFormatError(f"malformed annotation file {curve_path}: {exc}") from exc
        if not isinstance(scores, list) or len(scores) != CURVE_LEN:
            n = len(scores) if isinstance(scores, list) else "?"
            raise CurveValidationError(f"curve length {n} ≠ {CURVE_LEN} for video '{vid}'")

        records.append(
            DatasetRecord(
                features=FeatureSequence(video_id=vid, features=features),
                ground_truth=ReplayCurve(np.asarray(scores, dtype=np.float64)),
            )
        )
    return records


def write_dataset(records: list[DatasetRecord], root_path: str | Path, force: bool = False) -> None:
    """Write records in the on-disk layout. Refuses a non-empty directory unless force."""
    root = Path(root_path)
    if root.exists() and any(root.iterdir()) and not force:
        raise FileExistsError(f"output directory {root} is not empty (use force to overwrite)")
    (root / FEAT_DIR).mkdir(parents=True, exist_ok=True)
    (root / CURVE_DIR).mkdir(parents=True, exist_ok=True)

    index = {"videos": [{"id": r.video_id, "t": r.features.t} for r in records]}
    (root / INDEX_NAME).write_text(json.dumps(index, indent=1))
    for r in records:
        blob = np.ascontiguousarray(r.features.features, dtype=_F32).tobytes()
        (root / FEAT_DIR / f"{r.video_id}.f32").write_bytes(blob)
        payload = {"scores": [float(s) for s in r.ground_truth.scores]}
        (root / CURVE_DIR / f"{r.video_id}.json").write_text(json.dumps(payload))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _moving_average(values: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average; shrinks the window near the edges."""
    if window <= 1:
        return values
    n = values.shape[0]
    half_lo = (window - 1) // 2
    half_hi = window // 2
    csum = np.concatenate([[0.0], np.cumsum(values)])
    lo = np.clip(np.arange(n) - half_lo, 0, n)
    hi = np.clip(np.arange(n) + half_hi + 1, 0, n)
    return (csum[hi] - csum[lo]) / (hi - lo)


def generate_synthetic(
    n_videos: int, t_range: tuple[int, int], law: SyntheticLaw
) -> list[DatasetRecord]:
    """Generate seeded records whose curves follow the law's linear readout.

    Deterministic for a fixed law: all draws come from one stream seeded by
    law.seed, consumed in a fixed order.
    """
    if n_videos < 1:
        raise ValueError("n_videos must be >= 1")
    t_min, t_max = int(t_range[0]), int(t_range[1])
    if t_min < 10 or t_max < t_min:
        raise ValueError(f"invalid t_range {t_range}: need 10 <= t_min <= t_max")

    rng = np.random.default_rng(np.random.SeedSequence(law.seed))
    records = []
    for v in range(n_videos):
        t = int(rng.integers(t_min, t_max + 1))
        feats = rng.standard_normal((t, FEATURE_DIM))
        raw = _sigmoid(feats @ law.weight)
        if law.noise_std > 0:
            raw = raw + rng.normal(0.0, law.noise_std, size=t)
        raw = _moving_average(raw, law.smoothing_window)

        if t >= CURVE_LEN:
            curve, _ = bin_matrix_rows(raw[:, None], CURVE_LEN)
            curve = curve[:, 0]
        else:
            curve = interpolate_scores(raw, CURVE_LEN)

        lo, hi = curve.min(), curve.max()
        meta = {}
        if hi - lo <= 0:
            curve = np.full(CURVE_LEN, 0.5)
            meta["degenerate_curve"] = True
        else:
            curve = (curve - lo) / (hi - lo)

        records.append(
            DatasetRecord(
                features=FeatureSequence(
                    video_id=f"synth-{law.seed}-{v:04d}",
                    features=feats.astype(_F32),
                ),
                ground_truth=ReplayCurve(curve),
                meta=meta,
            )
        )
    return records
