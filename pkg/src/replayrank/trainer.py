"""Full training protocol: per-video batches, 5-fold CV, windowed metrics.

Two data paths per video, mirroring the two length-alignment setups:

* interpolate_gt (case 1): the model consumes all T feature rows and the
  100-point ground truth is interpolated up to length T; comparison pairs
  are re-sampled from the T*T sign matrix every epoch (capped at
  max_pairs so every video contributes equally).
* bin_features (case 2): the features are averaged into target_len rows
  (100, or 10 for the shot-level setup) and the targets come from the raw
  or 10-binned ground truth. All non-tied pairs fit the cap, so targets
  are built once.

Each batch is one entire video: forward, margin ranking loss, backward,
one Adam step. Test precision@K is evaluated in eval mode over the last
`eval_window` epochs and averaged; no best-epoch selection.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import config_hash
from .metrics import precision_at_k, ranking_from_scores
from .models import MODEL_KINDS, ModelConfig, forward_node, init_params, predict
from .optim import AdamState, adam_step
from .rankloss import build_targets, margin_rank_loss
from .resample import bin_curve, bin_matrix_rows, interpolate_scores
from .types import CURVE_LEN, DatasetRecord

CASES = ("interpolate_gt", "bin_features")


@dataclass
class TrainConfig:
    model: str = "pglsum"
    case: str = "bin_features"
    target_len: int = 100          # bins for bin_features; ignored for interpolate_gt
    margin: float | None = None    # default: 0.05 when target_len == 10, else 0.01
    epochs: int = 300
    eval_window: int = 50
    folds: int = 5
    split_ratio: float = 0.8
    seed: int = 0
    max_pairs: int = 10000
    lr: float = 5e-5
    l2: float = 1e-5
    k_values: tuple[int, ...] | None = None
    eval_every_epoch: bool = False  # debug: evaluate before the window too

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model '{self.model}'")
        if self.case not in CASES:
            raise ValueError(f"unknown case '{self.case}'")
        if self.case == "bin_features" and self.target_len not in (100, 10):
            raise ValueError("bin_features expects target_len 100 or 10")
        if self.eval_window > self.epochs:
            raise ValueError("eval_window cannot exceed epochs")
        if not 0 < self.split_ratio < 1:
            raise ValueError("split_ratio must be in (0, 1)")

    @property
    def effective_margin(self) -> float:
        if self.margin is not None:
            return self.margin
        return 0.05 if (self.case == "bin_features" and self.target_len == 10) else 0.01

    @property
    def ks(self) -> tuple[int, ...]:
        if self.k_values is not None:
            return tuple(self.k_values)
        return (1, 3, 5) if (self.case == "bin_features" and self.target_len == 10) else (15, 30, 50)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "case": self.case,
            "target_len": self.target_len,
            "margin": self.effective_margin,
            "epochs": self.epochs,
            "eval_window": self.eval_window,
            "folds": self.folds,
            "split_ratio": self.split_ratio,
            "seed": self.seed,
            "max_pairs": self.max_pairs,
            "lr": self.lr,
            "l2": self.l2,
            "k_values": list(self.ks),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        kwargs = {k: v for k, v in d.items() if k in known}
        if "k_values" in kwargs and kwargs["k_values"] is not None:
            kwargs["k_values"] = tuple(kwargs["k_values"])
        return cls(**kwargs)


@dataclass
class FoldReport:
    fold: int
    seed: int
    config_hash: str
    config: dict
    test_ids: list[str]
    eval_epochs: list[int]
    precision: dict[int, list[float]]          # K -> per-evaluated-epoch means
    window_average: dict[int, float]           # K -> mean over the eval window
    train_loss: list[float]                    # per-epoch mean over videos
    skipped_degenerate: int = 0

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "config": self.config,
            "test_ids": self.test_ids,
            "eval_epochs": self.eval_epochs,
            "precision": {str(k): v for k, v in self.precision.items()},
            "window_average": {str(k): v for k, v in self.window_average.items()},
            "train_loss": self.train_loss,
            "skipped_degenerate": self.skipped_degenerate,
        }


def make_folds(
    n_records: int, folds: int = 5, seed: int = 0
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded shuffle, then `folds` disjoint test blocks covering every record."""
    if n_records < folds:
        raise ValueError(f"need at least {folds} records, got {n_records}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xF01D]))
    shuffled = rng.permutation(n_records)
    edges = (np.arange(folds + 1) * n_records) // folds
    out = []
    for f in range(folds):
        test = shuffled[edges[f] : edges[f + 1]]
        train = np.concatenate([shuffled[: edges[f]], shuffled[edges[f + 1] :]])
        out.append((np.sort(train), np.sort(test)))
    return out


def _prepare_video(cfg: TrainConfig, record: DatasetRecord) -> dict:
    """Model input, target scores and (for case 2) fixed comparison targets."""
    if cfg.case == "bin_features":
        x, _ = bin_matrix_rows(record.features.features.astype(np.float64), cfg.target_len)
        gt = (
            record.ground_truth.scores
            if cfg.target_len == CURVE_LEN
            else bin_curve(record.ground_truth, cfg.target_len).scores
        )
        return {"x": x, "gt": gt, "resample_pred": False}
    t = record.features.t
    x = record.features.features.astype(np.float64)
    gt = interpolate_scores(record.ground_truth.scores, t)
    return {"x": x, "gt": gt, "resample_pred": t != CURVE_LEN}


def _eval_precision(
    cfg: TrainConfig, mcfg: ModelConfig, params: dict, test_videos: list[dict], gts: list[np.ndarray]
) -> dict[int, float]:
    """Mean test precision@K; predictions resampled to 100 when T != 100."""
    sums = {k: 0.0 for k in cfg.ks}
    for video, gt100 in zip(test_videos, gts):
        pred = predict(mcfg, params, video["x"])
        if video["resample_pred"]:
            pred = interpolate_scores(pred, CURVE_LEN)
        pred_rank = ranking_from_scores(pred)
        gt_rank = ranking_from_scores(gt100)
        for k in cfg.ks:
            sums[k] += precision_at_k(pred_rank, gt_rank, k)
    n = len(test_videos)
    return {k: s / n for k, s in sums.items()}


def train_fold(
    cfg: TrainConfig,
    records: list[DatasetRecord],
    fold: int,
    train_idx: np.ndarray,
    test_idx: np.ndarray,
) -> tuple[FoldReport, dict[str, np.ndarray]]:
    """Train one fold to completion; returns the report and final parameters."""
    fold_seed = int(
        np.random.SeedSequence([cfg.seed, fold, 0x7A1]).generate_state(1, dtype=np.uint32)[0]
    )
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, fold, 0x7A1]))
    mcfg = ModelConfig(kind=cfg.model)
    params = init_params(mcfg, rng)
    state = AdamState(lr=cfg.lr, l2=cfg.l2)
    margin = cfg.effective_margin

    train_videos = [_prepare_video(cfg, records[i]) for i in train_idx]
    test_videos = [_prepare_video(cfg, records[i]) for i in test_idx]
    # evaluation always compares rankings on the ground truth's own grid:
    # the raw 100 points, or the 10-bin means for the shot-level setup
    if cfg.case == "bin_features" and cfg.target_len == 10:
        test_gts = [bin_curve(records[i].ground_truth, 10).scores for i in test_idx]
    else:
        test_gts = [records[i].ground_truth.scores for i in test_idx]

    fixed_targets = []
    skipped = 0
    if cfg.case == "bin_features":
        for pos, video in enumerate(train_videos):
            t = build_targets(video["gt"], cfg.max_pairs, seed=fold_seed + pos)
            fixed_targets.append(t)
            skipped += int(t.degenerate)

    eval_start = cfg.epochs - cfg.eval_window
    eval_epochs: list[int] = []
    precision: dict[int, list[float]] = {k: [] for k in cfg.ks}
    train_loss: list[float] = []

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_videos))
        losses = []
        for pos in order:
            video = train_videos[pos]
            if cfg.case == "bin_features":
                targets = fixed_targets[pos]
            else:
                sample_seed = int(
                    np.random.SeedSequence([cfg.seed, fold, epoch, int(pos)]).generate_state(
                        1, dtype=np.uint32
                    )[0]
                )
                targets = build_targets(video["gt"], cfg.max_pairs, seed=sample_seed)
            if targets.degenerate:
                continue
            out, _ = forward_node(mcfg, params, video["x"], train=True, rng=rng)
            loss, grad = margin_rank_loss(out.value[:, 0], targets, margin)
            losses.append(loss)
            loss_node = ad.attach_objective(out, loss, grad[:, None])
            grads = ad.backward(loss_node)
            adam_step(params, grads, state)
        train_loss.append(float(np.mean(losses)) if losses else 0.0)

        if epoch >= eval_start or cfg.eval_every_epoch:
            epoch_prec = _eval_precision(cfg, mcfg, params, test_videos, test_gts)
            eval_epochs.append(epoch)
            for k in cfg.ks:
                precision[k].append(epoch_prec[k])

    window = {
        k: float(np.mean([v for e, v in zip(eval_epochs, vals) if e >= eval_start]))
        for k, vals in precision.items()
    }
    report = FoldReport(
        fold=fold,
        seed=fold_seed,
        config_hash=config_hash(cfg.to_dict()),
        config=cfg.to_dict(),
        test_ids=[records[i].video_id for i in test_idx],
        eval_epochs=eval_epochs,
        precision=precision,
        window_average=window,
        train_loss=train_loss,
        skipped_degenerate=skipped,
    )
    return report, params


def _fold_worker(args):
    cfg_dict, records, fold, train_idx, test_idx = args
    report, params = train_fold(TrainConfig.from_dict(cfg_dict), records, fold, train_idx, test_idx)
    return report, params


def train_one(
    cfg: TrainConfig, records: list[DatasetRecord], jobs: int = 1
) -> list[tuple[FoldReport, dict[str, np.ndarray]]]:
    """Run every fold of the cross-validation; folds are independent."""
    folds = make_folds(len(records), cfg.folds, cfg.seed)
    tasks = [(cfg.to_dict(), records, f, tr, te) for f, (tr, te) in enumerate(folds)]
    if jobs <= 1:
        return [_fold_worker(t) for t in tasks]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_fold_worker, tasks))


def summarize_reports(reports: list[FoldReport]) -> dict:
    """Cross-fold mean ± sd of the window-averaged precision@K."""
    ks = sorted(reports[0].window_average)
    out = {}
    for k in ks:
        vals = np.array([r.window_average[k] for r in reports])
        out[k] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out


def write_reports(reports: list[FoldReport], out_dir: str | Path, run_name: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for r in reports:
        path = out / f"{run_name}_fold{r.fold}.json"
        path.write_text(json.dumps(r.to_dict(), indent=1))
