"""Command-line surface: dataset generation, training, evaluation, study tools.

Every command is deterministic given its seed flags. Outputs are JSON
(machine-readable) plus a human-readable table where it helps. Config
files are TOML; REPLAYRANK_* environment variables override the service
paths. Exit codes: 0 success, 2 usage error, 1 runtime error.
"""
from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from . import checkpoint as ckpt
from . import data as dataio
from . import metrics, study, trainer
from .models import ModelConfig, predict
from .resample import bin_curve
from .types import CURVE_LEN, DatasetError, ReplayCurve, SyntheticLaw


class RuntimeFailure(click.ClickException):
    exit_code = 1


def _load_toml(path: str) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


@click.group()
def main():
    """Most Replayed prediction: training, evaluation and study tooling."""


@main.command("gen-synth")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--videos", required=True, type=int)
@click.option("--t-min", default=100, show_default=True, type=int)
@click.option("--t-max", default=300, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--noise", default=0.05, show_default=True, type=float)
@click.option("--smoothing", default=5, show_default=True, type=int)
@click.option("--force", is_flag=True, help="overwrite a non-empty output directory")
def gen_synth(out_dir, videos, t_min, t_max, seed, noise, smoothing, force):
    """Generate a synthetic dataset with a known feature-to-score law."""
    if videos < 1:
        raise click.UsageError("--videos must be >= 1")
    if t_min < 10 or t_max < t_min:
        raise click.UsageError("need 10 <= t-min <= t-max")
    law = SyntheticLaw.from_seed(seed, noise_std=noise, smoothing_window=smoothing)
    records = dataio.generate_synthetic(videos, (t_min, t_max), law)
    try:
        dataio.write_dataset(records, out_dir, force=force)
    except FileExistsError as exc:
        raise RuntimeFailure(str(exc))
    click.echo(json.dumps({"written": len(records), "out": str(out_dir)}))


@main.command("train")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--jobs", default=1, show_default=True, type=int)
def train_cmd(data_dir, config_path, out_dir, jobs):
    """Train one or more configs; emits fold reports, checkpoints, summary."""
    raw = _load_toml(config_path)
    run_dicts = raw.get("runs")
    if run_dicts is None:
        run_dicts = [raw.get("train", raw)]
    try:
        records = dataio.load_dataset(data_dir)
    except DatasetError as exc:
        raise RuntimeFailure(str(exc))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary_rows = []
    for run in run_dicts:
        cfg = trainer.TrainConfig.from_dict(run)
        run_name = f"{cfg.model}_{cfg.case}_{cfg.target_len}"
        results = trainer.train_one(cfg, records, jobs=jobs)
        reports = [r for r, _ in results]
        trainer.write_reports(reports, out, run_name)
        for report, params in results:
            ckpt.save_checkpoint(
                out / f"{run_name}_fold{report.fold}.ckpt",
                params,
                config=cfg.to_dict(),
                extra={"fold": report.fold, "window_average": report.window_average},
            )
        stats = trainer.summarize_reports(reports)
        summary_rows.append(
            {
                "model": cfg.model,
                "case": cfg.case,
                "target_len": cfg.target_len,
                "precision": {str(k): v for k, v in stats.items()},
            }
        )

    (out / "summary.json").write_text(json.dumps(summary_rows, indent=1))
    ks = sorted(int(k) for k in summary_rows[0]["precision"])
    header = f"{'model':<22}{'case':<16}" + "".join(f"prec@{k:<11}" for k in ks)
    click.echo(header)
    for row in summary_rows:
        cells = "".join(
            f"{100*row['precision'][str(k)]['mean']:5.1f} ± {100*row['precision'][str(k)]['std']:<7.1f}"
            for k in ks
        )
        click.echo(f"{row['model']:<22}{row['case']:<16}{cells}")


@main.command("eval")
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--k", "k_spec", default="15,30,50", show_default=True)
@click.option("--out", "out_path", default=None, type=click.Path())
def eval_cmd(ckpt_path, data_dir, k_spec, out_path):
    """Evaluate a checkpoint over a dataset directory."""
    try:
        tensors, manifest = ckpt.load_checkpoint(ckpt_path)
    except ckpt.CheckpointError as exc:
        raise RuntimeFailure(str(exc))
    cfg = trainer.TrainConfig.from_dict(manifest["config"])
    params = {k: v for k, v in tensors.items() if not k.startswith("optim.")}
    ks = tuple(int(x) for x in k_spec.split(","))
    max_k = CURVE_LEN if not (cfg.case == "bin_features" and cfg.target_len == 10) else 10
    if any(not 1 <= k <= max_k for k in ks):
        raise click.UsageError(f"k values must lie in [1, {max_k}] for this checkpoint")

    try:
        records = dataio.load_dataset(data_dir)
    except DatasetError as exc:
        raise RuntimeFailure(str(exc))
    mcfg = ModelConfig(kind=cfg.model)
    per_video = {}
    sums = {k: 0.0 for k in ks}
    from .resample import bin_matrix_rows, interpolate_scores

    for rec in records:
        if cfg.case == "bin_features":
            x, _ = bin_matrix_rows(rec.features.features.astype(np.float64), cfg.target_len)
            gt = (
                rec.ground_truth.scores
                if cfg.target_len == CURVE_LEN
                else bin_curve(rec.ground_truth, cfg.target_len).scores
            )
            pred = predict(mcfg, params, x)
        else:
            pred = predict(mcfg, params, rec.features.features.astype(np.float64))
            if pred.shape[0] != CURVE_LEN:
                pred = interpolate_scores(pred, CURVE_LEN)
            gt = rec.ground_truth.scores
        pr = metrics.ranking_from_scores(pred)
        gr = metrics.ranking_from_scores(gt)
        per_video[rec.video_id] = {str(k): metrics.precision_at_k(pr, gr, k) for k in ks}
        for k in ks:
            sums[k] += per_video[rec.video_id][str(k)]

    report = {
        "checkpoint": str(ckpt_path),
        "config_hash": manifest["config_hash"],
        "n_videos": len(records),
        "precision_mean": {str(k): sums[k] / len(records) for k in ks},
        "per_video": per_video,
    }
    text = json.dumps(report, indent=1)
    if out_path:
        Path(out_path).write_text(text)
    click.echo(text)


@main.group("study")
def study_group():
    """User-study tooling: schedules, reconstruction, agreement, simulation."""


@study_group.command("schedule")
@click.option("--n", default=10, show_default=True, type=int)
@click.option("--seed", default=None, type=int, help="also emit a permuted session schedule")
def schedule_cmd(n, seed):
    try:
        base = study.mergesort_schedule(n)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    out = {"n": n, "pairs": [list(p) for p in base], "n_pairs": len(base)}
    if seed is not None:
        sched, pi = study.permute_schedule(base, seed=seed, n_shots=n)
        out["session"] = {
            "permutation": [int(x) for x in pi],
            "pairs": [list(p) for p in sched.pairs],
            "control_position": sched.control_position,
        }
    click.echo(json.dumps(out))


def _session_from_dict(d: dict) -> tuple[study.SessionAnswers, study.ComparisonSchedule]:
    schedule = study.ComparisonSchedule(
        pairs=[tuple(p) for p in d["schedule"]["pairs"]],
        control_position=d["schedule"]["control_position"],
        n_shots=d["schedule"].get("n_shots", study.N_SHOTS),
    )
    answers = study.SessionAnswers(
        session_id=d.get("session_id", "cli"),
        user_id=d.get("user_id", "cli"),
        video_id=d.get("video_id", "cli"),
        permutation=np.asarray(d["permutation"]),
        answers=list(d["answers"]),
    )
    return answers, schedule


def _session_to_dict(answers: study.SessionAnswers, schedule: study.ComparisonSchedule) -> dict:
    return {
        "session_id": answers.session_id,
        "user_id": answers.user_id,
        "video_id": answers.video_id,
        "permutation": [int(x) for x in answers.permutation],
        "answers": list(answers.answers),
        "schedule": {
            "pairs": [list(p) for p in schedule.pairs],
            "control_position": schedule.control_position,
            "n_shots": schedule.n_shots,
        },
    }


@study_group.command("reconstruct")
@click.option("--answers", "answers_path", required=True, type=click.Path(exists=True))
def reconstruct_cmd(answers_path):
    payload = json.loads(Path(answers_path).read_text())
    answers, schedule = _session_from_dict(payload)
    try:
        recon = study.reconstruct_ranking(answers, schedule)
    except study.ControlCheckFailedError as exc:
        raise RuntimeFailure(str(exc))
    click.echo(
        json.dumps(
            {
                "ranking": [int(x) for x in recon.ranking.order],
                "had_cycles": recon.had_cycles,
                "cycle_groups": [sorted(g) for g in recon.cycle_groups],
            }
        )
    )


@study_group.command("alpha")
@click.option("--sessions", "sessions_path", required=True, type=click.Path(exists=True))
def alpha_cmd(sessions_path):
    payload = json.loads(Path(sessions_path).read_text())
    rankings = []
    for d in payload["sessions"]:
        answers, schedule = _session_from_dict(d)
        try:
            recon = study.reconstruct_ranking(answers, schedule)
        except study.ControlCheckFailedError:
            continue
        rankings.append(recon.ranking)
    if len(rankings) < 2:
        raise RuntimeFailure("need at least 2 accepted sessions for alpha")
    n = rankings[0].m
    ratings = np.vstack([r.positions() for r in rankings]).astype(float)
    try:
        alpha = metrics.krippendorff_alpha(ratings, metric="ordinal")
    except metrics.UndefinedAlphaError as exc:
        raise RuntimeFailure(str(exc))
    click.echo(json.dumps({"krippendorff_alpha": alpha, "n_sessions": len(rankings), "n_items": n}))


@study_group.command("simulate")
@click.option("--users", required=True, type=int)
@click.option("--policy", required=True)
@click.option("--gt", "gt_path", default=None, type=click.Path(exists=True),
              help="mr/<id>.json curve; omitted: a seeded random curve is used")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_path", default=None, type=click.Path())
def simulate_cmd(users, policy, gt_path, seed, out_path):
    """Fabricate study sessions under a policy (random | gt | noisy:p)."""
    if users < 1:
        raise click.UsageError("--users must be >= 1")
    flip = None
    if policy == "random":
        pass
    elif policy == "gt":
        flip = 0.0
    elif policy.startswith("noisy:"):
        flip = float(policy.split(":", 1)[1])
        if not 0 <= flip <= 1:
            raise click.UsageError("noise probability must be in [0, 1]")
    else:
        raise click.UsageError(f"unknown policy '{policy}'")

    if gt_path is not None:
        curve = ReplayCurve(np.asarray(json.loads(Path(gt_path).read_text())["scores"]))
    else:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD1CE]))
        curve = ReplayCurve(rng.random(CURVE_LEN))
    shot_scores = bin_curve(curve, study.N_SHOTS).scores

    sessions = []
    for u in range(users):
        if policy == "random":
            sess, sched = study.random_session(seed=seed * 1_000_003 + u, user_id=f"user{u}")
        else:
            sess, sched = study.consistent_session(
                shot_scores, seed=seed * 1_000_003 + u, user_id=f"user{u}", flip_probability=flip
            )
        sessions.append((sess, sched))

    report = study.evaluate_users(sessions, curve)
    out = {
        "policy": policy,
        "users": users,
        "precision": {str(k): v for k, v in report["summary"].items()},
        "sessions": [_session_to_dict(a, s) for a, s in sessions],
    }
    text = json.dumps(out)
    if out_path:
        Path(out_path).write_text(text)
        click.echo(json.dumps({"written": users, "out": out_path,
                               "precision": out["precision"]}))
    else:
        click.echo(text)


@main.command("serve-study")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
def serve_study(config_path, port, host):
    """Run the study HTTP service until interrupted."""
    from .service import ServiceConfig, create_app

    raw = _load_toml(config_path).get("service", {}) if config_path else {}
    data_dir = os.environ.get("REPLAYRANK_DATA_DIR", raw.get("data_dir", "./study-data"))
    clips_dir = os.environ.get("REPLAYRANK_CLIPS_DIR", raw.get("clips_dir"))
    ui_dir = os.environ.get("REPLAYRANK_UI_DIR", raw.get("ui_dir"))
    cfg = ServiceConfig(
        data_dir=Path(data_dir),
        clips_dir=Path(clips_dir) if clips_dir else None,
        ui_dir=Path(ui_dir) if ui_dir else None,
        intro_text=raw.get("intro_text", None) or ServiceConfig.__dataclass_fields__["intro_text"].default,
        prompt_text=raw.get("prompt_text", None) or ServiceConfig.__dataclass_fields__["prompt_text"].default,
        default_seed=int(raw.get("seed", 0)),
    )
    import uvicorn

    uvicorn.run(create_app(cfg), host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
