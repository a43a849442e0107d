"""HTTP service that runs study sessions for the browser UI.

State is kept in memory and persisted as an append-only JSON-lines event
log per study, plus a compacted snapshot written whenever a session
finishes. On startup the store replays the snapshot and any trailing
events, so a restart lands exactly on the persisted step cursors.

Session randomness derives from (study seed, session counter), which makes
whole studies reproducible.
"""
from __future__ import annotations

import json
import re
import threading
import uuid
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .metrics import UndefinedAlphaError, krippendorff_alpha, precision_at_k, ranking_from_scores
from .resample import bin_curve
from .study import (
    CONTROL,
    N_SHOTS,
    ComparisonSchedule,
    ControlCheckFailedError,
    SessionAnswers,
    mergesort_schedule,
    permute_schedule,
    reconstruct_ranking,
)
from .types import CURVE_LEN, ReplayCurve

TOTAL_STEPS = 20
DEFAULT_INTRO = (
    "YouTube's Most Replayed chart shows which moments of a video viewers "
    "replay the most. You will watch a sped-up version of one video, then "
    "answer 20 quick questions comparing two of its clips at a time."
)
DEFAULT_PROMPT = "Guess which of the two video shots has greater 'Most replayed' score."

_ID_RE = re.compile(r"^[A-Za-z0-9_-]{1,64}$")


@dataclass
class ServiceConfig:
    data_dir: Path
    clips_dir: Optional[Path] = None
    ui_dir: Optional[Path] = None
    intro_text: str = DEFAULT_INTRO
    prompt_text: str = DEFAULT_PROMPT
    default_seed: int = 0


class ClipManifest(BaseModel):
    shot_clips: list[str]
    full_video_url: str
    control_clip_url: str


class StudyDefinition(BaseModel):
    study_id: str
    video_id: str
    clip_manifest: ClipManifest
    required_sessions: int = Field(default=10, ge=1)
    seed: int = 0
    gt_scores: Optional[list[float]] = None


class SessionCreate(BaseModel):
    user_id: str = "anonymous"


class AnswerBody(BaseModel):
    choice: Literal["left", "right", "control"]


@dataclass
class SessionState:
    session_id: str
    user_id: str
    counter: int
    permutation: list[int]
    pairs: list[list[int]]
    control_position: int
    answers: list[str] = dc_field(default_factory=list)
    status: str = "in_progress"  # in_progress | accepted | rejected_control
    ranking: Optional[list[int]] = None
    had_cycles: Optional[bool] = None
    cycle_groups: Optional[list[list[int]]] = None

    @property
    def cursor(self) -> int:
        return len(self.answers)

    def schedule(self) -> ComparisonSchedule:
        return ComparisonSchedule(
            [tuple(p) for p in self.pairs], self.control_position, N_SHOTS
        )


@dataclass
class StudyState:
    definition: dict
    warnings: list[str]
    sessions: dict[str, SessionState] = dc_field(default_factory=dict)
    session_counter: int = 0

    def accepted(self) -> list[SessionState]:
        return [s for s in self.sessions.values() if s.status == "accepted"]

    def rejected(self) -> list[SessionState]:
        return [s for s in self.sessions.values() if s.status == "rejected_control"]


def _check_manifest(manifest: ClipManifest) -> list[str]:
    warnings = []
    for url in [*manifest.shot_clips, manifest.full_video_url, manifest.control_clip_url]:
        if not (url.startswith(("http://", "https://", "/")) or url.startswith("clips/")):
            warnings.append(f"clip URL may not be resolvable: {url!r}")
    return warnings


class StudyStore:
    """Event-sourced store: JSON-lines log + compacted snapshot per study."""

    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.lock = threading.RLock()
        self.studies: dict[str, StudyState] = {}
        self.session_index: dict[str, str] = {}  # session_id -> study_id
        self._seq: dict[str, int] = {}
        self._load_all()

    # -- persistence ------------------------------------------------------

    def _study_dir(self, study_id: str) -> Path:
        return self.data_dir / study_id

    def _load_all(self) -> None:
        for study_dir in sorted(self.data_dir.iterdir()) if self.data_dir.exists() else []:
            if study_dir.is_dir() and (study_dir / "log.jsonl").exists():
                self._load_study(study_dir.name)

    def _load_study(self, study_id: str) -> None:
        study_dir = self._study_dir(study_id)
        snap_path = study_dir / "snapshot.json"
        last_seq = 0
        if snap_path.exists():
            snap = json.loads(snap_path.read_text())
            last_seq = snap["last_seq"]
            self._restore_snapshot(study_id, snap["state"])
        with open(study_dir / "log.jsonl") as fh:
            for line in fh:
                event = json.loads(line)
                self._seq[study_id] = event["seq"]
                if event["seq"] > last_seq:
                    self._apply(study_id, event)

    def _restore_snapshot(self, study_id: str, state: dict) -> None:
        study = StudyState(
            definition=state["definition"],
            warnings=state["warnings"],
            session_counter=state["session_counter"],
        )
        for sid, s in state["sessions"].items():
            study.sessions[sid] = SessionState(**s)
            self.session_index[sid] = study_id
        self.studies[study_id] = study

    def _snapshot(self, study_id: str) -> None:
        study = self.studies[study_id]
        state = {
            "definition": study.definition,
            "warnings": study.warnings,
            "session_counter": study.session_counter,
            "sessions": {sid: vars(s).copy() for sid, s in study.sessions.items()},
        }
        # vars() exposes the cached property-free dataclass fields only
        payload = {"last_seq": self._seq.get(study_id, 0), "state": state}
        tmp = self._study_dir(study_id) / "snapshot.json.tmp"
        tmp.write_text(json.dumps(payload))
        tmp.replace(self._study_dir(study_id) / "snapshot.json")

    def _append(self, study_id: str, event: dict) -> None:
        seq = self._seq.get(study_id, 0) + 1
        self._seq[study_id] = seq
        event = {"seq": seq, **event}
        path = self._study_dir(study_id) / "log.jsonl"
        with open(path, "a") as fh:
            fh.write(json.dumps(event) + "\n")
            fh.flush()
        self._apply(study_id, event)

    # -- event application --------------------------------------------------

    def _apply(self, study_id: str, event: dict) -> None:
        kind = event["type"]
        if kind == "study_registered":
            self.studies[study_id] = StudyState(
                definition=event["definition"], warnings=event["warnings"]
            )
        elif kind == "session_created":
            study = self.studies[study_id]
            session = SessionState(
                session_id=event["session_id"],
                user_id=event["user_id"],
                counter=event["counter"],
                permutation=event["permutation"],
                pairs=event["pairs"],
                control_position=event["control_position"],
            )
            study.sessions[session.session_id] = session
            study.session_counter = max(study.session_counter, event["counter"] + 1)
            self.session_index[session.session_id] = study_id
        elif kind == "answer":
            session = self.studies[study_id].sessions[event["session_id"]]
            session.answers.append(event["choice"])
        elif kind == "session_completed":
            session = self.studies[study_id].sessions[event["session_id"]]
            session.status = event["status"]
            session.ranking = event.get("ranking")
            session.had_cycles = event.get("had_cycles")
            session.cycle_groups = event.get("cycle_groups")

    # -- operations ---------------------------------------------------------

    def register_study(self, definition: StudyDefinition) -> list[str]:
        with self.lock:
            if definition.study_id in self.studies:
                raise HTTPException(409, f"study '{definition.study_id}' already exists")
            warnings = _check_manifest(definition.clip_manifest)
            self._study_dir(definition.study_id).mkdir(parents=True, exist_ok=True)
            self._append(
                definition.study_id,
                {
                    "type": "study_registered",
                    "definition": definition.model_dump(),
                    "warnings": warnings,
                },
            )
            return warnings

    def create_session(self, study_id: str, user_id: str, default_seed: int) -> SessionState:
        with self.lock:
            study = self._get_study(study_id)
            if len(study.accepted()) >= study.definition["required_sessions"]:
                raise HTTPException(410, f"study '{study_id}' has collected all required sessions")
            counter = study.session_counter
            seed_seq = np.random.SeedSequence(
                [int(study.definition.get("seed", default_seed)), counter]
            )
            seed = int(seed_seq.generate_state(1, dtype=np.uint32)[0])
            schedule, pi = permute_schedule(mergesort_schedule(N_SHOTS), seed=seed)
            session_id = uuid.uuid4().hex
            self._append(
                study_id,
                {
                    "type": "session_created",
                    "session_id": session_id,
                    "user_id": user_id,
                    "counter": counter,
                    "permutation": [int(x) for x in pi],
                    "pairs": [[int(a), int(b)] for a, b in schedule.pairs],
                    "control_position": schedule.control_position,
                },
            )
            return study.sessions[session_id]

    def record_answer(self, session_id: str, step: int, choice: str) -> SessionState:
        with self.lock:
            study_id, session = self._get_session(session_id)
            if session.status != "in_progress":
                raise HTTPException(409, "session already completed")
            if step >= TOTAL_STEPS:
                raise HTTPException(422, f"step {step} out of range [0, {TOTAL_STEPS})")
            if step != session.cursor:
                raise HTTPException(
                    409,
                    f"step {step} cannot be answered now (current step is {session.cursor})",
                )
            self._append(
                study_id, {"type": "answer", "session_id": session_id, "step": step, "choice": choice}
            )
            return session

    def complete_session(self, session_id: str) -> SessionState:
        with self.lock:
            study_id, session = self._get_session(session_id)
            if session.status != "in_progress":
                return session  # idempotent: completed sessions are immutable
            if session.cursor < TOTAL_STEPS:
                raise HTTPException(
                    409, f"only {session.cursor}/{TOTAL_STEPS} steps answered"
                )
            answers = SessionAnswers(
                session_id=session.session_id,
                user_id=session.user_id,
                video_id=self.studies[study_id].definition["video_id"],
                permutation=np.asarray(session.permutation),
                answers=list(session.answers),
            )
            schedule = session.schedule()
            event: dict = {"type": "session_completed", "session_id": session_id}
            try:
                recon = reconstruct_ranking(answers, schedule)
                event.update(
                    status="accepted",
                    ranking=[int(x) for x in recon.ranking.order],
                    had_cycles=recon.had_cycles,
                    cycle_groups=[sorted(g) for g in recon.cycle_groups],
                )
            except ControlCheckFailedError:
                event.update(status="rejected_control")
            self._append(study_id, event)
            self._snapshot(study_id)
            return session

    # -- lookups ------------------------------------------------------------

    def _get_study(self, study_id: str) -> StudyState:
        if study_id not in self.studies:
            raise HTTPException(404, f"unknown study '{study_id}'")
        return self.studies[study_id]

    def _get_session(self, session_id: str) -> tuple[str, SessionState]:
        study_id = self.session_index.get(session_id)
        if study_id is None:
            raise HTTPException(404, f"unknown session '{session_id}'")
        return study_id, self.studies[study_id].sessions[session_id]


def create_app(config: ServiceConfig) -> FastAPI:
    app = FastAPI(title="replayrank study service")
    store = StudyStore(config.data_dir)
    app.state.store = store
    app.state.config = config

    @app.exception_handler(HTTPException)
    async def _error_body(request, exc: HTTPException):
        return JSONResponse(
            status_code=exc.status_code,
            content={"code": exc.status_code, "message": str(exc.detail)},
        )

    @app.post("/studies", status_code=201)
    def register_study(definition: StudyDefinition):
        if not _ID_RE.match(definition.study_id):
            raise HTTPException(422, "study_id must match [A-Za-z0-9_-]{1,64}")
        if len(definition.clip_manifest.shot_clips) != N_SHOTS:
            raise HTTPException(
                422,
                f"clip_manifest must contain exactly {N_SHOTS} shot clips, "
                f"got {len(definition.clip_manifest.shot_clips)}",
            )
        if definition.gt_scores is not None:
            if len(definition.gt_scores) != CURVE_LEN:
                raise HTTPException(422, f"gt_scores must have length {CURVE_LEN}")
            if any(not 0.0 <= s <= 1.0 for s in definition.gt_scores):
                raise HTTPException(422, "gt_scores must lie in [0, 1]")
        warnings = store.register_study(definition)
        return {"study_id": definition.study_id, "manifest_warnings": warnings}

    @app.post("/studies/{study_id}/sessions", status_code=201)
    def create_session(study_id: str, body: SessionCreate | None = None):
        user_id = body.user_id if body else "anonymous"
        session = store.create_session(study_id, user_id, config.default_seed)
        study = store.studies[study_id]
        return {
            "session_id": session.session_id,
            "intro_text": config.intro_text,
            "full_video_url": study.definition["clip_manifest"]["full_video_url"],
            "total_steps": TOTAL_STEPS,
        }

    @app.get("/sessions/{session_id}")
    def session_status(session_id: str):
        _, session = store._get_session(session_id)
        return {
            "session_id": session_id,
            "cursor": session.cursor,
            "total_steps": TOTAL_STEPS,
            "status": session.status,
        }

    @app.get("/sessions/{session_id}/steps/{k}")
    def get_step(session_id: str, k: int):
        study_id, session = store._get_session(session_id)
        if not 0 <= k < TOTAL_STEPS:
            raise HTTPException(422, f"step {k} out of range [0, {TOTAL_STEPS})")
        if k > session.cursor:
            raise HTTPException(
                409, f"cannot skip ahead: step {k} requested, current step is {session.cursor}"
            )
        manifest = store.studies[study_id].definition["clip_manifest"]
        pair = session.schedule().step_pair(k)
        if pair is None:
            left = right = manifest["control_clip_url"]
        else:
            left = manifest["shot_clips"][pair[0]]
            right = manifest["shot_clips"][pair[1]]
        return {
            "step": k,
            "total_steps": TOTAL_STEPS,
            "left_clip_url": left,
            "right_clip_url": right,
            "prompt": config.prompt_text,
        }

    @app.post("/sessions/{session_id}/steps/{k}/answer")
    def post_answer(session_id: str, k: int, body: AnswerBody):
        session = store.record_answer(session_id, k, body.choice)
        return {"accepted": True, "next_step": session.cursor if session.cursor < TOTAL_STEPS else None}

    @app.post("/sessions/{session_id}/complete")
    def complete(session_id: str):
        session = store.complete_session(session_id)
        return {
            "status": session.status,
            "ranking": session.ranking,
            "had_cycles": session.had_cycles,
        }

    @app.get("/studies/{study_id}/results")
    def results(study_id: str, allow_empty: bool = False):
        study = store._get_study(study_id)
        accepted = study.accepted()
        if not accepted and not allow_empty:
            raise HTTPException(409, "no accepted sessions yet (pass allow_empty=true to override)")

        per_user = [
            {
                "session_id": s.session_id,
                "user_id": s.user_id,
                "ranking": s.ranking,
                "had_cycles": s.had_cycles,
            }
            for s in accepted
        ]

        gt_scores = study.definition.get("gt_scores")
        precision = None
        if gt_scores is not None and accepted:
            gt_rank = ranking_from_scores(bin_curve(ReplayCurve(np.asarray(gt_scores)), N_SHOTS).scores)
            precision = {}
            for k in (1, 3, 5):
                vals = [_precision_of_order(s.ranking, gt_rank, k) for s in accepted]
                precision[str(k)] = {
                    "mean": float(np.mean(vals)),
                    "std": float(np.std(vals)),
                }

        alpha = None
        if len(accepted) >= 2:
            ratings = np.full((len(accepted), N_SHOTS), np.nan)
            for row, s in enumerate(accepted):
                for rank_pos, shot in enumerate(s.ranking):
                    ratings[row, shot] = rank_pos
            try:
                alpha = krippendorff_alpha(ratings, metric="ordinal")
            except UndefinedAlphaError:
                alpha = None

        return {
            "study_id": study_id,
            "n_accepted": len(accepted),
            "n_rejected": len(study.rejected()),
            "per_user": per_user,
            "precision": precision,
            "krippendorff_alpha": alpha,
        }

    if config.clips_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/clips", StaticFiles(directory=config.clips_dir), name="clips")
    if config.ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=config.ui_dir, html=True), name="ui")

    return app


def _precision_of_order(order: list[int], gt_rank, k: int) -> float:
    from .metrics import Ranking

    return precision_at_k(Ranking(np.asarray(order)), gt_rank, k)
