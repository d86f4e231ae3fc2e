"""HTTP service exposing the memory engine.

JSON request/response bodies mirror the domain types. A static chat UI
can be mounted under /ui when a built frontend directory is supplied.
"""

from __future__ import annotations

import datetime as dt
from pathlib import Path

from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .engine import ChatResult, HitDetail, MemoryBankEngine
from .errors import (
    AdapterUnavailableError,
    AlreadyForgottenError,
    ClockBeforeLastRecallError,
    DocumentNotFoundError,
    EmptyDayError,
    EmptyInputError,
    EmptyTextError,
    InvalidPolicyError,
    MemoryBankError,
    NonMonotonicTimestampError,
    UnknownUserError,
)
from .forgetting import retention

_STATUS_BY_ERROR = (
    (UnknownUserError, 404),
    (DocumentNotFoundError, 404),
    (NonMonotonicTimestampError, 409),
    (ClockBeforeLastRecallError, 409),
    (AlreadyForgottenError, 409),
    (EmptyTextError, 422),
    (EmptyDayError, 422),
    (EmptyInputError, 422),
    (InvalidPolicyError, 400),
    (AdapterUnavailableError, 502),
)


class TurnIn(BaseModel):
    user_text: str
    ai_text: str = ""
    at: dt.datetime | None = None


class ChatIn(BaseModel):
    message: str
    at: dt.datetime | None = None


class SweepIn(BaseModel):
    user_id: str | None = None
    now: dt.datetime | None = None


class ConsolidateIn(BaseModel):
    day: dt.date | None = Field(default=None, description="single day; omit for all days")


def _hit_payload(detail: HitDetail) -> dict:
    return {
        "piece_id": detail.piece_id,
        "rank": detail.rank,
        "score": detail.score,
        "text": detail.text,
        "kind": detail.kind,
        "at": detail.at.isoformat(),
        "source_day": detail.source_day.isoformat(),
        "strength": detail.strength,
        "retention": detail.retention,
    }


def _chat_payload(result: ChatResult) -> dict:
    return {
        "reply": result.reply,
        "used_memory": [_hit_payload(d) for d in result.details],
        "portrait": result.portrait,
    }


def create_app(engine: MemoryBankEngine, ui_dir: Path | str | None = None) -> FastAPI:
    app = FastAPI(title="memorybank-engine", version="0.1.0")

    @app.exception_handler(MemoryBankError)
    async def _domain_error(_: Request, exc: MemoryBankError) -> JSONResponse:
        status = 500
        for err_type, code in _STATUS_BY_ERROR:
            if isinstance(exc, err_type):
                status = code
                break
        return JSONResponse(
            status_code=status,
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    @app.get("/v1/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/v1/users/{user_id}/turns", status_code=201)
    def ingest_turn(user_id: str, body: TurnIn):
        at = body.at or dt.datetime.now(dt.timezone.utc)
        turn = engine.append_turn(user_id, body.user_text, body.ai_text, at)
        return {"turn_id": turn.turn_id, "piece_id": turn.turn_id, "at": turn.at.isoformat()}

    @app.post("/v1/users/{user_id}/chat")
    def chat(user_id: str, body: ChatIn):
        result = engine.chat(user_id, body.message, body.at)
        return _chat_payload(result)

    @app.get("/v1/users/{user_id}/memory/search")
    def search(
        user_id: str,
        q: str = Query(..., min_length=1),
        k: int = Query(default=0, ge=0),
        at: dt.datetime | None = None,
    ):
        now = at or dt.datetime.now(dt.timezone.utc)
        hits = engine.search(user_id, q, k or None, now=now)
        return {"hits": [_hit_payload(engine.hit_detail(user_id, h, now)) for h in hits]}

    @app.post("/v1/users/{user_id}/consolidate")
    def consolidate(user_id: str, day: dt.date | None = None):
        result = engine.consolidate(user_id, day)
        return {
            "days": [d.isoformat() for d in result.days],
            "global_events": result.global_events,
            "global_portrait": result.global_portrait,
        }

    @app.get("/v1/users/{user_id}/portrait")
    def portrait(user_id: str):
        global_portrait, daily = engine.portrait(user_id)
        return {
            "global_portrait": global_portrait,
            "daily_portraits": {d.isoformat(): text for d, text in sorted(daily.items())},
        }

    @app.get("/v1/users/{user_id}/summary/global")
    def global_summary(user_id: str):
        return {"global_events": engine.global_summary(user_id)}

    @app.get("/v1/users/{user_id}/pieces")
    def pieces(user_id: str, include_forgotten: bool = False, at: dt.datetime | None = None):
        now = at or dt.datetime.now(dt.timezone.utc)
        out = []
        for piece in engine.enumerate_pieces(user_id, include_forgotten):
            state = piece.forgetting
            out.append(
                {
                    "piece_id": piece.piece_id,
                    "kind": piece.kind.value,
                    "text": piece.text,
                    "at": piece.at.isoformat(),
                    "source_day": piece.source_day.isoformat(),
                    "strength": state.strength,
                    "forgotten": state.forgotten,
                    "retention": None
                    if state.forgotten
                    else retention(state, max(now, state.last_recall_at), engine.policy.time_unit),
                }
            )
        return {"pieces": out}

    @app.get("/v1/users/{user_id}/pieces/{piece_id}/curve")
    def curve(
        user_id: str,
        piece_id: str,
        points: int = Query(default=60, ge=2, le=2000),
        at: dt.datetime | None = None,
    ):
        try:
            series = engine.curve(user_id, piece_id, at, points)
        except KeyError:
            return JSONResponse(
                status_code=404,
                content={"error": "UnknownPiece", "detail": f"no piece {piece_id!r}"},
            )
        return {
            "piece_id": series.piece_id,
            "strength": series.strength,
            "samples": [{"at": t.isoformat(), "retention": r} for t, r in series.samples],
            "resets": [r.isoformat() for r in series.resets],
        }

    @app.post("/v1/admin/sweep")
    def sweep(body: SweepIn | None = None):
        body = body or SweepIn()
        if body.user_id is not None:
            forgotten = {body.user_id: engine.sweep_user(body.user_id, body.now)}
        else:
            forgotten = engine.sweep_all(body.now)
        return {"forgotten": forgotten}

    @app.get("/v1/users")
    def users():
        return {"users": engine.user_ids()}

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
