"""Local HTTP API over the orchestrator, stores, and harness.

Single process, household scale. Session mutation is serialized per
session id; every session's rounds are also published on a per-session
server-sent-event stream with monotonically increasing event ids, so a
client that reconnects with Last-Event-ID never sees a duplicated round.
"""

from __future__ import annotations

import asyncio
import json
import logging
import threading
from pathlib import Path

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse

from .config import ServiceConfig, load_config
from .cues import CueRequest
from .domain import (
    AlignBotError,
    Observation,
    OutcomeKind,
    ReminderCategory,
    TaskDescription,
    UserId,
    record_to_dict,
    utc_now,
)
from .harness import BaselineConfig, run_benchmark
from .orchestrator import (
    FeedbackKind,
    SessionState,
    TERMINAL_STATUSES,
    TerminalSessionError,
    UserAction,
)
from .remote import BackendTimeout, BackendUnavailable
from .retrieval import case_to_dict
from .runtime import Runtime, build_runtime

logger = logging.getLogger(__name__)


class SessionManager:
    """Owns live sessions, their locks, and their event buffers."""

    def __init__(self, runtime: Runtime):
        self.runtime = runtime
        self.engine = runtime.new_engine(event_sink=self._on_event)
        self.sessions: dict[str, SessionState] = {}
        self.locks: dict[str, threading.Lock] = {}
        self.events: dict[str, list[tuple[int, dict]]] = {}
        self._registry_lock = threading.Lock()

    def _on_event(self, event: dict) -> None:
        sid = event.get("session_id")
        if sid is None:
            return
        with self._registry_lock:
            buffer = self.events.setdefault(sid, [])
            buffer.append((len(buffer) + 1, event))

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._registry_lock:
            return self.locks.setdefault(session_id, threading.Lock())

    def start(self, user: str, task: str, observation_ref: str, scene_label: str | None) -> SessionState:
        req = CueRequest(
            user=UserId(user),
            task=TaskDescription(task),
            observation=Observation(
                image_ref=observation_ref, captured_at=utc_now(), scene_label=scene_label
            ),
        )
        state = self.engine.start(req)
        with self._registry_lock:
            self.sessions[state.session_id] = state
            self.locks.setdefault(state.session_id, threading.Lock())
        return state

    def get(self, session_id: str) -> SessionState:
        state = self.sessions.get(session_id)
        if state is None:
            raise KeyError(session_id)
        return state

    def feedback(self, session_id: str, action: UserAction, round_token: str | None) -> SessionState:
        state = self.get(session_id)
        with self._lock_for(session_id):
            return self.engine.feedback(state, action, round_token=round_token)

    def events_since(self, session_id: str, after: int) -> list[tuple[int, dict]]:
        with self._registry_lock:
            return [item for item in self.events.get(session_id, ()) if item[0] > after]

    def is_terminal(self, session_id: str) -> bool:
        state = self.sessions.get(session_id)
        return state is not None and state.status in TERMINAL_STATUSES


def session_summary(state: SessionState, runtime: Runtime) -> dict:
    cases = []
    for case_id in state.selected_cases:
        try:
            case = runtime.case_store.get(case_id)
        except AlignBotError:
            continue
        cases.append(
            {
                "case_id": case.case_id,
                "task": case.task.text,
                "priority": case.priority,
                "usage_count": case.usage_count,
            }
        )
    return {
        "session_id": state.session_id,
        "status": state.status.value,
        "user": state.request.user.id,
        "task": state.request.task.text,
        "observation_ref": state.request.observation.image_ref,
        "cues": [
            {"text": c.text, "category": c.category.value, "tagged": c.tagged}
            for c in state.cues
        ],
        "selected_cases": cases,
        "rounds": [
            {
                "round": r.round,
                "plan": [s.canonical() for s in r.plan.steps],
                "violations": [
                    {"step": v.step_index, "rule": v.rule.value, "message": v.message}
                    for v in r.violations
                ],
                "auto_repair": r.auto_repair,
                "rejected_lines": list(r.rejected_lines),
            }
            for r in state.rounds
        ],
        "dialogue": [
            {
                "speaker": t.speaker.value,
                "content": t.content,
                "category": t.reminder_category.value if t.reminder_category else None,
            }
            for t in state.dialogue
        ],
        "record_id": state.record_id,
    }


def create_app(cfg: ServiceConfig | None = None) -> FastAPI:
    cfg = cfg or load_config()
    runtime = build_runtime(cfg)
    manager = SessionManager(runtime)

    app = FastAPI(title="alignbot", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
        expose_headers=["*"],
    )
    app.state.manager = manager

    def check_auth(request: Request) -> None:
        if cfg.auth_token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {cfg.auth_token}":
            raise HTTPException(status_code=401, detail="missing or bad bearer token")

    async def read_body(request: Request) -> dict:
        try:
            body = await request.json()
        except json.JSONDecodeError:
            raise HTTPException(status_code=400, detail="body is not valid JSON") from None
        if not isinstance(body, dict):
            raise HTTPException(status_code=400, detail="body must be a JSON object")
        return body

    def require(body: dict, key: str) -> str:
        value = body.get(key)
        if not isinstance(value, str) or not value.strip():
            raise HTTPException(status_code=400, detail=f"missing or empty field {key!r}")
        return value

    @app.get("/healthz")
    def healthz():
        return {"ok": True}

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request, _=Depends(check_auth)):
        body = await read_body(request)
        user = require(body, "user")
        task = require(body, "task")
        observation_ref = require(body, "observation_ref")
        scene_label = body.get("scene_label")
        ref_path = Path(observation_ref)
        resolved = ref_path if ref_path.is_absolute() else runtime.cfg.store_root / ref_path
        if "://" not in observation_ref and not resolved.exists():
            raise HTTPException(status_code=400, detail=f"observation_ref does not resolve: {observation_ref}")
        try:
            state = await asyncio.to_thread(manager.start, user, task, observation_ref, scene_label)
        except (BackendTimeout, BackendUnavailable) as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from None
        except AlignBotError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        return {"session_id": state.session_id, "status": state.status.value}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str, _=Depends(check_auth)):
        try:
            state = manager.get(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session") from None
        return session_summary(state, runtime)

    @app.post("/sessions/{session_id}/feedback")
    async def post_feedback(session_id: str, request: Request, _=Depends(check_auth)):
        body = await read_body(request)
        kind_text = require(body, "action")
        try:
            kind = FeedbackKind(kind_text)
        except ValueError:
            raise HTTPException(status_code=400, detail=f"unknown action {kind_text!r}") from None
        category = None
        if body.get("category"):
            try:
                category = ReminderCategory.parse(body["category"])
            except AlignBotError as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from None
        try:
            action = UserAction(kind=kind, text=body.get("text"), category=category)
        except AlignBotError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        try:
            state = await asyncio.to_thread(
                manager.feedback, session_id, action, body.get("round_token")
            )
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session") from None
        except TerminalSessionError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from None
        except (BackendTimeout, BackendUnavailable) as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from None
        except AlignBotError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        return session_summary(state, runtime)

    @app.get("/sessions/{session_id}/events")
    async def session_events(session_id: str, request: Request, _=Depends(check_auth)):
        try:
            manager.get(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session") from None

        last_id = 0
        header = request.headers.get("last-event-id")
        if header:
            try:
                last_id = int(header)
            except ValueError:
                last_id = 0

        async def stream():
            yield "retry: 2000\n\n"
            cursor = last_id
            while True:
                fresh = manager.events_since(session_id, cursor)
                for event_id, event in fresh:
                    payload = json.dumps(event, ensure_ascii=False)
                    yield f"id: {event_id}\nevent: session\ndata: {payload}\n\n"
                    cursor = event_id
                if manager.is_terminal(session_id) and not manager.events_since(session_id, cursor):
                    yield "event: end\ndata: {}\n\n"
                    return
                if await request.is_disconnected():
                    return
                await asyncio.sleep(0.05)

        return StreamingResponse(stream(), media_type="text/event-stream")

    @app.get("/cases")
    def list_cases(_=Depends(check_auth)):
        return [case_to_dict(c) for c in runtime.case_store.cases()]

    @app.get("/records")
    def list_records(
        user: str | None = None,
        outcome: str | None = None,
        task_contains: str | None = None,
        _=Depends(check_auth),
    ):
        outcome_kind = None
        if outcome is not None:
            try:
                outcome_kind = OutcomeKind.parse(outcome)
            except AlignBotError as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from None
        records = runtime.interaction_store.query_records(
            user=UserId(user) if user else None,
            outcome=outcome_kind,
            task_contains=task_contains,
        )
        return [record_to_dict(r) for r in records]

    @app.post("/eval/run")
    async def eval_run(request: Request, _=Depends(check_auth)):
        body = await read_body(request)
        config_name = require(body, "config")
        try:
            config = BaselineConfig.from_name(config_name)
        except AlignBotError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        seeds = body.get("seeds", [0])
        if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds):
            raise HTTPException(status_code=400, detail="seeds must be a list of integers")
        suite_ref = body.get("suite", "reference")
        if suite_ref == "reference":
            from .reference_suite import make_reference_suite

            suite = make_reference_suite()
        else:
            from .harness import Suite

            suite_path = Path(suite_ref)
            if not suite_path.exists():
                raise HTTPException(status_code=400, detail=f"suite not found: {suite_ref}")
            suite = Suite.load(suite_path)
        workdir = runtime.cfg.store_root.parent / "eval"
        report = await asyncio.to_thread(
            run_benchmark, list(suite.scripts), config, seeds, suite, workdir
        )
        return report.to_dict()

    @app.exception_handler(AlignBotError)
    async def domain_error_handler(request: Request, exc: AlignBotError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    return app


def serve(cfg: ServiceConfig) -> None:
    import uvicorn

    app = create_app(cfg)
    uvicorn.run(app, host=cfg.listen_host, port=cfg.listen_port, log_level="info")
