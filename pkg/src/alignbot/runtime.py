"""Shared wiring from a ServiceConfig to live stores and backends; the
HTTP service and the CLI both build engines through here so session
behavior has exactly one code path."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .config import ServiceConfig
from .cues import BackendKind, MockCueBackend, RemoteCueBackend
from .harness import RulePlannerBackend, planner_script_from_dict, PlannerScript
from .orchestrator import SessionEngine
from .planner import PlannerBackendKind, RemotePlannerBackend
from .retrieval import CaseStore
from .store import InteractionStore


@dataclass
class Runtime:
    cfg: ServiceConfig
    interaction_store: InteractionStore
    case_store: CaseStore
    cue_backend: object
    planner_backend: object

    @property
    def event_log_path(self) -> Path:
        # beside the sessions dir, which holds only per-session state files
        return self.cfg.sessions_dir.parent / "events.jsonl"

    def _persist_event(self, event: dict) -> None:
        # every round's exact prompt and raw response lands on disk, so
        # any session can be replayed later
        with open(self.event_log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, ensure_ascii=False) + "\n")

    def new_engine(self, event_sink=None) -> SessionEngine:
        def sink(event: dict) -> None:
            self._persist_event(event)
            if event_sink is not None:
                event_sink(event)

        return SessionEngine(
            cue_backend=self.cue_backend,
            planner_backend=self.planner_backend,
            case_store=self.case_store,
            interaction_store=self.interaction_store,
            retrieval_cfg=self.cfg.retrieval,
            orch_cfg=self.cfg.orchestrator,
            event_sink=sink,
        )


def build_runtime(cfg: ServiceConfig) -> Runtime:
    interaction_store = InteractionStore(cfg.store_root)
    cfg.case_store_path.parent.mkdir(parents=True, exist_ok=True)
    case_store = CaseStore(cfg.case_store_path, seed=cfg.retrieval.rng_seed)

    if cfg.cue_backend.kind is BackendKind.REMOTE:
        cue_backend = RemoteCueBackend(cfg.cue_backend)
    else:
        cue_backend = MockCueBackend(cfg.load_cue_rules())

    if cfg.planner_backend.kind is PlannerBackendKind.REMOTE:
        planner_backend = RemotePlannerBackend(cfg.planner_backend)
    else:
        script = PlannerScript(base_plans=())
        if cfg.planner_script_path is not None:
            script = planner_script_from_dict(
                json.loads(Path(cfg.planner_script_path).read_text(encoding="utf-8"))
            )
        planner_backend = RulePlannerBackend(script)

    cfg.sessions_dir.mkdir(parents=True, exist_ok=True)
    return Runtime(
        cfg=cfg,
        interaction_store=interaction_store,
        case_store=case_store,
        cue_backend=cue_backend,
        planner_backend=planner_backend,
    )
