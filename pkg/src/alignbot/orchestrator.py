"""The planning session loop.

One session = one task request driven to a terminal state: generate cues
once, retrieve prioritized cases once, then iterate plan rounds. Each
round assembles the prompt (cues, cases, and every reminder accumulated
so far), asks the planner backend, validates the plan, and surfaces it.
Corrective feedback starts another round; approval, abandonment, or the
round budget ends the session. At the end the full dialogue is written
to the interaction store and every case that was injected into prompts
is settled up or down.

The engine is state-in/state-out: the HTTP API, the CLI, and the
benchmark harness all drive these same methods, so there is exactly one
code path for session behavior.
"""

from __future__ import annotations

import random
import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .cues import CueRequest, generate_cues
from .domain import (
    ActionPlan,
    AlignBotError,
    Cue,
    DialogueTurn,
    InteractionRecord,
    Observation,
    Outcome,
    OutcomeKind,
    ReminderCategory,
    Speaker,
    TaskDescription,
    UserId,
    parse_timestamp,
    format_timestamp,
    plan_from_lines,
    utc_now,
)
from .planner import request_plan
from .retrieval import CaseEntry, CaseOutcome, CaseStore, RetrievalConfig
from .store import InteractionStore
from .validation import (
    DEFAULT_CLOSABLE_CONTAINERS,
    Rule,
    Violation,
    validate_plan,
)


class SessionError(AlignBotError):
    pass


class TerminalSessionError(SessionError):
    """Feedback arrived after the session already closed."""


class SessionStatus(Enum):
    AWAITING_PLAN = "awaiting_plan"
    AWAITING_USER = "awaiting_user"
    APPROVED = "approved"
    FAILED = "failed"
    ABANDONED = "abandoned"


TERMINAL_STATUSES = frozenset(
    {SessionStatus.APPROVED, SessionStatus.FAILED, SessionStatus.ABANDONED}
)


class FeedbackKind(Enum):
    APPROVE = "approve"
    CORRECTIVE = "corrective"
    ABANDON = "abandon"


@dataclass(frozen=True)
class UserAction:
    kind: FeedbackKind
    text: str | None = None
    category: ReminderCategory | None = None

    def __post_init__(self) -> None:
        if self.kind is FeedbackKind.CORRECTIVE and not (self.text or "").strip():
            raise SessionError("corrective feedback needs text")


# ---------------------------------------------------------------------------
# Prompt assembly

class SectionName(Enum):
    TASK_HEADER = "TaskHeader"
    OBSERVATION = "Observation"
    CUES = "Cues"
    CASES = "Cases"
    FORMAT_RULES = "FormatRules"


_SECTION_HEADERS = {
    SectionName.TASK_HEADER: "## Task",
    SectionName.OBSERVATION: "## Observation",
    SectionName.CUES: "## Cues",
    SectionName.CASES: "## Cases",
    SectionName.FORMAT_RULES: "## Format",
}

FORMAT_RULES_TEXT = (
    "Answer only with numbered action lines, one per line, in the exact form\n"
    '"N. verb(arg1[, arg2])" with 1-based numbering. Allowed verbs:\n'
    "grasp(object), place(object, destination), open(container),\n"
    "close(container), pour(source, destination), wipe(surface),\n"
    "turn_on(device), turn_off(device), move_to(location), wait()."
)


@dataclass(frozen=True)
class PlannerPrompt:
    sections: tuple[tuple[SectionName, str], ...]

    def render(self) -> str:
        parts = [f"{_SECTION_HEADERS[name]}\n{body}" for name, body in self.sections]
        return "\n\n".join(parts)

    def section(self, name: SectionName) -> str | None:
        for sec_name, body in self.sections:
            if sec_name is name:
                return body
        return None


def assemble_prompt(
    req: CueRequest,
    cues: list[Cue],
    cases: list[CaseEntry],
    reminders: tuple[str, ...] = (),
    raw_transcripts: tuple[str, ...] = (),
) -> PlannerPrompt:
    """Fixed section order: TaskHeader, Observation, Cues, Cases,
    FormatRules. Cues/Cases are omitted entirely when empty. Reminders
    (accumulated dialogue) and raw transcripts render into Cues."""
    sections: list[tuple[SectionName, str]] = []
    sections.append(
        (
            SectionName.TASK_HEADER,
            f"{req.user.id} wants a robot to {req.task.text}.",
        )
    )
    obs_lines = [f"image: {req.observation.image_ref}"]
    if req.observation.scene_label:
        obs_lines.append(f"scene: {req.observation.scene_label}")
    sections.append((SectionName.OBSERVATION, "\n".join(obs_lines)))

    cue_lines = [f"- {c.text}" for c in cues]
    cue_lines.extend(f"- {text}" for text in reminders)
    cue_body = "\n".join(cue_lines)
    if raw_transcripts:
        blocks = "\n\n".join(raw_transcripts)
        cue_body = f"{cue_body}\n\n{blocks}" if cue_body else blocks
    if cue_body:
        sections.append((SectionName.CUES, cue_body))

    if cases:
        case_blocks = []
        for case in cases:
            case_blocks.append(f"Task: {case.task.text}\nPlan:\n{case.plan.to_text()}")
        sections.append((SectionName.CASES, "\n\n".join(case_blocks)))

    sections.append((SectionName.FORMAT_RULES, FORMAT_RULES_TEXT))
    return PlannerPrompt(sections=tuple(sections))


# ---------------------------------------------------------------------------
# Session state

@dataclass
class RoundRecord:
    round: int
    prompt_text: str
    response_text: str
    plan: ActionPlan
    rejected_lines: tuple[str, ...]
    violations: tuple[Violation, ...]
    auto_repair: bool  # this round was generated by the validator loop
    user_turns: tuple[DialogueTurn, ...]  # turns that led to this round


@dataclass
class SessionState:
    session_id: str
    request: CueRequest
    cues: list[Cue] = field(default_factory=list)
    selected_cases: list[str] = field(default_factory=list)
    rounds: list[RoundRecord] = field(default_factory=list)
    status: SessionStatus = SessionStatus.AWAITING_PLAN
    dialogue: list[DialogueTurn] = field(default_factory=list)
    # reminder texts re-injected into later prompts: user corrective turns
    # and validator notes, never the surfaced plan echoes
    reminders: list[str] = field(default_factory=list)
    raw_transcripts: tuple[str, ...] = ()
    processed_tokens: set[str] = field(default_factory=set)
    record_id: str | None = None

    @property
    def latest_plan(self) -> ActionPlan | None:
        return self.rounds[-1].plan if self.rounds else None

    @property
    def latest_violations(self) -> tuple[Violation, ...]:
        return self.rounds[-1].violations if self.rounds else ()


@dataclass(frozen=True)
class OrchestratorConfig:
    max_rounds: int = 5
    auto_repair: bool = True  # one validator-driven repair round per cycle
    known_objects: frozenset[str] = frozenset()
    closable_containers: frozenset[str] = DEFAULT_CLOSABLE_CONTAINERS
    add_case_on_success: bool = True
    cues_enabled: bool = True
    retrieval_enabled: bool = True
    raw_reminder_injection: bool = False
    raw_reminder_sample: int = 2
    image_to_cue_backend: bool = True

    def __post_init__(self) -> None:
        if self.max_rounds < 1:
            raise SessionError("max_rounds must be >= 1")


def default_id_factory(kind: str) -> str:
    return f"{kind}-{uuid.uuid4().hex[:12]}"


OUTCOME_BY_STATUS = {
    SessionStatus.APPROVED: OutcomeKind.SUCCESS,
    SessionStatus.FAILED: OutcomeKind.FAILURE,
    SessionStatus.ABANDONED: OutcomeKind.ABANDONED,
}


class SessionEngine:
    """Drives sessions against a fixed set of dependencies."""

    def __init__(
        self,
        cue_backend,
        planner_backend,
        case_store: CaseStore,
        interaction_store: InteractionStore,
        retrieval_cfg: RetrievalConfig,
        orch_cfg: OrchestratorConfig | None = None,
        clock: Callable = utc_now,
        id_factory: Callable[[str], str] = default_id_factory,
        event_sink: Callable[[dict], None] | None = None,
        raw_rng: random.Random | None = None,
    ):
        self.cue_backend = cue_backend
        self.planner_backend = planner_backend
        self.case_store = case_store
        self.interaction_store = interaction_store
        self.retrieval_cfg = retrieval_cfg
        self.cfg = orch_cfg or OrchestratorConfig()
        self.clock = clock
        self.id_factory = id_factory
        self.event_sink = event_sink or (lambda event: None)
        self.raw_rng = raw_rng or random.Random(retrieval_cfg.rng_seed)

    # -- lifecycle ----------------------------------------------------------

    def start(self, req: CueRequest) -> SessionState:
        state = SessionState(session_id=self.id_factory("sess"), request=req)

        if self.cfg.cues_enabled:
            cue_req = req
            if not self.cfg.image_to_cue_backend:
                cue_req = _mask_observation(req)
            state.cues = generate_cues(cue_req, self.cue_backend)

        if self.cfg.retrieval_enabled:
            selected = self.case_store.retrieve(req.task, self.retrieval_cfg)
            state.selected_cases = [c.case_id for c in selected]

        if self.cfg.raw_reminder_injection:
            state.raw_transcripts = self._sample_transcripts()

        self._plan_cycle(state, trigger_turns=())
        return state

    def feedback(
        self, state: SessionState, action: UserAction, round_token: str | None = None
    ) -> SessionState:
        if state.status in TERMINAL_STATUSES:
            raise TerminalSessionError(f"session {state.session_id} is {state.status.value}")
        if state.status is not SessionStatus.AWAITING_USER:
            raise SessionError(f"no plan awaiting feedback in {state.session_id}")
        if round_token is not None:
            if round_token in state.processed_tokens:
                return state  # duplicate delivery: no-op
            state.processed_tokens.add(round_token)

        self._emit(
            {
                "type": "feedback",
                "session_id": state.session_id,
                "round": len(state.rounds),
                "action": action.kind.value,
                "text": action.text,
                "category": action.category.value if action.category else None,
            }
        )

        if action.kind is FeedbackKind.APPROVE:
            self._finish(state, SessionStatus.APPROVED)
        elif action.kind is FeedbackKind.ABANDON:
            self._finish(state, SessionStatus.ABANDONED)
        else:
            turn = DialogueTurn(
                speaker=Speaker.USER,
                content=action.text,
                timestamp=self.clock(),
                reminder_category=action.category or ReminderCategory.CORRECTIVE_GUIDANCE,
            )
            state.dialogue.append(turn)
            state.reminders.append(turn.content)
            if len(state.rounds) >= self.cfg.max_rounds:
                self._finish(state, SessionStatus.FAILED)
            else:
                self._plan_cycle(state, trigger_turns=(turn,))
        return state

    # -- internals ----------------------------------------------------------

    def _plan_cycle(self, state: SessionState, trigger_turns: tuple[DialogueTurn, ...]) -> None:
        """One user-visible cycle: a plan round plus at most one automatic
        validator repair round."""
        state.status = SessionStatus.AWAITING_PLAN
        violations = self._plan_round(state, trigger_turns, auto_repair=False)
        if violations and self.cfg.auto_repair and len(state.rounds) < self.cfg.max_rounds:
            repair_turns = tuple(
                DialogueTurn(
                    speaker=Speaker.SYSTEM,
                    content=f"Step {v.step_index}: {v.message}",
                    timestamp=self.clock(),
                )
                for v in violations
            )
            state.dialogue.extend(repair_turns)
            state.reminders.extend(t.content for t in repair_turns)
            self._plan_round(state, repair_turns, auto_repair=True)
        state.status = SessionStatus.AWAITING_USER

    def _plan_round(
        self,
        state: SessionState,
        trigger_turns: tuple[DialogueTurn, ...],
        auto_repair: bool,
    ) -> tuple[Violation, ...]:
        round_no = len(state.rounds) + 1
        reminders = tuple(state.reminders)
        cases = [self.case_store.get(cid) for cid in state.selected_cases]
        prompt = assemble_prompt(
            state.request,
            state.cues,
            cases,
            reminders=reminders,
            raw_transcripts=state.raw_transcripts,
        )
        prompt_text = prompt.render()
        image_ref = state.request.observation.image_ref
        response = request_plan(
            prompt_text,
            self.planner_backend,
            plan_id=f"{state.session_id}-r{round_no}",
            image_ref=image_ref,
        )
        report = validate_plan(
            response.plan,
            known_objects=self.cfg.known_objects,
            closable_containers=self.cfg.closable_containers,
        )
        record = RoundRecord(
            round=round_no,
            prompt_text=prompt_text,
            response_text=response.raw_text,
            plan=response.plan,
            rejected_lines=response.rejected_lines,
            violations=report.violations,
            auto_repair=auto_repair,
            user_turns=trigger_turns,
        )
        state.rounds.append(record)
        # surfaced plan becomes part of the dialogue the record will keep
        state.dialogue.append(
            DialogueTurn(
                speaker=Speaker.SYSTEM,
                content=response.plan.to_text(),
                timestamp=self.clock(),
            )
        )
        self._emit(
            {
                "type": "round",
                "session_id": state.session_id,
                "round": round_no,
                "prompt": prompt_text,
                "response": response.raw_text,
                "violations": [
                    {"step": v.step_index, "rule": v.rule.value, "message": v.message}
                    for v in report.violations
                ],
                "user_turns": [
                    {"speaker": t.speaker.value, "content": t.content}
                    for t in trigger_turns
                ],
                "auto_repair": auto_repair,
            }
        )
        return report.violations

    def _finish(self, state: SessionState, status: SessionStatus) -> None:
        state.status = status
        outcome_kind = OUTCOME_BY_STATUS[status]
        rec = InteractionRecord(
            record_id=self.id_factory("rec"),
            user=state.request.user,
            observation=state.request.observation,
            task=state.request.task,
            dialogue=tuple(state.dialogue),
            plan=state.rounds[-1].plan,
            outcome=Outcome(kind=outcome_kind, note=f"closed after {len(state.rounds)} round(s)"),
            created_at=self.clock(),
        )
        self.interaction_store.append_record(rec)
        state.record_id = rec.record_id

        settled: list[str] = []
        if status is SessionStatus.APPROVED and state.selected_cases:
            self.case_store.settle(
                state.selected_cases, CaseOutcome.USED_IN_SUCCESS, self.retrieval_cfg
            )
            settled = list(state.selected_cases)
        elif status is SessionStatus.FAILED and state.selected_cases:
            self.case_store.settle(
                state.selected_cases, CaseOutcome.USED_IN_FAILURE, self.retrieval_cfg
            )
            settled = list(state.selected_cases)
        # abandoned sessions carry no utility signal: no settlement

        if status is SessionStatus.APPROVED and self.cfg.add_case_on_success:
            self.case_store.add_case(
                state.rounds[-1].plan,
                state.request.task,
                self.retrieval_cfg,
                created_at=self.clock(),
                case_id=self.id_factory("case"),
            )

        self._emit(
            {
                "type": "terminal",
                "session_id": state.session_id,
                "status": status.value,
                "record_id": rec.record_id,
                "settled_cases": settled,
            }
        )

    def _sample_transcripts(self) -> tuple[str, ...]:
        records = self.interaction_store.records()
        if not records:
            return ()
        count = min(self.cfg.raw_reminder_sample, len(records))
        sample = self.raw_rng.sample(records, count)
        blocks = []
        for rec in sample:
            lines = [f"Past interaction ({rec.task.text}):"]
            for turn in rec.dialogue:
                speaker = "User" if turn.speaker is Speaker.USER else "System"
                lines.append(f"{speaker}: {turn.content}")
            if len(lines) == 1:
                lines.append(f"Plan:\n{rec.plan.to_text()}")
            blocks.append("\n".join(lines))
        return tuple(blocks)

    def _emit(self, event: dict) -> None:
        self.event_sink(event)


def _mask_observation(req: CueRequest) -> CueRequest:
    """Text-only cue path: the backend sees the request without any visual
    signal (no scene label; remote configs also use image_transport
    'none')."""
    masked = Observation(
        image_ref=req.observation.image_ref,
        captured_at=req.observation.captured_at,
        scene_label=None,
    )
    return CueRequest(user=req.user, task=req.task, observation=masked)


def run_session(req: CueRequest, engine: SessionEngine, user_fn) -> SessionState:
    """Drive a session to a terminal state with a user callable
    (state -> UserAction)."""
    state = engine.start(req)
    while state.status is SessionStatus.AWAITING_USER:
        action = user_fn(state)
        state = engine.feedback(state, action)
    return state


# ---------------------------------------------------------------------------
# State (de)serialization, used by the CLI to continue sessions across
# process boundaries and by the service for replay.

def state_to_dict(state: SessionState) -> dict:
    req = state.request
    return {
        "session_id": state.session_id,
        "request": {
            "user": req.user.id,
            "task": req.task.text,
            "observation": {
                "image_ref": req.observation.image_ref,
                "captured_at": format_timestamp(req.observation.captured_at),
                "scene_label": req.observation.scene_label,
            },
        },
        "cues": [
            {
                "text": c.text,
                "category": c.category.value,
                "source_dialogue_turn": c.source_dialogue_turn,
                "tagged": c.tagged,
            }
            for c in state.cues
        ],
        "selected_cases": list(state.selected_cases),
        "rounds": [
            {
                "round": r.round,
                "prompt": r.prompt_text,
                "response": r.response_text,
                "plan": {"plan_id": r.plan.plan_id, "steps": [s.canonical() for s in r.plan.steps]},
                "rejected_lines": list(r.rejected_lines),
                "violations": [
                    {"step": v.step_index, "rule": v.rule.value, "message": v.message}
                    for v in r.violations
                ],
                "auto_repair": r.auto_repair,
                "user_turns": [
                    {
                        "speaker": t.speaker.value,
                        "content": t.content,
                        "timestamp": format_timestamp(t.timestamp),
                        "reminder_category": t.reminder_category.value
                        if t.reminder_category
                        else None,
                    }
                    for t in r.user_turns
                ],
            }
            for r in state.rounds
        ],
        "status": state.status.value,
        "dialogue": [
            {
                "speaker": t.speaker.value,
                "content": t.content,
                "timestamp": format_timestamp(t.timestamp),
                "reminder_category": t.reminder_category.value if t.reminder_category else None,
            }
            for t in state.dialogue
        ],
        "reminders": list(state.reminders),
        "raw_transcripts": list(state.raw_transcripts),
        "processed_tokens": sorted(state.processed_tokens),
        "record_id": state.record_id,
    }


def _turn_from_dict(data: dict) -> DialogueTurn:
    return DialogueTurn(
        speaker=Speaker.parse(data["speaker"]),
        content=data["content"],
        timestamp=parse_timestamp(data["timestamp"]),
        reminder_category=(
            ReminderCategory.parse(data["reminder_category"])
            if data.get("reminder_category")
            else None
        ),
    )


def state_from_dict(data: dict) -> SessionState:
    req_data = data["request"]
    obs = req_data["observation"]
    request = CueRequest(
        user=UserId(req_data["user"]),
        task=TaskDescription(req_data["task"]),
        observation=Observation(
            image_ref=obs["image_ref"],
            captured_at=parse_timestamp(obs["captured_at"]),
            scene_label=obs.get("scene_label"),
        ),
    )
    rounds = []
    for r in data["rounds"]:
        rounds.append(
            RoundRecord(
                round=r["round"],
                prompt_text=r["prompt"],
                response_text=r["response"],
                plan=plan_from_lines(list(r["plan"]["steps"]), plan_id=r["plan"]["plan_id"]),
                rejected_lines=tuple(r["rejected_lines"]),
                violations=tuple(
                    Violation(v["step"], Rule(v["rule"]), v["message"])
                    for v in r["violations"]
                ),
                auto_repair=r["auto_repair"],
                user_turns=tuple(_turn_from_dict(t) for t in r["user_turns"]),
            )
        )
    state = SessionState(
        session_id=data["session_id"],
        request=request,
        cues=[
            Cue(
                text=c["text"],
                category=ReminderCategory.parse(c["category"]),
                source_dialogue_turn=c.get("source_dialogue_turn"),
                tagged=c.get("tagged", True),
            )
            for c in data["cues"]
        ],
        selected_cases=list(data["selected_cases"]),
        rounds=rounds,
        status=SessionStatus(data["status"]),
        dialogue=[_turn_from_dict(t) for t in data["dialogue"]],
        reminders=list(data.get("reminders", ())),
        raw_transcripts=tuple(data.get("raw_transcripts", ())),
        processed_tokens=set(data.get("processed_tokens", ())),
        record_id=data.get("record_id"),
    )
    return state
