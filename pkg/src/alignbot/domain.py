"""Shared domain types: users, observations, tasks, dialogue, cues, action
plans, outcomes, and interaction records. Pure values, no I/O.

All types are immutable and safe to share across threads. The canonical
plan text format used everywhere (prompts, storage, console) is one step
per line, ``N. verb(arg1[, arg2])`` with 1-based numbering.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum


class AlignBotError(Exception):
    """Base class for every domain-level error in the package."""


class DomainError(AlignBotError):
    """Invalid domain value or malformed serialized form."""


class UnknownVerb(DomainError):
    """Action verb outside the closed vocabulary."""


class ArityMismatch(DomainError):
    """Argument count does not match the verb's arity."""


class MalformedLine(DomainError):
    """No parseable ``verb(args)`` form found in a plan line."""


# ---------------------------------------------------------------------------
# Timestamps: UTC, second precision, "YYYY-MM-DDTHH:MM:SSZ" on the wire.

def utc_now() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


def format_timestamp(ts: datetime) -> str:
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).replace(microsecond=0).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(text: str) -> datetime:
    try:
        return datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
    except ValueError as exc:
        raise DomainError(f"bad timestamp {text!r}: {exc}") from None


def canonical_json(obj: object) -> str:
    """Serialize with a stable, compact layout; key order is insertion order."""
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


# ---------------------------------------------------------------------------
# Identifiers and inputs

@dataclass(frozen=True)
class UserId:
    """Opaque, stable user identifier (e.g. "user-A")."""

    id: str

    def __post_init__(self) -> None:
        if not self.id:
            raise DomainError("UserId must be non-empty")


@dataclass(frozen=True)
class Observation:
    """A captured scene image plus capture metadata.

    image_ref is an opaque locator (file path or URL); resolvability is
    checked by the store on ingest, not here.
    """

    image_ref: str
    captured_at: datetime
    scene_label: str | None = None

    def __post_init__(self) -> None:
        if not self.image_ref:
            raise DomainError("Observation.image_ref must be non-empty")


@dataclass(frozen=True)
class TaskDescription:
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise DomainError("TaskDescription must be non-empty after trimming")


class ReminderCategory(Enum):
    PERSONALIZED_PREFERENCE = "personalized_preference"
    CORRECTIVE_GUIDANCE = "corrective_guidance"
    CONTEXTUAL_ASSISTANCE = "contextual_assistance"

    @classmethod
    def parse(cls, value: str) -> "ReminderCategory":
        try:
            return cls(value)
        except ValueError:
            raise DomainError(f"unknown reminder category {value!r}") from None


@dataclass(frozen=True)
class Cue:
    """One instruction-formatted reminder line for the planner prompt.

    `tagged` records whether the category was explicit at the source or
    defaulted by a parser; the rating rubric distinguishes the two.
    """

    text: str
    category: ReminderCategory
    source_dialogue_turn: int | None = None
    tagged: bool = True

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise DomainError("Cue.text must be non-empty")


class Speaker(Enum):
    USER = "user"
    SYSTEM = "system"

    @classmethod
    def parse(cls, value: str) -> "Speaker":
        try:
            return cls(value)
        except ValueError:
            raise DomainError(f"unknown speaker {value!r}") from None


@dataclass(frozen=True)
class DialogueTurn:
    """One turn of the multi-round dialogue. Speakers need not alternate.

    A user turn carrying a reminder_category is a "reminder turn": the
    annotation is applied at ingest (console category selector or harness
    script), and the cue-dataset exporter keys on it.
    """

    speaker: Speaker
    content: str
    timestamp: datetime
    reminder_category: ReminderCategory | None = None

    def __post_init__(self) -> None:
        if not self.content:
            raise DomainError("DialogueTurn.content must be non-empty")


# ---------------------------------------------------------------------------
# Action vocabulary and plans

# Closed vocabulary: verb -> arity. Extendable by passing a custom mapping
# to parse_action_step; validation and prompts use this default.
VERB_ARITY: dict[str, int] = {
    "grasp": 1,
    "place": 2,
    "open": 1,
    "close": 1,
    "pour": 2,
    "wipe": 1,
    "turn_on": 1,
    "turn_off": 1,
    "move_to": 1,
    "wait": 0,
}

# Optional "N." / "N)" numbering, then verb(args). Lines not matching are
# rejected, never fuzzily recovered.
_STEP_RE = re.compile(
    r"^\s*(?:\d+\s*[.)]\s*)?([A-Za-z_][A-Za-z0-9_]*)\s*\(([^()]*)\)\s*$"
)


@dataclass(frozen=True)
class ActionStep:
    verb: str
    arguments: tuple[str, ...]
    raw_text: str

    def canonical(self) -> str:
        return f"{self.verb}({', '.join(self.arguments)})"


@dataclass(frozen=True)
class ActionPlan:
    plan_id: str
    steps: tuple[ActionStep, ...]

    def __post_init__(self) -> None:
        if not self.plan_id:
            raise DomainError("ActionPlan.plan_id must be non-empty")
        if not self.steps:
            raise DomainError("ActionPlan must have at least one step")

    def to_text(self) -> str:
        """Canonical plan text: "N. verb(args)", 1-based, one per line."""
        return "\n".join(f"{i}. {step.canonical()}" for i, step in enumerate(self.steps, 1))


def parse_action_step(line: str, vocabulary: dict[str, int] | None = None) -> ActionStep:
    """Parse one plan line in the canonical form ``verb(arg1[, arg2])``.

    A leading "N." or "N)" numbering prefix is accepted and ignored; the
    verb is matched case-insensitively and canonicalized lowercase;
    raw_text preserves the input unchanged.

    Raises MalformedLine (no parenthesized form), UnknownVerb, or
    ArityMismatch.
    """
    if vocabulary is None:
        vocabulary = VERB_ARITY
    if not line.strip():
        raise MalformedLine("empty line")
    m = _STEP_RE.match(line)
    if not m:
        raise MalformedLine(f"no verb(args) form in {line!r}")
    verb = m.group(1).lower()
    if verb not in vocabulary:
        raise UnknownVerb(f"verb {verb!r} not in vocabulary")
    inner = m.group(2).strip()
    if inner:
        arguments = tuple(a.strip() for a in inner.split(","))
        if any(not a for a in arguments):
            raise MalformedLine(f"empty argument in {line!r}")
    else:
        arguments = ()
    arity = vocabulary[verb]
    if len(arguments) != arity:
        raise ArityMismatch(
            f"{verb} takes {arity} argument(s), got {len(arguments)} in {line!r}"
        )
    return ActionStep(verb=verb, arguments=arguments, raw_text=line)


def format_action_step(step: ActionStep) -> str:
    return step.canonical()


def plan_from_lines(lines: list[str], plan_id: str) -> ActionPlan:
    """Strict parse: every line must be a valid step."""
    steps = tuple(parse_action_step(line) for line in lines if line.strip())
    return ActionPlan(plan_id=plan_id, steps=steps)


# ---------------------------------------------------------------------------
# Outcomes and records

class OutcomeKind(Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    ABANDONED = "abandoned"

    @classmethod
    def parse(cls, value: str) -> "OutcomeKind":
        try:
            return cls(value)
        except ValueError:
            raise DomainError(f"unknown outcome {value!r}") from None


@dataclass(frozen=True)
class Outcome:
    """Terminal session outcome. SUCCESS is assigned only when the session
    closed with explicit user approval."""

    kind: OutcomeKind
    note: str | None = None


@dataclass(frozen=True)
class InteractionRecord:
    """One history entry: who asked for what, the dialogue, the final plan,
    and how it ended. Immutable after write; record_id unique per store."""

    record_id: str
    user: UserId
    observation: Observation
    task: TaskDescription
    dialogue: tuple[DialogueTurn, ...]
    plan: ActionPlan
    outcome: Outcome
    created_at: datetime

    def __post_init__(self) -> None:
        if not self.record_id:
            raise DomainError("record_id must be non-empty")


# ---------------------------------------------------------------------------
# Wire codec. Log lines are JSON objects with this exact field order:
# record_id, user, observation, task, dialogue, plan, outcome, created_at.

def record_to_dict(rec: InteractionRecord) -> dict:
    return {
        "record_id": rec.record_id,
        "user": rec.user.id,
        "observation": {
            "image_ref": rec.observation.image_ref,
            "captured_at": format_timestamp(rec.observation.captured_at),
            "scene_label": rec.observation.scene_label,
        },
        "task": rec.task.text,
        "dialogue": [
            {
                "speaker": t.speaker.value,
                "content": t.content,
                "timestamp": format_timestamp(t.timestamp),
                "reminder_category": t.reminder_category.value if t.reminder_category else None,
            }
            for t in rec.dialogue
        ],
        "plan": {
            "plan_id": rec.plan.plan_id,
            "steps": [s.canonical() for s in rec.plan.steps],
        },
        "outcome": {"kind": rec.outcome.kind.value, "note": rec.outcome.note},
        "created_at": format_timestamp(rec.created_at),
    }


def record_from_dict(data: dict) -> InteractionRecord:
    try:
        obs = data["observation"]
        plan = data["plan"]
        outcome = data["outcome"]
        return InteractionRecord(
            record_id=data["record_id"],
            user=UserId(data["user"]),
            observation=Observation(
                image_ref=obs["image_ref"],
                captured_at=parse_timestamp(obs["captured_at"]),
                scene_label=obs.get("scene_label"),
            ),
            task=TaskDescription(data["task"]),
            dialogue=tuple(
                DialogueTurn(
                    speaker=Speaker.parse(t["speaker"]),
                    content=t["content"],
                    timestamp=parse_timestamp(t["timestamp"]),
                    reminder_category=(
                        ReminderCategory.parse(t["reminder_category"])
                        if t.get("reminder_category")
                        else None
                    ),
                )
                for t in data["dialogue"]
            ),
            plan=plan_from_lines(list(plan["steps"]), plan_id=plan["plan_id"]),
            outcome=Outcome(kind=OutcomeKind.parse(outcome["kind"]), note=outcome.get("note")),
            created_at=parse_timestamp(data["created_at"]),
        )
    except KeyError as exc:
        raise DomainError(f"missing field {exc} in record") from None


def record_to_json_line(rec: InteractionRecord) -> str:
    return canonical_json(record_to_dict(rec))


def record_from_json_line(line: str) -> InteractionRecord:
    try:
        data = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DomainError(f"bad record line: {exc}") from None
    if not isinstance(data, dict):
        raise DomainError("record line is not an object")
    return record_from_dict(data)
