"""Cue generation: the adapter model's prompt template and its backends.

The adapter turns ⟨user, task, observation⟩ into instruction-formatted
cue lines for the planner prompt. Two backends ship: a deterministic
rule-based mock (first matching rule wins) standing in for the served
model in tests, and a remote HTTP backend for a real served model.

The prompt is deliberately minimal; longer framing measurably hurts the
adapter, so nothing is added beyond the template and the optional
step-by-step suffix.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .domain import (
    AlignBotError,
    Cue,
    Observation,
    ReminderCategory,
    TaskDescription,
    UserId,
)
from .remote import image_payload, post_prompt


class CueError(AlignBotError):
    pass


class MalformedResponse(CueError):
    """No parseable cue line and no explicit NO CUES marker."""


CUE_PROMPT_TEMPLATE = "{user} wants a robot to {task}. Can you provide some cues to the robot?"
COT_SUFFIX = " Let's think step by step."
NO_CUES_MARKER = "NO CUES"
MAX_CUE_LENGTH = 200

_CATEGORY_ALIASES = {
    "personalized preference": ReminderCategory.PERSONALIZED_PREFERENCE,
    "personalized preferences": ReminderCategory.PERSONALIZED_PREFERENCE,
    "preference": ReminderCategory.PERSONALIZED_PREFERENCE,
    "corrective guidance": ReminderCategory.CORRECTIVE_GUIDANCE,
    "corrective": ReminderCategory.CORRECTIVE_GUIDANCE,
    "contextual assistance": ReminderCategory.CONTEXTUAL_ASSISTANCE,
    "contextual": ReminderCategory.CONTEXTUAL_ASSISTANCE,
    "context": ReminderCategory.CONTEXTUAL_ASSISTANCE,
}


class BackendKind(Enum):
    MOCK = "mock"
    REMOTE = "remote"


@dataclass(frozen=True)
class CueRequest:
    user: UserId
    task: TaskDescription
    observation: Observation


@dataclass(frozen=True)
class CueBackendConfig:
    kind: BackendKind = BackendKind.MOCK
    endpoint_url: str | None = None
    timeout: float = 10.0
    chain_of_thought: bool = False
    image_transport: str = "reference"  # reference | inline | none
    max_in_flight: int = 4
    retry_backoff: float = 0.5

    def __post_init__(self) -> None:
        if self.kind is BackendKind.REMOTE and not self.endpoint_url:
            raise CueError("remote cue backend requires endpoint_url")
        if self.image_transport not in ("reference", "inline", "none"):
            raise CueError(f"bad image_transport {self.image_transport!r}")


def render_cue_prompt(req: CueRequest, cfg: CueBackendConfig) -> str:
    """Exact prompt for the adapter; pure, byte-stable."""
    prompt = CUE_PROMPT_TEMPLATE.format(user=req.user.id, task=req.task.text)
    if cfg.chain_of_thought:
        prompt += COT_SUFFIX
    return prompt


def _normalize_category(raw: str) -> ReminderCategory | None:
    key = raw.strip().lower().replace("_", " ").replace("-", " ")
    if key in _CATEGORY_ALIASES:
        return _CATEGORY_ALIASES[key]
    try:
        return ReminderCategory(key.replace(" ", "_"))
    except ValueError:
        return None


def _strip_bullet(line: str) -> str:
    for prefix in ("- ", "* ", "• "):
        if line.startswith(prefix):
            return line[len(prefix) :]
    # numbered list markers: "1. " / "2) "
    i = 0
    while i < len(line) and line[i].isdigit():
        i += 1
    if 0 < i < len(line) and line[i] in ".)" and line[i + 1 : i + 2] == " ":
        return line[i + 2 :]
    return line


def parse_cue_line(line: str) -> Cue | None:
    """One wire line -> Cue, or None when the line fails validation.

    Accepted shape: optional "[category]" prefix, then an imperative
    sentence of at most 200 characters. Unknown or missing category tags
    fall back to contextual assistance with tagged=False.
    """
    text = _strip_bullet(line.strip())
    category: ReminderCategory | None = None
    if text.startswith("["):
        end = text.find("]")
        if end > 0:
            candidate = _normalize_category(text[1:end])
            if candidate is not None:
                category = candidate
                text = text[end + 1 :].strip()
    if not text or len(text) > MAX_CUE_LENGTH:
        return None
    if category is None:
        return Cue(text=text, category=ReminderCategory.CONTEXTUAL_ASSISTANCE, tagged=False)
    return Cue(text=text, category=category, tagged=True)


def parse_cue_response(body: str) -> list[Cue]:
    """Whole response -> cues, preserving line order; non-cue prose is
    dropped. An explicit NO CUES line makes an empty result legitimate."""
    cues: list[Cue] = []
    saw_no_cues = False
    for line in body.splitlines():
        if line.strip().upper() == NO_CUES_MARKER:
            saw_no_cues = True
            continue
        cue = parse_cue_line(line)
        if cue is not None:
            cues.append(cue)
    if not cues and not saw_no_cues:
        raise MalformedResponse("response contained no parseable cue lines")
    return cues


# ---------------------------------------------------------------------------
# Mock backend: ordered rules, first match wins.

@dataclass(frozen=True)
class MockRule:
    cues: tuple[Cue, ...]
    user: str | None = None
    task_substring: str | None = None
    scene_label: str | None = None

    def matches(self, req: CueRequest) -> bool:
        if self.user is not None and req.user.id != self.user:
            return False
        if self.task_substring is not None and self.task_substring not in req.task.text:
            return False
        if self.scene_label is not None and req.observation.scene_label != self.scene_label:
            return False
        return True


@dataclass(frozen=True)
class MockRuleSet:
    rules: tuple[MockRule, ...] = ()

    @classmethod
    def from_file(cls, path: str | Path) -> "MockRuleSet":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "MockRuleSet":
        rules = []
        for entry in data.get("rules", []):
            match = entry.get("match", {})
            cues = tuple(
                Cue(
                    text=c["text"],
                    category=ReminderCategory.parse(c.get("category", "contextual_assistance")),
                    tagged=bool(c.get("tagged", True)),
                )
                for c in entry["cues"]
            )
            rules.append(
                MockRule(
                    cues=cues,
                    user=match.get("user"),
                    task_substring=match.get("task_substring"),
                    scene_label=match.get("scene_label"),
                )
            )
        return cls(rules=tuple(rules))

    def to_dict(self) -> dict:
        return {
            "rules": [
                {
                    "match": {
                        k: v
                        for k, v in (
                            ("user", rule.user),
                            ("task_substring", rule.task_substring),
                            ("scene_label", rule.scene_label),
                        )
                        if v is not None
                    },
                    "cues": [
                        {"text": c.text, "category": c.category.value, "tagged": c.tagged}
                        for c in rule.cues
                    ],
                }
                for rule in self.rules
            ]
        }


class MockCueBackend:
    """Deterministic stand-in for the served adapter model."""

    def __init__(self, rule_set: MockRuleSet):
        self.rule_set = rule_set

    def generate_cues(self, req: CueRequest) -> list[Cue]:
        for rule in self.rule_set.rules:
            if rule.matches(req):
                return list(rule.cues)
        return []


class RemoteCueBackend:
    """Served adapter model behind the shared POST protocol. Stateless per
    request; a semaphore caps concurrent in-flight calls."""

    def __init__(self, cfg: CueBackendConfig):
        if cfg.kind is not BackendKind.REMOTE:
            raise CueError("RemoteCueBackend needs a remote config")
        self.cfg = cfg
        self._gate = threading.Semaphore(cfg.max_in_flight)

    def generate_cues(self, req: CueRequest) -> list[Cue]:
        prompt = render_cue_prompt(req, self.cfg)
        image = image_payload(req.observation.image_ref, self.cfg.image_transport)
        with self._gate:
            body = post_prompt(
                self.cfg.endpoint_url,
                prompt,
                image,
                timeout=self.cfg.timeout,
                backoff=self.cfg.retry_backoff,
            )
        return parse_cue_response(body)


def generate_cues(req: CueRequest, backend) -> list[Cue]:
    """Uniform entry point over any backend object with generate_cues."""
    return backend.generate_cues(req)


def make_cue_backend(cfg: CueBackendConfig, rule_set: MockRuleSet | None = None):
    if cfg.kind is BackendKind.MOCK:
        return MockCueBackend(rule_set or MockRuleSet())
    return RemoteCueBackend(cfg)
