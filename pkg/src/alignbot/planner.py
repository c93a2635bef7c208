"""Planner backends: rendered prompt in, numbered action lines out.

The planner model itself is frozen and external; everything here treats
it as a text function. Mock backends keep tests and benchmarks hermetic,
the remote backend mirrors the cue adapter's POST protocol.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .domain import (
    ActionPlan,
    AlignBotError,
    DomainError,
    parse_action_step,
)
from .remote import image_payload, post_prompt


class PlannerError(AlignBotError):
    pass


class UnparseablePlan(PlannerError):
    """The response contained zero valid action lines."""


class PlannerBackendKind(Enum):
    MOCK = "mock"
    REMOTE = "remote"


@dataclass(frozen=True)
class PlannerBackendConfig:
    kind: PlannerBackendKind = PlannerBackendKind.MOCK
    endpoint_url: str | None = None
    timeout: float = 30.0
    send_image: bool = True  # text-only planner variants get prompt only
    retry_backoff: float = 0.5

    def __post_init__(self) -> None:
        if self.kind is PlannerBackendKind.REMOTE and not self.endpoint_url:
            raise PlannerError("remote planner backend requires endpoint_url")


class ScriptedPlannerBackend:
    """Returns pre-scripted response bodies in order; the last one repeats.
    Purely for tests and fixtures."""

    def __init__(self, responses: list[str]):
        if not responses:
            raise PlannerError("scripted planner needs at least one response")
        self._responses = list(responses)
        self._calls = 0
        self.prompts: list[str] = []  # kept for assertions

    def complete(self, prompt: str, image_ref: str | None = None) -> str:
        self.prompts.append(prompt)
        idx = min(self._calls, len(self._responses) - 1)
        self._calls += 1
        return self._responses[idx]


class RemotePlannerBackend:
    def __init__(self, cfg: PlannerBackendConfig):
        if cfg.kind is not PlannerBackendKind.REMOTE:
            raise PlannerError("RemotePlannerBackend needs a remote config")
        self.cfg = cfg

    def complete(self, prompt: str, image_ref: str | None = None) -> str:
        image = None
        if self.cfg.send_image and image_ref is not None:
            image = image_payload(image_ref, "reference")
        return post_prompt(
            self.cfg.endpoint_url,
            prompt,
            image,
            timeout=self.cfg.timeout,
            backoff=self.cfg.retry_backoff,
        )


@dataclass(frozen=True)
class PlanResponse:
    plan: ActionPlan
    raw_text: str
    rejected_lines: tuple[str, ...]  # malformed lines, recorded in the session log


def parse_plan_response(body: str, plan_id: str) -> PlanResponse:
    """Parse every response line as an action step; lines that fail are
    collected, not fatal, unless nothing at all parses."""
    steps = []
    rejected = []
    for line in body.splitlines():
        if not line.strip():
            continue
        try:
            steps.append(parse_action_step(line))
        except DomainError:
            rejected.append(line)
    if not steps:
        raise UnparseablePlan(f"no valid action lines in response ({len(rejected)} rejected)")
    return PlanResponse(
        plan=ActionPlan(plan_id=plan_id, steps=tuple(steps)),
        raw_text=body,
        rejected_lines=tuple(rejected),
    )


def request_plan(prompt_text: str, backend, plan_id: str, image_ref: str | None = None) -> PlanResponse:
    """Send the rendered prompt to a backend and parse the reply."""
    body = backend.complete(prompt_text, image_ref)
    return parse_plan_response(body, plan_id)
