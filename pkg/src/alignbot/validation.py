"""Plan validation: precondition checks over the closed action vocabulary.

The validator simulates the plan step by step with a one-object gripper
and per-container open/closed state, flagging the classic long-horizon
slips: placing something that was never grasped, grasping with full
hands, stashing into a container that is still closed, and referencing
objects the scene does not know about.

A report, not an exception: planning errors are session content (they
feed the next round's prompt), not programming errors.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .domain import ActionPlan

DEFAULT_CLOSABLE_CONTAINERS = frozenset({"drawer", "fridge", "cabinet", "microwave"})


class Rule(Enum):
    GRASP_BEFORE_PLACE = "GraspBeforePlace"
    OPEN_BEFORE_ACCESS = "OpenBeforeAccess"
    DOUBLE_GRASP = "DoubleGrasp"
    UNKNOWN_OBJECT = "UnknownObject"


@dataclass(frozen=True)
class Violation:
    step_index: int  # 1-based, matching the canonical plan text
    rule: Rule
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_plan(
    plan: ActionPlan,
    known_objects: frozenset[str] | set[str] = frozenset(),
    closable_containers: frozenset[str] | set[str] = DEFAULT_CLOSABLE_CONTAINERS,
) -> ValidationReport:
    """Apply every rule to every step; all violations are reported, in step
    order. An empty known_objects set disables the UnknownObject rule."""
    violations: list[Violation] = []
    held: str | None = None
    open_containers: set[str] = set()

    def container_ok(name: str) -> bool:
        return name not in closable_containers or name in open_containers

    for idx, step in enumerate(plan.steps, 1):
        if known_objects:
            for arg in step.arguments:
                if arg not in known_objects:
                    violations.append(
                        Violation(idx, Rule.UNKNOWN_OBJECT, f"unknown object '{arg}'")
                    )

        if step.verb == "grasp":
            obj = step.arguments[0]
            if held is not None:
                violations.append(
                    Violation(
                        idx,
                        Rule.DOUBLE_GRASP,
                        f"grasp({obj}) while still holding '{held}'",
                    )
                )
            held = obj
        elif step.verb == "place":
            obj, dest = step.arguments
            if held != obj:
                violations.append(
                    Violation(
                        idx,
                        Rule.GRASP_BEFORE_PLACE,
                        f"place({obj}, {dest}) without holding '{obj}'",
                    )
                )
            if not container_ok(dest):
                violations.append(
                    Violation(
                        idx,
                        Rule.OPEN_BEFORE_ACCESS,
                        f"place into '{dest}' while it is closed",
                    )
                )
            if held == obj:
                held = None
        elif step.verb == "pour":
            _src, dest = step.arguments
            if not container_ok(dest):
                violations.append(
                    Violation(
                        idx,
                        Rule.OPEN_BEFORE_ACCESS,
                        f"pour into '{dest}' while it is closed",
                    )
                )
        elif step.verb == "open":
            open_containers.add(step.arguments[0])
        elif step.verb == "close":
            open_containers.discard(step.arguments[0])

    return ValidationReport(violations=tuple(violations))
