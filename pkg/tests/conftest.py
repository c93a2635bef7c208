import random
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

from alignbot.domain import (
    ActionPlan,
    DialogueTurn,
    InteractionRecord,
    Observation,
    Outcome,
    OutcomeKind,
    ReminderCategory,
    Speaker,
    TaskDescription,
    UserId,
    parse_action_step,
)

EPOCH = datetime(2025, 1, 1, tzinfo=timezone.utc)

_TASKS = [
    "put the apple in the bowl",
    "put cups in the drawer",
    "open the fridge door",
    "pour water into the glass",
    "wipe the table",
    "turn on the lamp",
    "place the plate on the shelf",
    "close the cabinet",
    "move to the kitchen",
    "organize fruits into a bowl",
]

_PLANS = [
    ["grasp(apple)", "place(apple, bowl)"],
    ["open(drawer)", "grasp(cup)", "place(cup, drawer)", "close(drawer)"],
    ["move_to(fridge)", "open(fridge)"],
    ["grasp(bottle)", "pour(bottle, glass)", "place(bottle, table)"],
    ["grasp(cloth)", "wipe(table)", "place(cloth, sink)"],
    ["move_to(lamp)", "turn_on(lamp)"],
]

_REMINDERS = [
    ("Only use the sugar-free drinks for Bob.", ReminderCategory.PERSONALIZED_PREFERENCE),
    ("You forgot to open the drawer first.", ReminderCategory.CORRECTIVE_GUIDANCE),
    ("The blue bottle is household cleaner, handle it carefully.", ReminderCategory.CONTEXTUAL_ASSISTANCE),
    ("Always close the fridge when you are done.", ReminderCategory.CORRECTIVE_GUIDANCE),
]


def make_plan(lines, plan_id="p-1"):
    return ActionPlan(plan_id=plan_id, steps=tuple(parse_action_step(l) for l in lines))


def synthesize_record(rng: random.Random, i: int, image_ref: str) -> InteractionRecord:
    """Seeded synthetic record; same rng sequence, same record."""
    task = rng.choice(_TASKS)
    user = UserId(rng.choice(["user-A", "user-B", "user-C"]))
    created = EPOCH + timedelta(seconds=i)
    dialogue = []
    n_reminders = rng.choice([0, 0, 1, 2])
    for j in range(n_reminders):
        text, cat = rng.choice(_REMINDERS)
        dialogue.append(
            DialogueTurn(
                speaker=Speaker.USER,
                content=text,
                timestamp=created + timedelta(seconds=j),
                reminder_category=cat,
            )
        )
    if rng.random() < 0.3:
        dialogue.append(
            DialogueTurn(
                speaker=Speaker.SYSTEM,
                content="Here is the revised plan.",
                timestamp=created + timedelta(seconds=5),
            )
        )
    outcome = Outcome(kind=rng.choice(list(OutcomeKind)))
    return InteractionRecord(
        record_id=f"rec-{i:05d}",
        user=user,
        observation=Observation(image_ref=image_ref, captured_at=created, scene_label="kitchen"),
        task=TaskDescription(task),
        dialogue=tuple(dialogue),
        plan=make_plan(rng.choice(_PLANS), plan_id=f"plan-{i:05d}"),
        outcome=outcome,
        created_at=created,
    )


@pytest.fixture
def image_file(tmp_path: Path) -> str:
    p = tmp_path / "scene.png"
    p.write_bytes(b"\x89PNG\r\n\x1a\nfake")
    return str(p)


@pytest.fixture
def store_root(tmp_path: Path) -> Path:
    return tmp_path / "store"
