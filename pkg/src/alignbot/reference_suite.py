"""Built-in 20-scenario benchmark suite.

The suite is crafted so each configuration can only succeed on the
scenarios whose winning constraint actually reaches its prompt:

  * 8 scenarios hinge on a cue keyed on the task text alone (any cue
    generator gets these),
  * 6 hinge on a cue keyed on the scene too (only the image-aware cue
    path gets these),
  * 4 hinge on an ordering carried solely by a stored case (only the
    retrieval-enabled configuration gets these),
  * 2 approve any plan (every configuration gets these).

History records carry the same reminder phrasings inside raw dialogue,
so the raw-injection baseline can luck into the task-text scenarios when
its sample happens to include the matching record.
"""

from __future__ import annotations

from datetime import datetime, timezone

from .cues import MockRule, MockRuleSet
from .domain import (
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
    plan_from_lines,
)
from .harness import (
    PlannerRule,
    PlannerScript,
    ReminderRule,
    ScenarioScript,
    Suite,
    pred_all,
    pred_always,
    pred_has_step,
    pred_not,
    pred_step_order,
)
from .retrieval import CaseEntry

_EPOCH = datetime(2025, 1, 1, tzinfo=timezone.utc)
_IMAGE = "images/scene.png"


def _step(verb: str, *args: str) -> dict:
    spec = {"verb": verb}
    if args:
        spec["args"] = list(args)
    return spec


def _script(scenario_id, user, task, scene, approval, complaint=None) -> ScenarioScript:
    profile = ()
    if complaint:
        text, category = complaint
        profile = (
            ReminderRule(
                trigger=pred_not(approval), response_text=text, category=category
            ),
        )
    return ScenarioScript(
        scenario_id=scenario_id,
        user=user,
        task=task,
        scene_label=scene,
        reminder_profile=profile,
        approval_predicate=approval,
    )


def _history_record(rid, user, task, reminder, category, plan_lines) -> InteractionRecord:
    return InteractionRecord(
        record_id=rid,
        user=UserId(user),
        observation=Observation(image_ref=_IMAGE, captured_at=_EPOCH, scene_label="kitchen"),
        task=TaskDescription(task),
        dialogue=(
            DialogueTurn(
                speaker=Speaker.USER,
                content=reminder,
                timestamp=_EPOCH,
                reminder_category=category,
            ),
        ),
        plan=plan_from_lines(plan_lines, plan_id=f"plan-{rid}"),
        outcome=Outcome(kind=OutcomeKind.SUCCESS),
        created_at=_EPOCH,
    )


def _case(case_id, task, plan_lines) -> CaseEntry:
    return CaseEntry(
        case_id=case_id,
        plan=plan_from_lines(plan_lines, plan_id=f"plan-{case_id}"),
        task=TaskDescription(task),
        priority=0.5,
        usage_count=0,
        created_at=_EPOCH,
    )


# (task substring, cue text, category, plan lines the cue unlocks,
#  base plan, approval predicate, user complaint when it goes wrong)
_TEXT_CUE_ROWS = [
    (
        "a1", "user-A", "put the cups in the drawer",
        "Open the drawer before placing anything inside.",
        ReminderCategory.CORRECTIVE_GUIDANCE,
        ("open(drawer)",),
        ("grasp(cup)", "place(cup, drawer)"),
        pred_all(
            pred_has_step("open", "drawer"),
            pred_step_order(_step("open", "drawer"), _step("place", "cup", "drawer")),
        ),
        ("You must open the drawer first!", "corrective_guidance"),
    ),
    (
        "a2", "user-A", "store the leftovers in the fridge",
        "Open the fridge before storing the leftovers.",
        ReminderCategory.CORRECTIVE_GUIDANCE,
        ("open(fridge)",),
        ("grasp(leftovers)", "place(leftovers, fridge)"),
        pred_step_order(_step("open", "fridge"), _step("place", "leftovers", "fridge")),
        ("The fridge is still closed!", "corrective_guidance"),
    ),
    (
        "a3", "user-B", "put the medicine in the cabinet",
        "Open the cabinet before putting the medicine away.",
        ReminderCategory.CORRECTIVE_GUIDANCE,
        ("open(cabinet)",),
        ("grasp(medicine)", "place(medicine, cabinet)"),
        pred_step_order(_step("open", "cabinet"), _step("place", "medicine", "cabinet")),
        ("Open the cabinet door before that.", "corrective_guidance"),
    ),
    (
        "a4", "user-B", "heat the soup in the microwave",
        "Open the microwave before putting the soup inside.",
        ReminderCategory.CORRECTIVE_GUIDANCE,
        ("open(microwave)",),
        ("grasp(soup)", "place(soup, microwave)", "turn_on(microwave)"),
        pred_all(
            pred_step_order(_step("open", "microwave"), _step("place", "soup", "microwave")),
            pred_has_step("turn_on", "microwave"),
        ),
        ("The microwave door is shut.", "corrective_guidance"),
    ),
    (
        "a5", "user-A", "water the plant",
        "Grasp the watering can before pouring.",
        ReminderCategory.CORRECTIVE_GUIDANCE,
        ("grasp(watering_can)",),
        ("pour(watering_can, plant)",),
        pred_step_order(_step("grasp", "watering_can"), _step("pour", "watering_can", "plant")),
        ("Pick up the watering can first.", "corrective_guidance"),
    ),
    (
        "a6", "user-B", "serve juice to Bob",
        "Bob only drinks the sugar-free juice.",
        ReminderCategory.PERSONALIZED_PREFERENCE,
        ("pour(sugarfree_juice, glass)",),
        ("pour(juice, glass)",),
        pred_has_step("pour", "sugarfree_juice", "glass"),
        ("Bob needs the sugar-free one.", "personalized_preference"),
    ),
    (
        "a7", "user-A", "tidy the toys into the box",
        "Place the teddy bear in the box first.",
        ReminderCategory.PERSONALIZED_PREFERENCE,
        ("grasp(teddy_bear)", "place(teddy_bear, box)"),
        ("grasp(blocks)", "place(blocks, box)"),
        pred_step_order(_step("place", "teddy_bear", "box"), _step("place", "blocks", "box")),
        ("The teddy bear goes in first.", "personalized_preference"),
    ),
    (
        "a8", "user-B", "set the table for dinner",
        "Wipe the table before setting it.",
        ReminderCategory.CORRECTIVE_GUIDANCE,
        ("wipe(table)",),
        ("grasp(plate)", "place(plate, table)"),
        pred_step_order(_step("wipe", "table"), _step("place", "plate", "table")),
        ("The table is dirty, wipe it down.", "corrective_guidance"),
    ),
]

# Scene-keyed rows: the cue only fires when the backend can see the scene.
_IMAGE_CUE_ROWS = [
    (
        "b1", "user-A", "put the milk away", "kitchen",
        "The fridge door is closed, open the fridge first.",
        ReminderCategory.CONTEXTUAL_ASSISTANCE,
        ("open(fridge)",),
        ("grasp(milk)", "place(milk, fridge)"),
        pred_step_order(_step("open", "fridge"), _step("place", "milk", "fridge")),
    ),
    (
        "b2", "user-B", "chill the soda", "kitchen",
        "The cooler is behind you, move to the cooler first.",
        ReminderCategory.CONTEXTUAL_ASSISTANCE,
        ("move_to(cooler)",),
        ("grasp(soda)", "place(soda, cooler)"),
        pred_step_order(_step("move_to", "cooler"), _step("place", "soda", "cooler")),
    ),
    (
        "b3", "user-A", "stack the magazines", "living room",
        "The coffee table is cluttered, wipe the coffee_table first.",
        ReminderCategory.CONTEXTUAL_ASSISTANCE,
        ("wipe(coffee_table)",),
        ("grasp(magazines)", "place(magazines, coffee_table)"),
        pred_step_order(
            _step("wipe", "coffee_table"), _step("place", "magazines", "coffee_table")
        ),
    ),
    (
        "b4", "user-B", "plug in the kettle", "kitchen",
        "The outlet is off, turn_on the outlet first.",
        ReminderCategory.CONTEXTUAL_ASSISTANCE,
        ("turn_on(outlet)",),
        ("move_to(kettle)", "turn_on(kettle)"),
        pred_step_order(_step("turn_on", "outlet"), _step("turn_on", "kettle")),
    ),
    (
        "b5", "user-A", "put away the board game", "living room",
        "Close the window before you start.",
        ReminderCategory.CONTEXTUAL_ASSISTANCE,
        ("close(window)",),
        ("grasp(board_game)", "place(board_game, shelf)"),
        pred_all(
            pred_has_step("close", "window"),
            pred_has_step("place", "board_game", "shelf"),
        ),
    ),
    (
        "b6", "user-B", "warm the bread", "kitchen",
        "The microwave is occupied, open the microwave and take the bowl out first.",
        ReminderCategory.CONTEXTUAL_ASSISTANCE,
        ("open(microwave)", "grasp(bowl)", "place(bowl, counter)"),
        ("grasp(bread)", "place(bread, microwave)", "turn_on(microwave)"),
        pred_step_order(_step("place", "bowl", "counter"), _step("place", "bread", "microwave")),
    ),
]

# Case rows: (scenario, user, task, case task, case plan, base plan,
# case line that unlocks extra steps, unlocked lines + position, approval)
_CASE_ROWS = [
    (
        "c1", "user-A", "serve tea on the tray",
        "serve coffee on the tray",
        ("wipe(tray)", "grasp(mug)", "place(mug, tray)"),
        ("grasp(teapot)", "place(teapot, tray)"),
        (("1. wipe(tray)", ("wipe(tray)",), "front"),),
        pred_step_order(_step("wipe", "tray"), _step("place", "teapot", "tray")),
    ),
    (
        "c2", "user-B", "stack the plates in the cabinet",
        "stack the bowls in the cabinet",
        ("open(cabinet)", "grasp(bowl)", "place(bowl, cabinet)", "close(cabinet)"),
        ("grasp(plate)", "place(plate, cabinet)"),
        (
            ("4. close(cabinet)", ("open(cabinet)",), "front"),
            ("4. close(cabinet)", ("close(cabinet)",), "back"),
        ),
        pred_all(
            pred_step_order(_step("open", "cabinet"), _step("place", "plate", "cabinet")),
            pred_step_order(_step("place", "plate", "cabinet"), _step("close", "cabinet")),
        ),
    ),
    (
        "c3", "user-A", "pack the lunchbox for school",
        "pack the lunchbox for work",
        ("open(lunchbox)", "grasp(sandwich)", "place(sandwich, lunchbox)", "close(lunchbox)"),
        ("grasp(sandwich)", "place(sandwich, lunchbox)"),
        (
            ("1. open(lunchbox)", ("open(lunchbox)",), "front"),
            ("4. close(lunchbox)", ("close(lunchbox)",), "back"),
        ),
        pred_all(
            pred_step_order(_step("open", "lunchbox"), _step("place", "sandwich", "lunchbox")),
            pred_step_order(_step("place", "sandwich", "lunchbox"), _step("close", "lunchbox")),
        ),
    ),
    (
        "c4", "user-B", "recycle the bottles",
        "recycle the cans",
        ("move_to(bin)", "grasp(can)", "place(can, bin)"),
        ("grasp(bottle)", "place(bottle, bin)"),
        (("1. move_to(bin)", ("move_to(bin)",), "front"),),
        pred_step_order(_step("move_to", "bin"), _step("place", "bottle", "bin")),
    ),
]

_FREEBIE_ROWS = [
    ("d1", "user-A", "wipe the kitchen counter", ("move_to(counter)", "wipe(counter)")),
    ("d2", "user-B", "turn off the reading lamp", ("move_to(lamp)", "turn_off(lamp)")),
]


def make_reference_suite() -> Suite:
    scripts: list[ScenarioScript] = []
    cue_rules: list[MockRule] = []
    base_plans: list[tuple[str, tuple[str, ...]]] = []
    planner_rules: list[PlannerRule] = []
    history: list[InteractionRecord] = []
    seed_cases: list[CaseEntry] = []

    for sid, user, task, cue_text, category, unlock, base, approval, complaint in _TEXT_CUE_ROWS:
        scripts.append(_script(sid, user, task, "kitchen", approval, complaint))
        cue_rules.append(
            MockRule(cues=(Cue(cue_text, category),), task_substring=task)
        )
        base_plans.append((task, base))
        # the first clause of the cue text is the phrase the planner honors
        trigger = cue_text.rstrip(".")
        planner_rules.append(PlannerRule(trigger=trigger, lines=unlock, position="front"))
        full = list(unlock) + [l for l in base if l not in unlock]
        history.append(
            _history_record(f"hist-{sid}", user, task, cue_text, category, full)
        )

    for sid, user, task, scene, cue_text, category, unlock, base, approval in _IMAGE_CUE_ROWS:
        scripts.append(_script(sid, user, task, scene, approval))
        cue_rules.append(
            MockRule(cues=(Cue(cue_text, category),), task_substring=task, scene_label=scene)
        )
        base_plans.append((task, base))
        planner_rules.append(
            PlannerRule(trigger=cue_text.rstrip("."), lines=unlock, position="front")
        )
        history.append(
            _history_record(f"hist-{sid}", user, task, cue_text, category, list(unlock) + list(base))
        )

    for sid, user, task, case_task, case_plan, base, unlocks, approval in _CASE_ROWS:
        scripts.append(_script(sid, user, task, "tabletop", approval))
        base_plans.append((task, base))
        seed_cases.append(_case(f"case-{sid}", case_task, case_plan))
        for trigger, lines, position in unlocks:
            planner_rules.append(PlannerRule(trigger=trigger, lines=lines, position=position))

    for sid, user, task, base in _FREEBIE_ROWS:
        scripts.append(_script(sid, user, task, "kitchen", pred_always()))
        base_plans.append((task, base))

    # two noise records to dilute raw sampling, mirroring unrelated chatter
    history.append(
        _history_record(
            "hist-noise-1", "user-A", "organize fruits into a bowl",
            "Bananas bruise easily, put them on top.",
            ReminderCategory.PERSONALIZED_PREFERENCE,
            ["grasp(banana)", "place(banana, bowl)"],
        )
    )
    history.append(
        _history_record(
            "hist-noise-2", "user-B", "dust the bookshelf",
            "Start from the top shelf.",
            ReminderCategory.PERSONALIZED_PREFERENCE,
            ["wipe(bookshelf)"],
        )
    )

    return Suite(
        scripts=tuple(scripts),
        cue_rules=MockRuleSet(rules=tuple(cue_rules)),
        planner=PlannerScript(base_plans=tuple(base_plans), rules=tuple(planner_rules)),
        history=tuple(history),
        seed_cases=tuple(seed_cases),
        known_objects=frozenset(),
    )
