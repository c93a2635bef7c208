"""Desk-scale benchmark harness.

Mechanizes the volunteer protocol: scripted users (triggers supply
corrective turns, an approval predicate decides satisfaction), four
planner configurations wired through the same session engine, success
rates aggregated per configuration, and a 0-3 cue-quality rating path
with a mechanical rubric standing in for human raters (manual ratings
override it when supplied).

Real-model numbers are not reproducible at a desk; the harness checks
orderings and pipeline properties with scripted backends, and real
endpoints can be plugged in for field runs.

Everything is deterministic per seed: fixed-epoch clock, seed-derived
ids, fresh stores per (config, seed) run. Case admission from approved
sessions is held off during benchmarks so a run's early sessions never
contaminate its later ones.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, replace
from datetime import timedelta
from enum import Enum
from pathlib import Path

from .cues import CueRequest, MockCueBackend, MockRuleSet
from .domain import (
    ActionPlan,
    AlignBotError,
    Cue,
    InteractionRecord,
    Observation,
    TaskDescription,
    UserId,
    canonical_json,
    record_from_dict,
    record_to_dict,
)
from .orchestrator import (
    FeedbackKind,
    OrchestratorConfig,
    SessionEngine,
    SessionState,
    SessionStatus,
    UserAction,
    run_session,
)
from .retrieval import (
    CaseEntry,
    CaseStore,
    RetrievalConfig,
    case_from_dict,
    case_to_dict,
    tokenize,
)
from .store import InteractionStore

EPOCH_IMAGE = b"\x89PNG\r\n\x1a\n\x00benchmark-scene"
GENERIC_COMPLAINT = "That is not what I want, try again."


class HarnessError(AlignBotError):
    pass


# ---------------------------------------------------------------------------
# Plan predicates: a small declarative, JSON-serializable form so scripts
# can live in files yet evaluate on any ActionPlan.

def pred_always() -> dict:
    return {"kind": "always"}


def pred_never() -> dict:
    return {"kind": "never"}


def pred_has_step(verb: str, *args: str) -> dict:
    spec: dict = {"kind": "has_step", "verb": verb}
    if args:
        spec["args"] = list(args)
    return spec


def pred_step_order(first: dict, then: dict) -> dict:
    return {"kind": "step_order", "first": first, "then": then}


def pred_not(of: dict) -> dict:
    return {"kind": "not", "of": of}


def pred_all(*of: dict) -> dict:
    return {"kind": "all", "of": list(of)}


def pred_any(*of: dict) -> dict:
    return {"kind": "any", "of": list(of)}


def pred_no_violations() -> dict:
    return {"kind": "no_violations"}


def _step_matches(step, matcher: dict) -> bool:
    if step.verb != matcher["verb"]:
        return False
    if "args" in matcher and list(step.arguments) != list(matcher["args"]):
        return False
    return True


def eval_predicate(spec: dict, plan: ActionPlan) -> bool:
    kind = spec["kind"]
    if kind == "always":
        return True
    if kind == "never":
        return False
    if kind == "has_step":
        return any(_step_matches(s, spec) for s in plan.steps)
    if kind == "step_order":
        first_at = None
        for i, s in enumerate(plan.steps):
            if first_at is None and _step_matches(s, spec["first"]):
                first_at = i
            elif first_at is not None and _step_matches(s, spec["then"]):
                return True
        return False
    if kind == "no_violations":
        from .validation import validate_plan

        return validate_plan(plan).ok
    if kind == "not":
        return not eval_predicate(spec["of"], plan)
    if kind == "all":
        return all(eval_predicate(p, plan) for p in spec["of"])
    if kind == "any":
        return any(eval_predicate(p, plan) for p in spec["of"])
    raise HarnessError(f"unknown predicate kind {kind!r}")


# ---------------------------------------------------------------------------
# Scenario scripts and the scripted user

@dataclass(frozen=True)
class ReminderRule:
    trigger: dict  # plan predicate: fire when true on the surfaced plan
    response_text: str
    category: str  # ReminderCategory value


@dataclass(frozen=True)
class ScenarioScript:
    scenario_id: str
    user: str
    task: str
    scene_label: str | None
    reminder_profile: tuple[ReminderRule, ...]
    approval_predicate: dict
    image_ref: str = "images/scene.png"

    def request(self, captured_at) -> CueRequest:
        return CueRequest(
            user=UserId(self.user),
            task=TaskDescription(self.task),
            observation=Observation(
                image_ref=self.image_ref, captured_at=captured_at, scene_label=self.scene_label
            ),
        )


class ScriptedUser:
    """Volunteer stand-in: approves when the predicate passes, otherwise
    replies with the first not-yet-used trigger that fires (triggers are
    evaluated in order, at most one per round), falling back to a generic
    complaint."""

    def __init__(self, script: ScenarioScript):
        self.script = script
        self._fired: set[int] = set()

    def __call__(self, state: SessionState) -> UserAction:
        plan = state.latest_plan
        assert plan is not None
        if eval_predicate(self.script.approval_predicate, plan):
            return UserAction(FeedbackKind.APPROVE)
        for idx, rule in enumerate(self.script.reminder_profile):
            if idx in self._fired:
                continue
            if eval_predicate(rule.trigger, plan):
                self._fired.add(idx)
                from .domain import ReminderCategory

                return UserAction(
                    FeedbackKind.CORRECTIVE,
                    text=rule.response_text,
                    category=ReminderCategory.parse(rule.category),
                )
        return UserAction(FeedbackKind.CORRECTIVE, text=GENERIC_COMPLAINT)


# ---------------------------------------------------------------------------
# Prompt-sensitive mock planner: plan quality depends on what made it into
# the prompt, which is the entire point of the pipeline under test.

@dataclass(frozen=True)
class PlannerRule:
    trigger: str  # substring of the rendered prompt
    lines: tuple[str, ...]  # canonical action lines to ensure
    position: str = "front"  # front | back


@dataclass(frozen=True)
class PlannerScript:
    base_plans: tuple[tuple[str, tuple[str, ...]], ...]  # (task substring, lines)
    rules: tuple[PlannerRule, ...] = ()
    fallback: tuple[str, ...] = ("wait()",)


def planner_script_to_dict(script: PlannerScript) -> dict:
    return {
        "base_plans": [
            {"task_substring": sub, "lines": list(lines)} for sub, lines in script.base_plans
        ],
        "rules": [
            {"trigger": r.trigger, "lines": list(r.lines), "position": r.position}
            for r in script.rules
        ],
        "fallback": list(script.fallback),
    }


def planner_script_from_dict(data: dict) -> PlannerScript:
    return PlannerScript(
        base_plans=tuple(
            (b["task_substring"], tuple(b["lines"])) for b in data.get("base_plans", ())
        ),
        rules=tuple(
            PlannerRule(
                trigger=r["trigger"], lines=tuple(r["lines"]), position=r.get("position", "front")
            )
            for r in data.get("rules", ())
        ),
        fallback=tuple(data.get("fallback", ("wait()",))),
    )


class RulePlannerBackend:
    """Deterministic text function: base plan keyed on the task header
    region only (raw transcripts elsewhere in the prompt mention other
    tasks), then every rule whose trigger phrase appears anywhere in the
    prompt splices its missing lines in."""

    def __init__(self, script: PlannerScript):
        self.script = script

    @staticmethod
    def _task_region(prompt: str) -> str:
        marker = "## Task\n"
        start = prompt.find(marker)
        if start == -1:
            return prompt.split("\n\n", 1)[0]
        start += len(marker)
        end = prompt.find("\n\n", start)
        return prompt[start:] if end == -1 else prompt[start:end]

    def complete(self, prompt: str, image_ref: str | None = None) -> str:
        task_region = self._task_region(prompt)
        lines: list[str] | None = None
        for substring, base in self.script.base_plans:
            if substring in task_region:
                lines = list(base)
                break
        if lines is None:
            lines = list(self.script.fallback)
        for rule in self.script.rules:
            if rule.trigger in prompt:
                missing = [l for l in rule.lines if l not in lines]
                if missing:
                    if rule.position == "front":
                        lines = missing + lines
                    else:
                        lines = lines + missing
        return "\n".join(f"{i}. {line}" for i, line in enumerate(lines, 1))


# ---------------------------------------------------------------------------
# Baseline configurations: exactly four constructible wirings.

class BaselineName(Enum):
    VANILLA_PLANNER = "vanilla"
    RAW_REMINDER = "raw"
    TEXT_ONLY_CUES = "text-only"
    ALIGNBOT = "alignbot"


_BASELINE_FLAGS = {
    BaselineName.VANILLA_PLANNER: (False, False, False, False),
    BaselineName.RAW_REMINDER: (False, False, True, False),
    BaselineName.TEXT_ONLY_CUES: (True, False, False, False),
    BaselineName.ALIGNBOT: (True, True, False, True),
}


@dataclass(frozen=True)
class BaselineConfig:
    name: BaselineName
    cues_enabled: bool
    retrieval_enabled: bool
    raw_reminder_injection: bool
    image_to_cue_backend: bool

    def __post_init__(self) -> None:
        expected = _BASELINE_FLAGS[self.name]
        got = (
            self.cues_enabled,
            self.retrieval_enabled,
            self.raw_reminder_injection,
            self.image_to_cue_backend,
        )
        if got != expected:
            raise HarnessError(f"{self.name.value} flags must be {expected}, got {got}")

    @classmethod
    def of(cls, name: BaselineName) -> "BaselineConfig":
        flags = _BASELINE_FLAGS[name]
        return cls(name, *flags)

    @classmethod
    def from_name(cls, name: str) -> "BaselineConfig":
        try:
            return cls.of(BaselineName(name))
        except ValueError:
            valid = ", ".join(n.value for n in BaselineName)
            raise HarnessError(f"unknown config {name!r} (expected one of: {valid})") from None


def vanilla_planner() -> BaselineConfig:
    return BaselineConfig.of(BaselineName.VANILLA_PLANNER)


def raw_reminder() -> BaselineConfig:
    return BaselineConfig.of(BaselineName.RAW_REMINDER)


def text_only_cues() -> BaselineConfig:
    return BaselineConfig.of(BaselineName.TEXT_ONLY_CUES)


def alignbot_config() -> BaselineConfig:
    return BaselineConfig.of(BaselineName.ALIGNBOT)


# ---------------------------------------------------------------------------
# Suite: scripts plus the fixture world they run against.

@dataclass(frozen=True)
class Suite:
    scripts: tuple[ScenarioScript, ...]
    cue_rules: MockRuleSet
    planner: PlannerScript
    history: tuple[InteractionRecord, ...]
    seed_cases: tuple[CaseEntry, ...]
    known_objects: frozenset[str] = frozenset()
    image_rel_path: str = "images/scene.png"
    image_bytes: bytes = EPOCH_IMAGE

    def to_dict(self) -> dict:
        return {
            "scripts": [
                {
                    "scenario_id": s.scenario_id,
                    "user": s.user,
                    "task": s.task,
                    "scene_label": s.scene_label,
                    "image_ref": s.image_ref,
                    "reminder_profile": [
                        {
                            "trigger": r.trigger,
                            "response_text": r.response_text,
                            "category": r.category,
                        }
                        for r in s.reminder_profile
                    ],
                    "approval_predicate": s.approval_predicate,
                }
                for s in self.scripts
            ],
            "cue_rules": self.cue_rules.to_dict(),
            "planner": planner_script_to_dict(self.planner),
            "history": [record_to_dict(r) for r in self.history],
            "seed_cases": [case_to_dict(c) for c in self.seed_cases],
            "known_objects": sorted(self.known_objects),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Suite":
        scripts = tuple(
            ScenarioScript(
                scenario_id=s["scenario_id"],
                user=s["user"],
                task=s["task"],
                scene_label=s.get("scene_label"),
                image_ref=s.get("image_ref", "images/scene.png"),
                reminder_profile=tuple(
                    ReminderRule(
                        trigger=r["trigger"],
                        response_text=r["response_text"],
                        category=r["category"],
                    )
                    for r in s["reminder_profile"]
                ),
                approval_predicate=s["approval_predicate"],
            )
            for s in data["scripts"]
        )
        planner = planner_script_from_dict(data["planner"])
        return cls(
            scripts=scripts,
            cue_rules=MockRuleSet.from_dict(data["cue_rules"]),
            planner=planner,
            history=tuple(record_from_dict(r) for r in data["history"]),
            seed_cases=tuple(case_from_dict(c) for c in data["seed_cases"]),
            known_objects=frozenset(data.get("known_objects", ())),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Suite":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# Benchmark runner

@dataclass(frozen=True)
class RunResult:
    scenario_id: str
    seed: int
    status: str
    rounds: int
    success: bool


@dataclass(frozen=True)
class EvalReport:
    config_name: str
    runs: int
    successes: int
    success_rate: float
    per_run: tuple[RunResult, ...]
    ratings: tuple[int, ...] = ()
    mean_rating: float | None = None

    def to_dict(self) -> dict:
        data = {
            "config": self.config_name,
            "runs": self.runs,
            "successes": self.successes,
            "success_rate": self.success_rate,
            "per_run": [
                {
                    "scenario_id": r.scenario_id,
                    "seed": r.seed,
                    "status": r.status,
                    "rounds": r.rounds,
                    "success": r.success,
                }
                for r in self.per_run
            ],
        }
        if self.ratings:
            data["ratings"] = list(self.ratings)
            data["mean_rating"] = self.mean_rating
        return data

    def to_json(self) -> str:
        return canonical_json(self.to_dict())


class _TickClock:
    def __init__(self, start):
        self.now = start

    def __call__(self):
        self.now = self.now + timedelta(seconds=1)
        return self.now


class _ScopedIds:
    def __init__(self, scope: str):
        self.scope = scope
        self.counters: dict[str, int] = {}

    def __call__(self, kind: str) -> str:
        n = self.counters.get(kind, 0) + 1
        self.counters[kind] = n
        return f"{kind}-{self.scope}-{n:04d}"


def _materialize_world(run_dir: Path, suite: Suite, seed: int) -> tuple[InteractionStore, CaseStore]:
    store = InteractionStore(run_dir / "store")
    (store.root / suite.image_rel_path).parent.mkdir(parents=True, exist_ok=True)
    (store.root / suite.image_rel_path).write_bytes(suite.image_bytes)
    for rec in suite.history:
        store.append_record(rec)
    case_store = CaseStore(run_dir / "cases.jsonl", seed=seed)
    for case in suite.seed_cases:
        case_store.add_case(
            case.plan,
            case.task,
            RetrievalConfig(f0=case.priority),
            created_at=case.created_at,
            case_id=case.case_id,
        )
    return store, case_store


def run_benchmark(
    scripts: list[ScenarioScript],
    config: BaselineConfig,
    seeds: list[int],
    suite: Suite,
    workdir: str | Path,
    retrieval_cfg: RetrievalConfig | None = None,
    max_rounds: int = 5,
) -> EvalReport:
    """Run every (script, seed) pair under one configuration.

    Per-run session errors count as failed runs, they never abort the
    harness. The event log at <workdir>/events-<config>.jsonl and the
    returned report are byte-stable for identical inputs.
    """
    if not scripts:
        raise HarnessError("scripts must be non-empty")
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    base_retrieval = retrieval_cfg or RetrievalConfig()

    from .domain import parse_timestamp

    epoch = parse_timestamp("2025-01-01T00:00:00Z")

    results: list[RunResult] = []
    event_lines: list[str] = []
    for seed in seeds:
        run_dir = workdir / f"run-{config.name.value}-{seed}"
        store, case_store = _materialize_world(run_dir, suite, seed)
        clock = _TickClock(epoch)
        retrieval = replace(base_retrieval, rng_seed=seed)
        for idx, script in enumerate(scripts):
            orch_cfg = OrchestratorConfig(
                max_rounds=max_rounds,
                known_objects=suite.known_objects,
                add_case_on_success=False,  # held fixed: no cross-script contamination
                cues_enabled=config.cues_enabled,
                retrieval_enabled=config.retrieval_enabled,
                raw_reminder_injection=config.raw_reminder_injection,
                image_to_cue_backend=config.image_to_cue_backend,
            )
            engine = SessionEngine(
                cue_backend=MockCueBackend(suite.cue_rules),
                planner_backend=RulePlannerBackend(suite.planner),
                case_store=case_store,
                interaction_store=store,
                retrieval_cfg=retrieval,
                orch_cfg=orch_cfg,
                clock=clock,
                id_factory=_ScopedIds(f"{script.scenario_id}-s{seed}"),
                event_sink=lambda ev: event_lines.append(canonical_json(ev)),
                raw_rng=random.Random(seed * 100_003 + idx),
            )
            try:
                state = run_session(script.request(epoch), engine, ScriptedUser(script))
                results.append(
                    RunResult(
                        scenario_id=script.scenario_id,
                        seed=seed,
                        status=state.status.value,
                        rounds=len(state.rounds),
                        success=state.status is SessionStatus.APPROVED,
                    )
                )
            except AlignBotError as exc:
                event_lines.append(
                    canonical_json(
                        {
                            "type": "run_error",
                            "scenario_id": script.scenario_id,
                            "seed": seed,
                            "error": str(exc),
                        }
                    )
                )
                results.append(
                    RunResult(
                        scenario_id=script.scenario_id,
                        seed=seed,
                        status="error",
                        rounds=0,
                        success=False,
                    )
                )

    log_path = workdir / f"events-{config.name.value}.jsonl"
    log_path.write_text("".join(line + "\n" for line in event_lines), encoding="utf-8")

    successes = sum(1 for r in results if r.success)
    return EvalReport(
        config_name=config.name.value,
        runs=len(results),
        successes=successes,
        success_rate=successes / len(results),
        per_run=tuple(results),
    )


def run_all_baselines(
    suite: Suite, seeds: list[int], workdir: str | Path, **kwargs
) -> dict[str, EvalReport]:
    return {
        name.value: run_benchmark(
            list(suite.scripts), BaselineConfig.of(name), seeds, suite, workdir, **kwargs
        )
        for name in BaselineName
    }


def render_table(reports: list[EvalReport]) -> str:
    """Aligned two-column text table, one row per configuration."""
    name_width = max(len("Task Planning Method"), *(len(r.config_name) for r in reports))
    lines = [
        f"{'Task Planning Method':<{name_width}}  {'Average Success Rate':>20}",
        f"{'-' * name_width}  {'-' * 20}",
    ]
    for report in reports:
        pct = f"{report.success_rate * 100:.2f}%"
        lines.append(f"{report.config_name:<{name_width}}  {pct:>20}")
    rated = [r for r in reports if r.mean_rating is not None]
    if rated:
        lines.append("")
        lines.append(f"{'Cue Generator':<{name_width}}  {'Average User Rating':>20}")
        lines.append(f"{'-' * name_width}  {'-' * 20}")
        for report in rated:
            lines.append(f"{report.config_name:<{name_width}}  {report.mean_rating:>20.2f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Cue-quality rating: blind inputs (request + cues only), 0-3 scale.

def mechanical_rubric(request: CueRequest, cues: list[Cue]) -> int:
    """Explicitly labeled stand-in for the human 0-3 scale: one point each
    for a non-empty cue set, explicit category tags throughout, and at
    least one cue grounded in a task or scene token."""
    if not cues:
        return 0
    score = 1
    if all(c.tagged for c in cues):
        score += 1
    grounding = set(tokenize(request.task.text))
    if request.observation.scene_label:
        grounding |= set(tokenize(request.observation.scene_label))
    if any(set(tokenize(c.text)) & grounding for c in cues):
        score += 1
    return score


def rate_cues(
    cue_sets: list[tuple[CueRequest, list[Cue]]],
    rubric=mechanical_rubric,
    manual: list[int] | None = None,
) -> list[int]:
    """Rate each cue set 0-3. Manual ratings, when given, override the
    rubric one-for-one and must cover every set."""
    if manual is not None:
        if len(manual) != len(cue_sets):
            raise HarnessError(
                f"manual ratings count {len(manual)} != cue sets {len(cue_sets)}"
            )
        for value in manual:
            if value not in (0, 1, 2, 3):
                raise HarnessError(f"rating {value!r} outside 0-3")
        return list(manual)
    return [rubric(request, cues) for request, cues in cue_sets]


def mean_rating(ratings: list[int]) -> float:
    if not ratings:
        return 0.0
    return sum(ratings) / len(ratings)


def read_manual_ratings(path: str | Path) -> list[int]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict):
        data = data["ratings"]
    return [int(v) for v in data]


def collect_cue_sets(
    scripts: list[ScenarioScript], config: BaselineConfig, suite: Suite
) -> list[tuple[CueRequest, list[Cue]]]:
    """Generate the cue sets a configuration would inject, stripped of any
    generator identity, for blind rating."""
    from .orchestrator import _mask_observation
    from .domain import parse_timestamp

    epoch = parse_timestamp("2025-01-01T00:00:00Z")
    backend = MockCueBackend(suite.cue_rules)
    out: list[tuple[CueRequest, list[Cue]]] = []
    for script in scripts:
        req = script.request(epoch)
        if not config.cues_enabled:
            out.append((req, []))
            continue
        cue_req = req if config.image_to_cue_backend else _mask_observation(req)
        out.append((req, backend.generate_cues(cue_req)))
    return out


def write_cue_sets(path: str | Path, cue_sets: list[tuple[CueRequest, list[Cue]]]) -> None:
    lines = []
    for req, cues in cue_sets:
        lines.append(
            canonical_json(
                {
                    "user": req.user.id,
                    "task": req.task.text,
                    "scene_label": req.observation.scene_label,
                    "cues": [
                        {"text": c.text, "category": c.category.value, "tagged": c.tagged}
                        for c in cues
                    ],
                }
            )
        )
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_cue_sets(path: str | Path) -> list[tuple[CueRequest, list[Cue]]]:
    from .domain import ReminderCategory, parse_timestamp

    epoch = parse_timestamp("2025-01-01T00:00:00Z")
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        data = json.loads(line)
        req = CueRequest(
            user=UserId(data["user"]),
            task=TaskDescription(data["task"]),
            observation=Observation(
                image_ref="images/scene.png",
                captured_at=epoch,
                scene_label=data.get("scene_label"),
            ),
        )
        cues = [
            Cue(
                text=c["text"],
                category=ReminderCategory.parse(c["category"]),
                tagged=c.get("tagged", True),
            )
            for c in data["cues"]
        ]
        out.append((req, cues))
    return out
