import json

import pytest

from alignbot.cues import CueRequest, MockRule, MockRuleSet
from alignbot.domain import Cue, Observation, ReminderCategory, TaskDescription, UserId
from alignbot.harness import (
    BaselineConfig,
    BaselineName,
    EvalReport,
    HarnessError,
    PlannerRule,
    PlannerScript,
    ReminderRule,
    RulePlannerBackend,
    RunResult,
    ScenarioScript,
    ScriptedUser,
    Suite,
    alignbot_config,
    collect_cue_sets,
    eval_predicate,
    mean_rating,
    mechanical_rubric,
    pred_all,
    pred_always,
    pred_has_step,
    pred_never,
    pred_no_violations,
    pred_not,
    pred_step_order,
    rate_cues,
    raw_reminder,
    read_manual_ratings,
    render_table,
    run_benchmark,
    text_only_cues,
    vanilla_planner,
)
from alignbot.orchestrator import FeedbackKind, SessionState
from alignbot.reference_suite import make_reference_suite

from conftest import EPOCH, make_plan


class TestPredicates:
    def test_always_never(self):
        plan = make_plan(["wait()"])
        assert eval_predicate(pred_always(), plan)
        assert not eval_predicate(pred_never(), plan)

    def test_has_step_verb_only(self):
        plan = make_plan(["grasp(cup)", "place(cup, shelf)"])
        assert eval_predicate(pred_has_step("grasp"), plan)
        assert not eval_predicate(pred_has_step("pour"), plan)

    def test_has_step_with_args(self):
        plan = make_plan(["place(cup, shelf)"])
        assert eval_predicate(pred_has_step("place", "cup", "shelf"), plan)
        assert not eval_predicate(pred_has_step("place", "cup", "drawer"), plan)

    def test_step_order(self):
        plan = make_plan(["open(drawer)", "grasp(cup)", "place(cup, drawer)"])
        before = pred_step_order({"verb": "open"}, {"verb": "place"})
        after = pred_step_order({"verb": "place"}, {"verb": "open"})
        assert eval_predicate(before, plan)
        assert not eval_predicate(after, plan)

    def test_combinators(self):
        plan = make_plan(["grasp(cup)", "place(cup, shelf)"])
        assert eval_predicate(pred_all(pred_has_step("grasp"), pred_has_step("place")), plan)
        assert eval_predicate(pred_not(pred_has_step("pour")), plan)

    def test_no_violations(self):
        assert eval_predicate(pred_no_violations(), make_plan(["grasp(cup)", "place(cup, shelf)"]))
        assert not eval_predicate(pred_no_violations(), make_plan(["place(cup, shelf)"]))

    def test_unknown_kind(self):
        with pytest.raises(HarnessError):
            eval_predicate({"kind": "sometimes"}, make_plan(["wait()"]))

    def test_json_round_trip(self):
        spec = pred_all(
            pred_has_step("open", "drawer"),
            pred_step_order({"verb": "open"}, {"verb": "place"}),
        )
        assert json.loads(json.dumps(spec)) == spec


class TestBaselineConfig:
    def test_four_named_configs(self):
        assert vanilla_planner().name is BaselineName.VANILLA_PLANNER
        assert raw_reminder().raw_reminder_injection is True
        assert text_only_cues().cues_enabled and not text_only_cues().image_to_cue_backend
        ab = alignbot_config()
        assert ab.cues_enabled and ab.retrieval_enabled and ab.image_to_cue_backend

    def test_off_menu_flags_rejected(self):
        with pytest.raises(HarnessError):
            BaselineConfig(
                name=BaselineName.VANILLA_PLANNER,
                cues_enabled=True,
                retrieval_enabled=True,
                raw_reminder_injection=True,
                image_to_cue_backend=True,
            )

    def test_from_name(self):
        assert BaselineConfig.from_name("alignbot").name is BaselineName.ALIGNBOT
        with pytest.raises(HarnessError):
            BaselineConfig.from_name("mystery")


class TestScriptedUser:
    def _script(self, approval, profile=()):
        return ScenarioScript(
            scenario_id="t1",
            user="user-A",
            task="put the cups in the drawer",
            scene_label="kitchen",
            reminder_profile=profile,
            approval_predicate=approval,
        )

    def _state_with_plan(self, lines):
        state = SessionState(session_id="s", request=None)
        from alignbot.orchestrator import RoundRecord

        state.rounds.append(
            RoundRecord(
                round=1,
                prompt_text="",
                response_text="",
                plan=make_plan(lines),
                rejected_lines=(),
                violations=(),
                auto_repair=False,
                user_turns=(),
            )
        )
        return state

    def test_approves_when_predicate_passes(self):
        user = ScriptedUser(self._script(pred_has_step("wait")))
        action = user(self._state_with_plan(["wait()"]))
        assert action.kind is FeedbackKind.APPROVE

    def test_trigger_fires_once_in_order(self):
        profile = (
            ReminderRule(
                trigger=pred_not(pred_has_step("open")),
                response_text="Open it first.",
                category="corrective_guidance",
            ),
        )
        user = ScriptedUser(self._script(pred_never(), profile))
        state = self._state_with_plan(["grasp(cup)", "place(cup, shelf)"])
        first = user(state)
        assert first.kind is FeedbackKind.CORRECTIVE
        assert first.text == "Open it first."
        second = user(state)
        assert second.kind is FeedbackKind.CORRECTIVE
        assert second.text != "Open it first."  # generic fallback after firing


class TestRulePlanner:
    SCRIPT = PlannerScript(
        base_plans=(
            ("put the cups in the drawer", ("grasp(cup)", "place(cup, drawer)")),
            ("wipe the kitchen counter", ("move_to(counter)", "wipe(counter)")),
        ),
        rules=(
            PlannerRule(
                trigger="Open the drawer before placing", lines=("open(drawer)",), position="front"
            ),
            PlannerRule(trigger="close it afterwards", lines=("close(drawer)",), position="back"),
        ),
    )

    def _prompt(self, task, extra=""):
        return f"## Task\nuser-A wants a robot to {task}.\n\n## Observation\nimage: x{extra}"

    def test_base_plan_from_task_header(self):
        backend = RulePlannerBackend(self.SCRIPT)
        body = backend.complete(self._prompt("put the cups in the drawer"))
        assert body == "1. grasp(cup)\n2. place(cup, drawer)"

    def test_augment_front_and_back(self):
        backend = RulePlannerBackend(self.SCRIPT)
        body = backend.complete(
            self._prompt(
                "put the cups in the drawer",
                extra="\n\n## Cues\n- Open the drawer before placing items.\n- And close it afterwards.",
            )
        )
        assert body.splitlines()[0] == "1. open(drawer)"
        assert body.splitlines()[-1] == "4. close(drawer)"

    def test_other_tasks_in_raw_text_do_not_switch_base(self):
        backend = RulePlannerBackend(self.SCRIPT)
        body = backend.complete(
            self._prompt(
                "wipe the kitchen counter",
                extra="\n\n## Cues\nPast interaction (put the cups in the drawer):\nUser: hello",
            )
        )
        assert "wipe(counter)" in body
        assert "grasp(cup)" not in body

    def test_fallback_when_unknown_task(self):
        backend = RulePlannerBackend(self.SCRIPT)
        assert backend.complete(self._prompt("dance")) == "1. wait()"


def rating_request(task="put cups in the drawer", scene=None):
    return CueRequest(
        user=UserId("user-A"),
        task=TaskDescription(task),
        observation=Observation(image_ref="x.png", captured_at=EPOCH, scene_label=scene),
    )


class TestRating:
    def test_empty_set_scores_zero(self):
        assert rate_cues([(rating_request(), [])]) == [0]

    def test_drawer_example_scores_three(self):
        cue = Cue("Open the drawer first", ReminderCategory.CORRECTIVE_GUIDANCE, tagged=True)
        assert rate_cues([(rating_request(), [cue])]) == [3]

    def test_untagged_loses_a_point(self):
        cue = Cue("Open the drawer first", ReminderCategory.CONTEXTUAL_ASSISTANCE, tagged=False)
        assert rate_cues([(rating_request(), [cue])]) == [2]

    def test_ungrounded_loses_a_point(self):
        cue = Cue("Be careful.", ReminderCategory.CORRECTIVE_GUIDANCE, tagged=True)
        assert rate_cues([(rating_request(), [cue])]) == [2]

    def test_scene_token_counts_as_grounding(self):
        cue = Cue("Watch the kitchen floor.", ReminderCategory.CONTEXTUAL_ASSISTANCE, tagged=True)
        ratings = rate_cues([(rating_request(task="do something else", scene="kitchen"), [cue])])
        assert ratings == [3]

    def test_manual_ratings_override(self):
        sets = [(rating_request(), []), (rating_request(), []), (rating_request(), [])]
        ratings = rate_cues(sets, manual=[2, 3, 3])
        assert ratings == [2, 3, 3]
        assert mean_rating(ratings) == pytest.approx(2.667, abs=5e-4)

    def test_manual_count_mismatch(self):
        with pytest.raises(HarnessError):
            rate_cues([(rating_request(), [])], manual=[1, 2])

    def test_manual_range_checked(self):
        with pytest.raises(HarnessError):
            rate_cues([(rating_request(), [])], manual=[4])

    def test_read_manual_ratings(self, tmp_path):
        p = tmp_path / "r.json"
        p.write_text('{"ratings": [2, 3, 3]}')
        assert read_manual_ratings(p) == [2, 3, 3]
        p.write_text("[1, 0]")
        assert read_manual_ratings(p) == [1, 0]


def tiny_suite(approval):
    task = "put the cups in the drawer"
    return Suite(
        scripts=(
            ScenarioScript(
                scenario_id="only",
                user="user-A",
                task=task,
                scene_label="kitchen",
                reminder_profile=(),
                approval_predicate=approval,
            ),
        ),
        cue_rules=MockRuleSet(),
        planner=PlannerScript(base_plans=((task, ("grasp(cup)", "place(cup, drawer)")),)),
        history=(),
        seed_cases=(),
    )


class TestRunBenchmark:
    def test_always_approving_script_rate_one(self, tmp_path):
        report = run_benchmark(
            list(tiny_suite(pred_always()).scripts),
            vanilla_planner(),
            [1, 2],
            tiny_suite(pred_always()),
            tmp_path,
        )
        assert report.success_rate == 1.0
        assert report.runs == 2

    def test_never_approving_script_rate_zero(self, tmp_path):
        suite = tiny_suite(pred_never())
        report = run_benchmark(list(suite.scripts), vanilla_planner(), [1], suite, tmp_path)
        assert report.success_rate == 0.0
        assert report.per_run[0].status == "failed"
        assert report.per_run[0].rounds == 5

    def test_empty_scripts_rejected(self, tmp_path):
        suite = tiny_suite(pred_always())
        with pytest.raises(HarnessError):
            run_benchmark([], vanilla_planner(), [1], suite, tmp_path)

    def test_reproducible_reports_and_event_logs(self, tmp_path):
        suite = make_reference_suite()
        r1 = run_benchmark(list(suite.scripts), alignbot_config(), [3], suite, tmp_path / "w1")
        r2 = run_benchmark(list(suite.scripts), alignbot_config(), [3], suite, tmp_path / "w2")
        assert r1.to_json() == r2.to_json()
        log1 = (tmp_path / "w1" / "events-alignbot.jsonl").read_bytes()
        log2 = (tmp_path / "w2" / "events-alignbot.jsonl").read_bytes()
        assert log1 == log2
        assert log1  # not trivially empty

    def test_vanilla_prompts_have_no_cues_or_cases_sections(self, tmp_path):
        suite = make_reference_suite()
        run_benchmark(list(suite.scripts), vanilla_planner(), [1], suite, tmp_path)
        events = [
            json.loads(line)
            for line in (tmp_path / "events-vanilla.jsonl").read_text().splitlines()
        ]
        rounds = [e for e in events if e["type"] == "round"]
        assert rounds
        first_rounds = [e for e in rounds if e["round"] == 1]
        for ev in first_rounds:
            assert "## Cues" not in ev["prompt"]
            assert "## Cases" not in ev["prompt"]

    def test_raw_reminder_prompts_contain_transcripts(self, tmp_path):
        suite = make_reference_suite()
        run_benchmark(list(suite.scripts), raw_reminder(), [1], suite, tmp_path)
        events = [
            json.loads(line)
            for line in (tmp_path / "events-raw.jsonl").read_text().splitlines()
        ]
        prompts = [e["prompt"] for e in events if e["type"] == "round" and e["round"] == 1]
        assert any("Past interaction" in p for p in prompts)

    def test_ordering_on_single_seed(self, tmp_path):
        suite = make_reference_suite()
        rates = {}
        for config in (vanilla_planner(), raw_reminder(), text_only_cues(), alignbot_config()):
            report = run_benchmark(list(suite.scripts), config, [7], suite, tmp_path)
            rates[config.name.value] = report.success_rate
        assert rates["alignbot"] > rates["text-only"] > rates["raw"] >= rates["vanilla"]


class TestCueWiring:
    def test_text_only_backend_sees_no_scene(self):
        suite = make_reference_suite()
        scene_scripts = [s for s in suite.scripts if s.scenario_id.startswith("b")]
        masked = collect_cue_sets(scene_scripts, text_only_cues(), suite)
        full = collect_cue_sets(scene_scripts, alignbot_config(), suite)
        assert all(not cues for _req, cues in masked)
        assert all(cues for _req, cues in full)

    def test_blind_rating_inputs(self):
        suite = make_reference_suite()
        sets = collect_cue_sets(list(suite.scripts), alignbot_config(), suite)
        for req, cues in sets:
            assert isinstance(req, CueRequest)
            for cue in cues:
                assert not hasattr(cue, "generator")

    def test_alignbot_cues_outrate_text_only(self):
        suite = make_reference_suite()
        scripts = list(suite.scripts)
        align = mean_rating(rate_cues(collect_cue_sets(scripts, alignbot_config(), suite)))
        text = mean_rating(rate_cues(collect_cue_sets(scripts, text_only_cues(), suite)))
        assert align > text


class TestSuiteSerialization:
    def test_round_trip(self, tmp_path):
        suite = make_reference_suite()
        path = tmp_path / "suite.json"
        suite.save(path)
        loaded = Suite.load(path)
        assert loaded.scripts == suite.scripts
        assert loaded.cue_rules == suite.cue_rules
        assert loaded.planner == suite.planner
        assert loaded.seed_cases == suite.seed_cases
        assert len(loaded.history) == len(suite.history)


class TestReportRendering:
    def test_table_layout(self):
        reports = [
            EvalReport("vanilla", 20, 2, 0.10, ()),
            EvalReport("alignbot", 20, 20, 1.00, ()),
        ]
        table = render_table(reports)
        lines = table.splitlines()
        assert "Task Planning Method" in lines[0]
        assert any("10.00%" in l for l in lines)
        assert any("100.00%" in l for l in lines)

    def test_table_with_ratings(self):
        reports = [
            EvalReport("alignbot", 1, 1, 1.0, (), ratings=(3, 3), mean_rating=3.0),
        ]
        table = render_table(reports)
        assert "Average User Rating" in table

    def test_report_json_shape(self):
        report = EvalReport(
            "vanilla", 1, 0, 0.0, (RunResult("s1", 1, "failed", 5, False),)
        )
        data = json.loads(report.to_json())
        assert data["config"] == "vanilla"
        assert data["per_run"][0]["scenario_id"] == "s1"
