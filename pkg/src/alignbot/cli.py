"""Command-line interface.

Exit codes: 0 success, 1 domain error, 2 usage error. Sessions started
here are persisted under the configured sessions directory so feedback
can continue across invocations; the session logic itself is the same
engine the HTTP service drives.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import ENV_CONFIG, load_config
from .domain import (
    AlignBotError,
    OutcomeKind,
    ReminderCategory,
    UserId,
    canonical_json,
    record_from_dict,
    record_to_dict,
)
from .harness import (
    BaselineConfig,
    Suite,
    mean_rating,
    rate_cues,
    read_cue_sets,
    read_manual_ratings,
    render_table,
    run_benchmark,
)
from .orchestrator import (
    FeedbackKind,
    UserAction,
    state_from_dict,
    state_to_dict,
)
from .retrieval import case_to_dict
from .runtime import build_runtime
from .store import read_grounding_dataset


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alignbot",
        description="Retrieval-augmented, human-in-the-loop task planning.",
    )
    parser.add_argument(
        "--config",
        help=f"service config file (TOML); defaults to ${ENV_CONFIG} when set",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("serve", help="run the HTTP service")

    session = sub.add_parser("session", help="start or continue a planning session")
    session_sub = session.add_subparsers(dest="session_command", required=True)
    start = session_sub.add_parser("start")
    start.add_argument("--user", required=True)
    start.add_argument("--task", required=True)
    start.add_argument("--image", required=True, help="observation image path or URL")
    start.add_argument("--scene", help="optional scene label")
    feedback = session_sub.add_parser("feedback")
    feedback.add_argument("session_id")
    group = feedback.add_mutually_exclusive_group(required=True)
    group.add_argument("--approve", action="store_true")
    group.add_argument("--abandon", action="store_true")
    group.add_argument("--text", help="corrective reminder text")
    feedback.add_argument(
        "--category",
        choices=[c.value for c in ReminderCategory],
        help="reminder category for corrective text",
    )
    show = session_sub.add_parser("show")
    show.add_argument("session_id")

    store = sub.add_parser("store", help="inspect or extend the interaction history")
    store_sub = store.add_subparsers(dest="store_command", required=True)
    append = store_sub.add_parser("append")
    append.add_argument("--file", required=True, help="record JSON file")
    query = store_sub.add_parser("query")
    query.add_argument("--user")
    query.add_argument("--outcome", choices=[k.value for k in OutcomeKind])
    query.add_argument("--task-contains")
    export = store_sub.add_parser("export")
    export.add_argument("--dataset", required=True, choices=["cues", "grounding"])
    export.add_argument("--out", required=True)
    export.add_argument("--annotations", help="annotations file for the grounding dataset")

    cases = sub.add_parser("cases", help="inspect the case pool")
    cases_sub = cases.add_subparsers(dest="cases_command", required=True)
    cases_sub.add_parser("list")

    eval_cmd = sub.add_parser("eval", help="benchmark configurations or rate cues")
    eval_sub = eval_cmd.add_subparsers(dest="eval_command", required=True)
    run = eval_sub.add_parser("run")
    run.add_argument(
        "--config",
        dest="baseline",
        required=True,
        choices=["vanilla", "raw", "text-only", "alignbot"],
        help="planner configuration to benchmark",
    )
    run.add_argument("--scripts", default="reference", help="suite file, or 'reference'")
    run.add_argument("--seeds", default="0", help="comma-separated seed list")
    run.add_argument("--workdir", default="alignbot-eval")
    run.add_argument("--out", help="write the report JSON here")
    run.add_argument("--tau", type=float)
    run.add_argument("--epsilon", type=float)
    run.add_argument("--top-k", type=int, dest="top_k")
    run.add_argument("--seed", type=int, help="retrieval rng seed override")
    rate = eval_sub.add_parser("rate")
    rate.add_argument("--cues", required=True, help="cue sets file (one JSON object per line)")
    rate.add_argument("--manual", help="manual ratings file overriding the rubric")

    return parser


def _load_session(cfg, session_id):
    path = cfg.sessions_dir / f"{session_id}.json"
    if not path.exists():
        raise AlignBotError(f"no session {session_id!r} under {cfg.sessions_dir}")
    return state_from_dict(json.loads(path.read_text(encoding="utf-8")))


def _save_session(cfg, state) -> None:
    cfg.sessions_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.sessions_dir / f"{state.session_id}.json"
    path.write_text(json.dumps(state_to_dict(state), indent=2) + "\n", encoding="utf-8")


def _print_state(state) -> None:
    print(f"session: {state.session_id}")
    print(f"status: {state.status.value}")
    if state.cues:
        print("cues:")
        for cue in state.cues:
            print(f"  - [{cue.category.value}] {cue.text}")
    if state.selected_cases:
        print(f"cases: {', '.join(state.selected_cases)}")
    plan = state.latest_plan
    if plan is not None:
        print("plan:")
        for line in plan.to_text().splitlines():
            print(f"  {line}")
    for violation in state.latest_violations:
        print(f"  ! step {violation.step_index}: {violation.message}")


def _cmd_session(args, cfg) -> int:
    runtime = build_runtime(cfg)
    engine = runtime.new_engine()
    if args.session_command == "start":
        from .cues import CueRequest
        from .domain import Observation, TaskDescription, utc_now

        req = CueRequest(
            user=UserId(args.user),
            task=TaskDescription(args.task),
            observation=Observation(
                image_ref=args.image, captured_at=utc_now(), scene_label=args.scene
            ),
        )
        state = engine.start(req)
        _save_session(cfg, state)
        _print_state(state)
        return 0
    if args.session_command == "feedback":
        state = _load_session(cfg, args.session_id)
        if args.approve:
            action = UserAction(FeedbackKind.APPROVE)
        elif args.abandon:
            action = UserAction(FeedbackKind.ABANDON)
        else:
            category = ReminderCategory.parse(args.category) if args.category else None
            action = UserAction(FeedbackKind.CORRECTIVE, text=args.text, category=category)
        state = engine.feedback(state, action)
        _save_session(cfg, state)
        _print_state(state)
        return 0
    state = _load_session(cfg, args.session_id)
    _print_state(state)
    return 0


def _cmd_store(args, cfg) -> int:
    runtime = build_runtime(cfg)
    store = runtime.interaction_store
    if args.store_command == "append":
        data = json.loads(Path(args.file).read_text(encoding="utf-8"))
        record_id = store.append_record(record_from_dict(data))
        print(record_id)
        return 0
    if args.store_command == "query":
        records = store.query_records(
            user=UserId(args.user) if args.user else None,
            outcome=OutcomeKind.parse(args.outcome) if args.outcome else None,
            task_contains=args.task_contains,
        )
        for rec in records:
            print(canonical_json(record_to_dict(rec)))
        return 0
    # export
    if args.dataset == "cues":
        count = store.write_cue_dataset(args.out)
    else:
        annotations = read_grounding_dataset(args.annotations) if args.annotations else []
        count = store.export_grounding_dataset(args.out, annotations)
    print(f"wrote {count} entries to {args.out}")
    return 0


def _cmd_cases(args, cfg) -> int:
    runtime = build_runtime(cfg)
    for case in runtime.case_store.cases():
        print(canonical_json(case_to_dict(case)))
    return 0


def _cmd_eval(args, cfg) -> int:
    if args.eval_command == "rate":
        cue_sets = read_cue_sets(args.cues)
        manual = read_manual_ratings(args.manual) if args.manual else None
        ratings = rate_cues(cue_sets, manual=manual)
        for rating in ratings:
            print(rating)
        print(f"mean: {mean_rating(ratings):.3f}")
        return 0

    config = BaselineConfig.from_name(args.baseline)
    if args.scripts == "reference":
        from .reference_suite import make_reference_suite

        suite = make_reference_suite()
    else:
        suite = Suite.load(args.scripts)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    retrieval = cfg.retrieval
    overrides = {}
    if args.tau is not None:
        overrides["tau"] = args.tau
    if args.epsilon is not None:
        overrides["epsilon"] = args.epsilon
    if args.top_k is not None:
        overrides["k"] = args.top_k
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    if overrides:
        retrieval = replace(retrieval, **overrides)
    report = run_benchmark(
        list(suite.scripts), config, seeds, suite, args.workdir, retrieval_cfg=retrieval
    )
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    print(render_table([report]))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "serve":
            from .service import serve

            serve(cfg)
            return 0
        if args.command == "session":
            return _cmd_session(args, cfg)
        if args.command == "store":
            return _cmd_store(args, cfg)
        if args.command == "cases":
            return _cmd_cases(args, cfg)
        return _cmd_eval(args, cfg)
    except AlignBotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
