"""Service configuration: one TOML file drives the server, the CLI, and
the backends. Invalid values abort startup with a section.field
diagnostic. Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .cues import BackendKind, CueBackendConfig, MockRuleSet
from .domain import AlignBotError
from .orchestrator import OrchestratorConfig
from .planner import PlannerBackendConfig, PlannerBackendKind
from .retrieval import RetrievalConfig
from .validation import DEFAULT_CLOSABLE_CONTAINERS

ENV_CONFIG = "ALIGNBOT_CONFIG"


class ConfigError(AlignBotError):
    pass


@dataclass(frozen=True)
class ServiceConfig:
    listen_host: str = "127.0.0.1"
    listen_port: int = 8400
    auth_token: str | None = None
    store_root: Path = Path("alignbot-data/store")
    case_store_path: Path = Path("alignbot-data/cases.jsonl")
    sessions_dir: Path = Path("alignbot-data/sessions")
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    cue_backend: CueBackendConfig = field(default_factory=CueBackendConfig)
    cue_rules_path: Path | None = None
    planner_backend: PlannerBackendConfig = field(default_factory=PlannerBackendConfig)
    planner_script_path: Path | None = None
    orchestrator: OrchestratorConfig = field(default_factory=OrchestratorConfig)

    def load_cue_rules(self) -> MockRuleSet:
        if self.cue_rules_path is None:
            return MockRuleSet()
        return MockRuleSet.from_file(self.cue_rules_path)


def _expect(table: dict, section: str, key: str, kinds, default):
    if key not in table:
        return default
    value = table[key]
    if not isinstance(value, kinds):
        names = kinds.__name__ if isinstance(kinds, type) else "/".join(k.__name__ for k in kinds)
        raise ConfigError(f"{section}.{key}: expected {names}, got {type(value).__name__}")
    return value


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_config(path: str | Path | None = None) -> ServiceConfig:
    """Load from an explicit path, else $ALIGNBOT_CONFIG, else defaults."""
    if path is None:
        env = os.environ.get(ENV_CONFIG)
        if env:
            path = env
    if path is None:
        return ServiceConfig()

    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None

    base = path.parent

    listen = _expect(data, "", "listen_address", str, "127.0.0.1:8400")
    if ":" not in listen:
        raise ConfigError("listen_address: expected host:port")
    host, _, port_text = listen.rpartition(":")
    try:
        port = int(port_text)
    except ValueError:
        raise ConfigError(f"listen_address: bad port {port_text!r}") from None

    auth_token = _expect(data, "", "auth_token", str, None)

    store = data.get("store", {})
    store_root = _resolve(base, _expect(store, "store", "root", str, "alignbot-data/store"))
    case_path = _resolve(base, _expect(store, "store", "cases", str, "alignbot-data/cases.jsonl"))
    sessions_dir = _resolve(
        base, _expect(store, "store", "sessions", str, "alignbot-data/sessions")
    )

    retrieval_data = data.get("retrieval", {})
    try:
        retrieval = RetrievalConfig(
            tau=float(_expect(retrieval_data, "retrieval", "tau", (int, float), 0.2)),
            f0=float(_expect(retrieval_data, "retrieval", "f0", (int, float), 0.5)),
            delta_pos0=float(
                _expect(retrieval_data, "retrieval", "delta_pos0", (int, float), 0.2)
            ),
            delta_neg0=float(
                _expect(retrieval_data, "retrieval", "delta_neg0", (int, float), 0.2)
            ),
            alpha=float(_expect(retrieval_data, "retrieval", "alpha", (int, float), 0.1)),
            beta=float(_expect(retrieval_data, "retrieval", "beta", (int, float), 0.1)),
            epsilon=float(_expect(retrieval_data, "retrieval", "epsilon", (int, float), 0.1)),
            k=_expect(retrieval_data, "retrieval", "k", int, 3),
            rng_seed=_expect(retrieval_data, "retrieval", "rng_seed", int, 0),
        )
    except AlignBotError as exc:
        raise ConfigError(f"retrieval: {exc}") from None

    cues_data = data.get("cues", {})
    cue_kind_text = _expect(cues_data, "cues", "kind", str, "mock")
    try:
        cue_kind = BackendKind(cue_kind_text)
    except ValueError:
        raise ConfigError(f"cues.kind: unknown backend {cue_kind_text!r}") from None
    try:
        cue_backend = CueBackendConfig(
            kind=cue_kind,
            endpoint_url=_expect(cues_data, "cues", "endpoint_url", str, None),
            timeout=float(_expect(cues_data, "cues", "timeout", (int, float), 10.0)),
            chain_of_thought=_expect(cues_data, "cues", "chain_of_thought", bool, False),
            image_transport=_expect(cues_data, "cues", "image_transport", str, "reference"),
            max_in_flight=_expect(cues_data, "cues", "max_in_flight", int, 4),
        )
    except AlignBotError as exc:
        raise ConfigError(f"cues: {exc}") from None
    rules_path = _expect(cues_data, "cues", "rules_path", str, None)
    cue_rules_path = _resolve(base, rules_path) if rules_path else None

    planner_data = data.get("planner", {})
    planner_kind_text = _expect(planner_data, "planner", "kind", str, "mock")
    try:
        planner_kind = PlannerBackendKind(planner_kind_text)
    except ValueError:
        raise ConfigError(f"planner.kind: unknown backend {planner_kind_text!r}") from None
    try:
        planner_backend = PlannerBackendConfig(
            kind=planner_kind,
            endpoint_url=_expect(planner_data, "planner", "endpoint_url", str, None),
            timeout=float(_expect(planner_data, "planner", "timeout", (int, float), 30.0)),
            send_image=_expect(planner_data, "planner", "send_image", bool, True),
        )
    except AlignBotError as exc:
        raise ConfigError(f"planner: {exc}") from None
    script_path = _expect(planner_data, "planner", "script_path", str, None)
    planner_script_path = _resolve(base, script_path) if script_path else None

    session_data = data.get("session", {})
    known = _expect(session_data, "session", "known_objects", list, [])
    closable = _expect(
        session_data, "session", "closable_containers", list, sorted(DEFAULT_CLOSABLE_CONTAINERS)
    )
    try:
        orchestrator = OrchestratorConfig(
            max_rounds=_expect(session_data, "session", "max_rounds", int, 5),
            auto_repair=_expect(session_data, "session", "auto_repair", bool, True),
            known_objects=frozenset(str(v) for v in known),
            closable_containers=frozenset(str(v) for v in closable),
            add_case_on_success=_expect(
                session_data, "session", "add_case_on_success", bool, True
            ),
        )
    except AlignBotError as exc:
        raise ConfigError(f"session: {exc}") from None

    return ServiceConfig(
        listen_host=host,
        listen_port=port,
        auth_token=auth_token,
        store_root=store_root,
        case_store_path=case_path,
        sessions_dir=sessions_dir,
        retrieval=retrieval,
        cue_backend=cue_backend,
        cue_rules_path=cue_rules_path,
        planner_backend=planner_backend,
        planner_script_path=planner_script_path,
        orchestrator=orchestrator,
    )
