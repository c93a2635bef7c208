"""Case retrieval and priority learning.

A case is a past successful ⟨plan, task⟩ pair. Retrieval gates candidates
on TF-IDF/cosine similarity between the stored task text and the incoming
task, orders them by a learned priority score in [0.1, 1.0], and selects
up to k of them with a sequential ε-greedy policy (explore a uniformly
random remaining candidate with probability ε, otherwise exploit the
highest softmax weight, which shares its argmax with the raw priority).

After a session settles, every case that was injected into the prompt has
its priority nudged by a decayed gradient:

    step(positive) = delta_pos0 * exp(-alpha * n)
    step(negative) = delta_neg0 * exp(-beta  * n)

with n the case's pre-update usage count, added on success and subtracted
on failure, then clamped to [0.1, 1.0]. Softmax weights are ephemeral:
stored priorities are never overwritten by normalization, otherwise they
would depend on whichever candidate set each query happened to produce.

TF-IDF is pinned exactly so independent implementations agree at 1e-9:
tokens are lowercased runs of alphanumerics; tf is raw count over
document token count; idf = ln((1 + N) / (1 + df)) + 1; document and
query vectors are L2-normalized; out-of-vocabulary query tokens are
ignored.
"""

from __future__ import annotations

import json
import math
import os
import random
import re
import threading
from dataclasses import dataclass, replace
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Callable

from .domain import (
    ActionPlan,
    AlignBotError,
    TaskDescription,
    canonical_json,
    format_timestamp,
    parse_timestamp,
    plan_from_lines,
)


class RetrievalError(AlignBotError):
    pass


class UnknownCase(RetrievalError):
    pass


class EmptyCandidates(RetrievalError):
    pass


PRIORITY_MIN = 0.1
PRIORITY_MAX = 1.0


@dataclass(frozen=True)
class CaseEntry:
    case_id: str
    plan: ActionPlan
    task: TaskDescription
    priority: float
    usage_count: int
    created_at: datetime

    def __post_init__(self) -> None:
        if not PRIORITY_MIN <= self.priority <= PRIORITY_MAX:
            raise RetrievalError(
                f"priority {self.priority} outside [{PRIORITY_MIN}, {PRIORITY_MAX}]"
            )
        if self.usage_count < 0:
            raise RetrievalError("usage_count must be non-negative")


@dataclass(frozen=True)
class RetrievalConfig:
    """Knobs for the retrieval/learning pipeline.

    Defaults are chosen so that 3-5 consistent outcomes traverse the
    whole [0.1, 1.0] priority range.
    """

    tau: float = 0.2
    f0: float = 0.5
    delta_pos0: float = 0.2
    delta_neg0: float = 0.2
    alpha: float = 0.1
    beta: float = 0.1
    epsilon: float = 0.1
    k: int = 3
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.tau <= 1.0:
            raise RetrievalError("tau must be in [0, 1]")
        if not PRIORITY_MIN <= self.f0 <= PRIORITY_MAX:
            raise RetrievalError("f0 must be in [0.1, 1.0]")
        if self.delta_pos0 <= 0 or self.delta_neg0 <= 0:
            raise RetrievalError("gradient amplitudes must be positive")
        if self.alpha <= 0 or self.beta <= 0:
            raise RetrievalError("decay factors must be positive")
        if not 0.0 <= self.epsilon <= 1.0:
            raise RetrievalError("epsilon must be in [0, 1]")
        if self.k < 1:
            raise RetrievalError("k must be >= 1")


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on any non-alphanumeric run, drop empty tokens."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class TfIdfModel:
    vocabulary: dict[str, int]  # token -> document frequency
    document_count: int
    document_vectors: dict[str, dict[str, float]]  # case_id -> L2-normalized weights


def _idf(model: TfIdfModel, token: str) -> float:
    df = model.vocabulary.get(token, 0)
    return math.log((1 + model.document_count) / (1 + df)) + 1.0


def _normalize(vec: dict[str, float]) -> dict[str, float]:
    norm = math.sqrt(sum(w * w for w in vec.values()))
    if norm == 0.0:
        return {}
    return {t: w / norm for t, w in vec.items()}


def build_tfidf(corpus: list[tuple[str, TaskDescription]]) -> TfIdfModel:
    """Fit a model over (case_id, task) pairs. An empty corpus yields an
    empty model."""
    docs = {case_id: tokenize(task.text) for case_id, task in corpus}
    vocabulary: dict[str, int] = {}
    for tokens in docs.values():
        for token in set(tokens):
            vocabulary[token] = vocabulary.get(token, 0) + 1
    model = TfIdfModel(vocabulary=vocabulary, document_count=len(docs), document_vectors={})
    for case_id, tokens in docs.items():
        vec: dict[str, float] = {}
        if tokens:
            counts: dict[str, int] = {}
            for token in tokens:
                counts[token] = counts.get(token, 0) + 1
            total = len(tokens)
            vec = {t: (c / total) * _idf(model, t) for t, c in counts.items()}
        model.document_vectors[case_id] = _normalize(vec)
    return model


def query_vector(model: TfIdfModel, text: str) -> dict[str, float]:
    """Vector for ad-hoc text using the model's idf; out-of-vocabulary
    tokens are ignored."""
    tokens = [t for t in tokenize(text) if t in model.vocabulary]
    if not tokens:
        return {}
    counts: dict[str, int] = {}
    for token in tokens:
        counts[token] = counts.get(token, 0) + 1
    total = len(tokens)
    return _normalize({t: (c / total) * _idf(model, t) for t, c in counts.items()})


def similarity(model: TfIdfModel, query: TaskDescription, case_id: str) -> float:
    """Cosine similarity in [0, 1] between the query text and a stored
    document. All weights are non-negative, so the dot product of the two
    unit vectors is the cosine."""
    if case_id not in model.document_vectors:
        raise UnknownCase(f"case {case_id!r} not in model")
    qv = query_vector(model, query.text)
    dv = model.document_vectors[case_id]
    if len(qv) > len(dv):
        qv, dv = dv, qv
    return sum(w * dv.get(t, 0.0) for t, w in qv.items())


def _candidate_order_key(case: CaseEntry):
    # Priority descending, newest first, then case_id for full determinism.
    return (-case.priority, -case.created_at.timestamp(), case.case_id)


def candidate_set(
    cases: list[CaseEntry], query: TaskDescription, cfg: RetrievalConfig
) -> list[CaseEntry]:
    """Exactly the cases with similarity strictly above tau, sorted by
    priority descending (ties: most recent created_at, then case_id)."""
    model = build_tfidf([(c.case_id, c.task) for c in cases])
    kept = [c for c in cases if similarity(model, query, c.case_id) > cfg.tau]
    return sorted(kept, key=_candidate_order_key)


def softmax_weights(candidates: list[CaseEntry]) -> list[float]:
    """Ephemeral selection weights over raw priorities: exp(f) / sum(exp).
    Order-preserving; never written back to the cases."""
    if not candidates:
        raise EmptyCandidates("softmax over empty candidate list")
    exps = [math.exp(c.priority) for c in candidates]
    total = sum(exps)
    return [e / total for e in exps]


EXPLOIT = "exploit"
EXPLORE = "explore"


def select_cases_with_trace(
    candidates: list[CaseEntry], cfg: RetrievalConfig, rng: random.Random
) -> tuple[list[CaseEntry], list[str]]:
    """Sequential ε-greedy without replacement, min(k, |candidates|) draws.

    Each draw flips one rng.random(): below ε picks uniformly among the
    remaining candidates (explore), otherwise takes the remaining
    candidate with the largest softmax weight, which is the same argmax
    as the largest raw priority (exploit). Returns the picks plus the
    branch taken per draw.
    """
    remaining = sorted(candidates, key=_candidate_order_key)
    picks: list[CaseEntry] = []
    branches: list[str] = []
    for _ in range(min(cfg.k, len(remaining))):
        if rng.random() < cfg.epsilon:
            idx = rng.randrange(len(remaining))
            branches.append(EXPLORE)
        else:
            idx = 0  # remaining is kept in candidate order; head is argmax
            branches.append(EXPLOIT)
        picks.append(remaining.pop(idx))
    return picks, branches


def select_cases(
    candidates: list[CaseEntry], cfg: RetrievalConfig, rng: random.Random
) -> list[CaseEntry]:
    picks, _ = select_cases_with_trace(candidates, cfg, rng)
    return picks


class GradientKind(Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


class CaseOutcome(Enum):
    USED_IN_SUCCESS = "used_in_success"
    USED_IN_FAILURE = "used_in_failure"


def gradient(kind: GradientKind, usage_count: int, cfg: RetrievalConfig) -> float:
    """Decayed update magnitude: amplitude * exp(-decay * usage_count)."""
    if usage_count < 0:
        raise RetrievalError("usage_count must be >= 0")
    if kind is GradientKind.POSITIVE:
        return cfg.delta_pos0 * math.exp(-cfg.alpha * usage_count)
    return cfg.delta_neg0 * math.exp(-cfg.beta * usage_count)


def apply_outcome(case: CaseEntry, outcome: CaseOutcome, cfg: RetrievalConfig) -> CaseEntry:
    """Settle one case: nudge priority by the decayed gradient computed at
    the PRE-update usage count, clamp to [0.1, 1.0], bump the count."""
    n = case.usage_count
    if outcome is CaseOutcome.USED_IN_SUCCESS:
        delta = gradient(GradientKind.POSITIVE, n, cfg)
    else:
        delta = -gradient(GradientKind.NEGATIVE, n, cfg)
    new_priority = min(max(case.priority + delta, PRIORITY_MIN), PRIORITY_MAX)
    return replace(case, priority=new_priority, usage_count=n + 1)


# ---------------------------------------------------------------------------
# Persistent case store

def case_to_dict(case: CaseEntry) -> dict:
    return {
        "case_id": case.case_id,
        "plan": {"plan_id": case.plan.plan_id, "steps": [s.canonical() for s in case.plan.steps]},
        "task": case.task.text,
        "priority": case.priority,
        "usage_count": case.usage_count,
        "created_at": format_timestamp(case.created_at),
    }


def case_from_dict(data: dict) -> CaseEntry:
    return CaseEntry(
        case_id=data["case_id"],
        plan=plan_from_lines(list(data["plan"]["steps"]), plan_id=data["plan"]["plan_id"]),
        task=TaskDescription(data["task"]),
        priority=float(data["priority"]),
        usage_count=int(data["usage_count"]),
        created_at=parse_timestamp(data["created_at"]),
    )


class CaseStore:
    """Line-delimited persistent case pool, atomically rewritten on
    settlement. One logical state machine: reads may run concurrently,
    settlements and selections are serialized under one lock that also
    owns the RNG."""

    def __init__(
        self,
        path: str | Path,
        seed: int = 0,
        rerank_hook: Callable[[list[CaseEntry], TaskDescription], list[CaseEntry]] | None = None,
    ):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._rng = random.Random(seed)
        # Insertion point for a model-backed re-ranker: receives the
        # filtered, priority-sorted candidates and may filter them or
        # return re-scored copies; selection ranks whatever comes back by
        # its priorities. Stored entries are never touched. Identity by
        # default.
        self._rerank = rerank_hook or (lambda cands, query: cands)
        self._cases: dict[str, CaseEntry] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line:
                    continue
                case = case_from_dict(json.loads(line))
                self._cases[case.case_id] = case
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch()

    def __len__(self) -> int:
        with self._lock:
            return len(self._cases)

    def cases(self) -> list[CaseEntry]:
        with self._lock:
            return list(self._cases.values())

    def get(self, case_id: str) -> CaseEntry:
        with self._lock:
            if case_id not in self._cases:
                raise UnknownCase(f"no case {case_id!r}")
            return self._cases[case_id]

    def _persist_locked(self) -> None:
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        text = "".join(canonical_json(case_to_dict(c)) + "\n" for c in self._cases.values())
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, self.path)

    def add_case(
        self,
        plan: ActionPlan,
        task: TaskDescription,
        cfg: RetrievalConfig,
        created_at: datetime,
        case_id: str | None = None,
    ) -> CaseEntry:
        """Admit a new successful ⟨plan, task⟩ pair at the initial priority."""
        with self._lock:
            if case_id is None:
                case_id = f"case-{len(self._cases) + 1:05d}"
            if case_id in self._cases:
                raise RetrievalError(f"case_id {case_id!r} already present")
            case = CaseEntry(
                case_id=case_id,
                plan=plan,
                task=task,
                priority=cfg.f0,
                usage_count=0,
                created_at=created_at,
            )
            self._cases[case_id] = case
            self._persist_locked()
            return case

    def retrieve(self, query: TaskDescription, cfg: RetrievalConfig) -> list[CaseEntry]:
        """Filter, rank, then ε-greedy-select up to k cases for a query.
        Advances the store-owned RNG under the lock."""
        with self._lock:
            candidates = candidate_set(list(self._cases.values()), query, cfg)
            candidates = self._rerank(candidates, query)
            return select_cases(candidates, cfg, self._rng)

    def settle(self, case_ids: list[str], outcome: CaseOutcome, cfg: RetrievalConfig) -> None:
        """Apply one outcome to every listed case and rewrite atomically."""
        with self._lock:
            for case_id in case_ids:
                if case_id not in self._cases:
                    raise UnknownCase(f"no case {case_id!r}")
                self._cases[case_id] = apply_outcome(self._cases[case_id], outcome, cfg)
            self._persist_locked()
