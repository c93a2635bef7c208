"""Append-only interaction history with derived dataset exporters.

Layout under the store root:
    records.log   UTF-8, one JSON record per line (see domain codec)
    images/       content-addressed image bytes, sha256-named

The log is never mutated in place: appends go to the end, the in-memory
index (record_id -> byte offset) is rebuilt by scanning on open. A log
truncated at any record boundary opens cleanly; a trailing partial line
(torn write) is ignored.

Concurrency: single writer (appends serialized through one lock),
readers snapshot under the same lock and never block each other.
"""

from __future__ import annotations

import hashlib
import json
import shutil
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .domain import (
    ActionPlan,
    AlignBotError,
    DomainError,
    InteractionRecord,
    OutcomeKind,
    Speaker,
    TaskDescription,
    UserId,
    canonical_json,
    record_from_json_line,
    record_to_json_line,
)


class StoreError(AlignBotError):
    pass


class DuplicateId(StoreError):
    pass


class StorageFailure(StoreError):
    """Disk-level failure, surfaced with path context."""


class UnresolvableImage(StoreError):
    pass


class GroundingKind(Enum):
    OBJECT_RECOGNITION = "object_recognition"
    STATE_RECOGNITION = "state_recognition"

    @classmethod
    def parse(cls, value: str) -> "GroundingKind":
        try:
            return cls(value)
        except ValueError:
            raise DomainError(f"unknown grounding kind {value!r}") from None


@dataclass(frozen=True)
class GroundingExample:
    """One visual Q&A pair for object or state recognition."""

    image_ref: str
    question: str
    answer: str
    kind: GroundingKind

    def __post_init__(self) -> None:
        if not self.question.strip() or not self.answer.strip():
            raise DomainError("GroundingExample question and answer must be non-empty")


@dataclass(frozen=True)
class CueExample:
    """One cue-generation training example: the full reminder content of a
    single dialogue consolidated into one answer (one cue per line)."""

    image_ref: str
    user: UserId
    task: TaskDescription
    question: str
    answer: str


CUE_QUESTION_TEMPLATE = "{user} wants a robot to {task}. Can you provide some cues to the robot?"


def _is_url(ref: str) -> bool:
    return "://" in ref


class InteractionStore:
    """Append-only store over a line-delimited record log."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.log_path = self.root / "records.log"
        self.images_dir = self.root / "images"
        self._lock = threading.Lock()
        self._records: list[InteractionRecord] = []
        self._index: dict[str, int] = {}
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            self.images_dir.mkdir(exist_ok=True)
            if self.log_path.exists():
                self._scan()
            else:
                self.log_path.touch()
        except OSError as exc:
            raise StorageFailure(f"cannot open store at {self.root}: {exc}") from exc

    def _scan(self) -> None:
        """Rebuild the index from disk. Tolerates a torn final line."""
        records: list[InteractionRecord] = []
        index: dict[str, int] = {}
        data = self.log_path.read_bytes()
        offset = 0
        lines = data.split(b"\n")
        for i, raw in enumerate(lines):
            if not raw:
                offset += len(raw) + 1
                continue
            is_last = i == len(lines) - 1 or all(not rest for rest in lines[i + 1 :])
            try:
                rec = record_from_json_line(raw.decode("utf-8"))
            except (DomainError, UnicodeDecodeError) as exc:
                if is_last:
                    break  # torn tail from an interrupted append
                raise StorageFailure(
                    f"corrupt record at byte {offset} in {self.log_path}: {exc}"
                ) from exc
            if rec.record_id in index:
                raise StorageFailure(
                    f"duplicate record_id {rec.record_id!r} in {self.log_path}"
                )
            index[rec.record_id] = offset
            records.append(rec)
            offset += len(raw) + 1
        self._records = records
        self._index = index

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def _check_image(self, image_ref: str) -> None:
        if _is_url(image_ref):
            return
        p = Path(image_ref)
        if not p.is_absolute():
            p = self.root / p
        if not p.exists():
            raise UnresolvableImage(f"image_ref {image_ref!r} does not resolve under {self.root}")

    def ingest_image(self, source: str | Path) -> str:
        """Copy image bytes into the content-addressed directory; returns the
        store-relative locator. Records hold locators only, never bytes."""
        source = Path(source)
        try:
            digest = hashlib.sha256(source.read_bytes()).hexdigest()
        except OSError as exc:
            raise UnresolvableImage(f"cannot read image {source}: {exc}") from exc
        suffix = source.suffix or ".bin"
        rel = Path("images") / f"{digest}{suffix}"
        dest = self.root / rel
        if not dest.exists():
            try:
                shutil.copyfile(source, dest)
            except OSError as exc:
                raise StorageFailure(f"cannot store image at {dest}: {exc}") from exc
        return str(rel)

    def append_record(self, rec: InteractionRecord) -> str:
        """Durably append one record; prior records are untouched."""
        self._check_image(rec.observation.image_ref)
        line = record_to_json_line(rec)
        with self._lock:
            if rec.record_id in self._index:
                raise DuplicateId(f"record_id {rec.record_id!r} already present")
            try:
                offset = self.log_path.stat().st_size
                with open(self.log_path, "ab") as fh:
                    fh.write((line + "\n").encode("utf-8"))
                    fh.flush()
            except OSError as exc:
                raise StorageFailure(f"append to {self.log_path} failed: {exc}") from exc
            self._index[rec.record_id] = offset
            self._records.append(rec)
        return rec.record_id

    def get_record(self, record_id: str) -> InteractionRecord:
        with self._lock:
            if record_id not in self._index:
                raise StoreError(f"no record {record_id!r}")
            for rec in self._records:
                if rec.record_id == record_id:
                    return rec
        raise StoreError(f"no record {record_id!r}")  # pragma: no cover

    def records(self) -> list[InteractionRecord]:
        with self._lock:
            return list(self._records)

    def query_records(
        self,
        user: UserId | None = None,
        outcome: OutcomeKind | None = None,
        task_contains: str | None = None,
    ) -> list[InteractionRecord]:
        """All records matching every provided predicate, insertion order.
        An empty filter returns everything."""
        out = []
        for rec in self.records():
            if user is not None and rec.user != user:
                continue
            if outcome is not None and rec.outcome.kind != outcome:
                continue
            if task_contains is not None and task_contains not in rec.task.text:
                continue
            out.append(rec)
        return out

    # -- derived dataset views ------------------------------------------------

    def export_cue_dataset(self) -> list[CueExample]:
        """One CueExample per record whose dialogue has at least one reminder
        turn (user turn annotated with a category). All of a dialogue's
        reminders consolidate into a single answer, one cue per line."""
        out: list[CueExample] = []
        for rec in self.records():
            reminder_turns = [
                t
                for t in rec.dialogue
                if t.speaker is Speaker.USER and t.reminder_category is not None
            ]
            if not reminder_turns:
                continue
            out.append(
                CueExample(
                    image_ref=rec.observation.image_ref,
                    user=rec.user,
                    task=rec.task,
                    question=CUE_QUESTION_TEMPLATE.format(user=rec.user.id, task=rec.task.text),
                    answer="\n".join(t.content for t in reminder_turns),
                )
            )
        return out

    def write_cue_dataset(self, path: str | Path) -> int:
        """Write the cue dataset file (line-delimited: image, question,
        answer). Pure function of store contents: same store, same bytes."""
        examples = self.export_cue_dataset()
        lines = [
            canonical_json(
                {"image": ex.image_ref, "question": ex.question, "answer": ex.answer}
            )
            for ex in examples
        ]
        try:
            Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        except OSError as exc:
            raise StorageFailure(f"cannot write {path}: {exc}") from exc
        return len(examples)

    def case_view(self) -> list[tuple[ActionPlan, TaskDescription]]:
        """The ⟨plan, task⟩ projection of exactly the SUCCESS records."""
        return [
            (rec.plan, rec.task)
            for rec in self.records()
            if rec.outcome.kind is OutcomeKind.SUCCESS
        ]

    def export_grounding_dataset(
        self, path: str | Path, annotations: list[GroundingExample]
    ) -> int:
        """Write the visual Q&A dataset file (line-delimited: image,
        question, answer, kind), preserving input order."""
        for ann in annotations:
            if not _is_url(ann.image_ref):
                p = Path(ann.image_ref)
                if not p.is_absolute():
                    p = self.root / p
                if not p.exists():
                    raise UnresolvableImage(f"annotation image {ann.image_ref!r} does not resolve")
        lines = [
            canonical_json(
                {
                    "image": ann.image_ref,
                    "question": ann.question,
                    "answer": ann.answer,
                    "kind": ann.kind.value,
                }
            )
            for ann in annotations
        ]
        try:
            Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        except OSError as exc:
            raise StorageFailure(f"cannot write {path}: {exc}") from exc
        return len(annotations)


def read_grounding_dataset(path: str | Path) -> list[GroundingExample]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        data = json.loads(line)
        out.append(
            GroundingExample(
                image_ref=data["image"],
                question=data["question"],
                answer=data["answer"],
                kind=GroundingKind.parse(data["kind"]),
            )
        )
    return out


def read_cue_dataset(path: str | Path) -> list[dict]:
    return [
        json.loads(line)
        for line in Path(path).read_text(encoding="utf-8").splitlines()
        if line
    ]
