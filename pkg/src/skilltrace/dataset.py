"""Interaction-log and posttest ingestion.

Everything here is immutable after construction and safe for concurrent
reads. Parsing is strict: malformed rows raise, they are never skipped.
"""

import csv
import io
from dataclasses import dataclass
from typing import Dict, Iterable, List, Tuple


class DatasetError(Exception):
    """Base class for ingestion failures."""


class MissingColumn(DatasetError):
    def __init__(self, column: str):
        super().__init__(f"missing required column {column!r}")
        self.column = column


class BadBoolean(DatasetError):
    def __init__(self, row: int, value: str):
        super().__init__(f"row {row}: correct must be 0 or 1, got {value!r}")
        self.row = row


class MalformedRow(DatasetError):
    def __init__(self, row: int, detail: str):
        super().__init__(f"row {row}: {detail}")
        self.row = row


class DuplicateAttemptKey(DatasetError):
    def __init__(self, row: int, key: Tuple[str, str, int]):
        super().__init__(f"row {row}: duplicate (student, item, attempt) key {key}")
        self.row = row
        self.key = key


class DuplicateKey(DatasetError):
    def __init__(self, row: int, key: Tuple[str, str]):
        super().__init__(f"row {row}: duplicate (student, skill) key {key}")
        self.row = row
        self.key = key


class ScoreOutOfRange(DatasetError):
    def __init__(self, row: int, score: float):
        super().__init__(f"row {row}: score {score} outside [0, 1]")
        self.row = row


class UnknownSkill(DatasetError):
    def __init__(self, skill_id: str):
        super().__init__(f"skill {skill_id!r} not in catalog")
        self.skill_id = skill_id


@dataclass(frozen=True)
class InteractionRecord:
    """One student attempt at one item."""

    student_id: str
    skill_id: str
    item_id: str
    attempt_number: int  # 1 = first attempt at this item
    correct: bool
    order_index: int  # chronological position within the student's session

    def __post_init__(self):
        if self.attempt_number < 1:
            raise ValueError(f"attempt_number must be >= 1, got {self.attempt_number}")
        if self.order_index < 0:
            raise ValueError(f"order_index must be >= 0, got {self.order_index}")


@dataclass(frozen=True)
class StudentSequence:
    """Chronological first-attempt steps for one student.

    steps: tuple of (skill_id, item_id, correct), sorted by order_index.
    """

    student_id: str
    steps: Tuple[Tuple[str, str, bool], ...]


class SkillCatalog:
    """Deterministic skill_id -> dense index mapping (lexicographic order)."""

    def __init__(self, skill_ids: Iterable[str]):
        self.skills: Tuple[str, ...] = tuple(sorted(set(skill_ids)))
        self.index: Dict[str, int] = {s: i for i, s in enumerate(self.skills)}

    def __len__(self) -> int:
        return len(self.skills)

    def __contains__(self, skill_id: str) -> bool:
        return skill_id in self.index

    def __iter__(self):
        return iter(self.skills)

    @classmethod
    def from_records(cls, records: Iterable[InteractionRecord]) -> "SkillCatalog":
        return cls(r.skill_id for r in records)


@dataclass(frozen=True)
class PosttestScores:
    """Per-(student, skill) posttest subscores, each in [0, 1]."""

    entries: Dict[Tuple[str, str], float]

    def get(self, student_id: str, skill_id: str):
        return self.entries.get((student_id, skill_id))


_INTERACTION_COLUMNS = (
    "student_id",
    "skill_id",
    "item_id",
    "attempt_number",
    "correct",
    "order_index",
)

_POSTTEST_COLUMNS = ("student_id", "skill_id", "score")


def _open_csv(source) -> csv.DictReader:
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    text = io.TextIOWrapper(source, encoding="utf-8", newline="")
    return csv.DictReader(text)


def parse_interactions(source) -> List[InteractionRecord]:
    """Parse the interaction CSV (bytes or a binary stream).

    Header: student_id,skill_id,item_id,attempt_number,correct,order_index.
    Raises on any malformed row; never skips silently.
    """
    reader = _open_csv(source)
    fields = reader.fieldnames or []
    for col in _INTERACTION_COLUMNS:
        if col not in fields:
            raise MissingColumn(col)

    records: List[InteractionRecord] = []
    seen = set()
    for i, row in enumerate(reader, start=2):  # row 1 is the header
        if any(row.get(c) is None for c in _INTERACTION_COLUMNS):
            raise MalformedRow(i, "wrong number of fields")
        if row["correct"] not in ("0", "1"):
            raise BadBoolean(i, row["correct"])
        try:
            attempt = int(row["attempt_number"])
            order = int(row["order_index"])
        except ValueError as exc:
            raise MalformedRow(i, str(exc)) from None
        try:
            rec = InteractionRecord(
                student_id=row["student_id"],
                skill_id=row["skill_id"],
                item_id=row["item_id"],
                attempt_number=attempt,
                correct=row["correct"] == "1",
                order_index=order,
            )
        except ValueError as exc:
            raise MalformedRow(i, str(exc)) from None
        key = (rec.student_id, rec.item_id, rec.attempt_number)
        if key in seen:
            raise DuplicateAttemptKey(i, key)
        seen.add(key)
        records.append(rec)
    return records


def interactions_to_csv(records: Iterable[InteractionRecord]) -> bytes:
    """Serialize records back to the ingestion CSV format (round-trippable)."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(_INTERACTION_COLUMNS)
    for r in records:
        writer.writerow(
            [
                r.student_id,
                r.skill_id,
                r.item_id,
                r.attempt_number,
                int(r.correct),
                r.order_index,
            ]
        )
    return out.getvalue().encode("utf-8")


def first_attempts(records: List[InteractionRecord]) -> List[InteractionRecord]:
    """Keep only attempt_number == 1 records, preserving relative order."""
    return [r for r in records if r.attempt_number == 1]


def build_sequences(
    records: List[InteractionRecord], catalog: SkillCatalog
) -> List[StudentSequence]:
    """Group first-attempt records into one chronological sequence per student.

    Sequences are returned sorted by student_id for determinism.
    """
    by_student: Dict[str, List[InteractionRecord]] = {}
    for r in records:
        if r.skill_id not in catalog:
            raise UnknownSkill(r.skill_id)
        by_student.setdefault(r.student_id, []).append(r)
    sequences = []
    for student_id in sorted(by_student):
        recs = sorted(by_student[student_id], key=lambda r: r.order_index)
        steps = tuple((r.skill_id, r.item_id, r.correct) for r in recs)
        sequences.append(StudentSequence(student_id=student_id, steps=steps))
    return sequences


def parse_posttest(source) -> PosttestScores:
    """Parse the posttest CSV (header student_id,skill_id,score)."""
    reader = _open_csv(source)
    fields = reader.fieldnames or []
    for col in _POSTTEST_COLUMNS:
        if col not in fields:
            raise MissingColumn(col)

    entries: Dict[Tuple[str, str], float] = {}
    for i, row in enumerate(reader, start=2):
        if any(row.get(c) is None for c in _POSTTEST_COLUMNS):
            raise MalformedRow(i, "wrong number of fields")
        try:
            score = float(row["score"])
        except ValueError as exc:
            raise MalformedRow(i, str(exc)) from None
        if not 0.0 <= score <= 1.0:
            raise ScoreOutOfRange(i, score)
        key = (row["student_id"], row["skill_id"])
        if key in entries:
            raise DuplicateKey(i, key)
        entries[key] = score
    return PosttestScores(entries=entries)


def posttest_to_csv(scores: PosttestScores) -> bytes:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(_POSTTEST_COLUMNS)
    for (student_id, skill_id), score in sorted(scores.entries.items()):
        writer.writerow([student_id, skill_id, score])
    return out.getvalue().encode("utf-8")


def skill_subsequence(seq: StudentSequence, skill_id: str) -> List[bool]:
    """Ordered correctness list of one student's first attempts on one skill."""
    return [correct for s, _item, correct in seq.steps if s == skill_id]
