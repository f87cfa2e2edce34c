"""Hint-annotated question bank: loading, validation, export, and length accounting.

A bank is a UTF-8 line-delimited file, one JSON object per line with fields
``id``, ``question``, ``answer``, ``insightful_hint``, ``vague_hint``,
``unrelated_hint``.  Banks are immutable after load and safe to share across
worker threads.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path


class Tier(str, Enum):
    """Relevance class of a hint."""

    IRRELEVANT = "Irrelevant"
    VAGUE = "Vague"
    INSIGHTFUL = "Insightful"


# Bank file field per tier, in file-schema order.  This order also defines the
# hint1/hint2/hint3 columns of the length table; the tier occupying each column
# is reported alongside rather than guessed from lengths.
TIER_FIELDS: dict[Tier, str] = {
    Tier.INSIGHTFUL: "insightful_hint",
    Tier.VAGUE: "vague_hint",
    Tier.IRRELEVANT: "unrelated_hint",
}

POSITION_TIERS: tuple[Tier, Tier, Tier] = tuple(TIER_FIELDS)


class BankError(Exception):
    """Malformed bank data: unreadable file, bad record, duplicate id, missing tier."""


@dataclass(frozen=True)
class Hint:
    tier: Tier
    text: str
    char_len: int = -1  # Unicode scalar count of text; derived when negative

    def __post_init__(self):
        if self.char_len < 0:
            object.__setattr__(self, "char_len", len(self.text))


@dataclass(frozen=True)
class Question:
    id: str
    prompt: str
    sample_answer: str
    hints: tuple[Hint, ...]

    def hint(self, tier: Tier) -> Hint:
        for h in self.hints:
            if h.tier == tier:
                return h
        raise BankError(f"question {self.id!r} has no {tier.value} hint")


@dataclass(frozen=True)
class QuestionBank:
    questions: tuple[Question, ...]
    source_path: str = ""

    def __len__(self) -> int:
        return len(self.questions)

    def __iter__(self):
        return iter(self.questions)

    def ids(self) -> list[str]:
        return [q.id for q in self.questions]

    def get(self, question_id: str) -> Question:
        for q in self.questions:
            if q.id == question_id:
                return q
        raise KeyError(question_id)

    def digest(self) -> str:
        """Content hash of the canonical export, stable across loads."""
        return hashlib.sha256(dumps_bank(self).encode("utf-8")).hexdigest()


def validate_question(q: Question) -> list[str]:
    """Return every invariant violation for one question; empty list means valid."""
    violations = []
    if not q.id:
        violations.append("empty id")
    if not q.prompt:
        violations.append(f"question {q.id!r}: empty prompt")
    if not q.sample_answer:
        violations.append(f"question {q.id!r}: empty sample answer")
    seen = [h.tier for h in q.hints]
    for tier in Tier:
        n = seen.count(tier)
        if n == 0:
            violations.append(f"question {q.id!r}: missing tier {tier.value}")
        elif n > 1:
            violations.append(f"question {q.id!r}: duplicate tier {tier.value}")
    for h in q.hints:
        if not h.text:
            violations.append(f"question {q.id!r}: empty {h.tier.value} hint")
        if h.char_len != len(h.text):
            violations.append(
                f"question {q.id!r}: {h.tier.value} hint char_len {h.char_len} != {len(h.text)}"
            )
    return violations


def _question_from_record(record: dict, where: str) -> Question:
    for key in ("id", "question", "answer", *TIER_FIELDS.values()):
        if key not in record:
            raise BankError(f"{where}: missing field {key!r}")
        if not isinstance(record[key], str):
            raise BankError(f"{where}: field {key!r} is not a string")
    hints = tuple(Hint(tier, record[fname]) for tier, fname in TIER_FIELDS.items())
    return Question(
        id=record["id"],
        prompt=record["question"],
        sample_answer=record["answer"],
        hints=hints,
    )


def load_bank(path: str | Path) -> QuestionBank:
    """Load and validate a line-delimited question bank file."""
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise BankError(f"cannot read bank file {path}: {exc}") from exc

    questions: list[Question] = []
    seen_ids: set[str] = set()
    # split on \n only: str.splitlines would also break on NEL/U+2028/U+2029,
    # which are legal inside JSON strings when written with ensure_ascii=False
    for lineno, line in enumerate(raw.split("\n"), start=1):
        if not line.strip():
            continue
        where = f"{path.name}:{lineno}"
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BankError(f"{where}: invalid JSON: {exc}") from exc
        if not isinstance(record, dict):
            raise BankError(f"{where}: record is not an object")
        q = _question_from_record(record, where)
        if q.id in seen_ids:
            raise BankError(f"{where}: duplicate id {q.id!r}")
        seen_ids.add(q.id)
        violations = validate_question(q)
        if violations:
            raise BankError(f"{where}: " + "; ".join(violations))
        questions.append(q)

    if not questions:
        raise BankError(f"{path}: bank is empty")
    return QuestionBank(questions=tuple(questions), source_path=str(path))


def dumps_bank(bank: QuestionBank) -> str:
    """Serialize a bank to its canonical line-delimited form (deterministic bytes)."""
    buf = io.StringIO()
    for q in bank:
        record = {"id": q.id, "question": q.prompt, "answer": q.sample_answer}
        for tier, fname in TIER_FIELDS.items():
            record[fname] = q.hint(tier).text
        buf.write(json.dumps(record, ensure_ascii=False))
        buf.write("\n")
    return buf.getvalue()


def export_bank(bank: QuestionBank, path: str | Path) -> None:
    """Write the bank so that load_bank() round-trips to an equal bank."""
    path = Path(path)
    try:
        path.write_text(dumps_bank(bank), encoding="utf-8")
    except OSError as exc:
        raise BankError(f"cannot write bank file {path}: {exc}") from exc


@dataclass(frozen=True)
class LengthRow:
    question_id: str
    hint_lens: tuple[int, int, int]
    insight_lens: tuple[int | None, int | None, int | None]


@dataclass(frozen=True)
class LengthTable:
    rows: tuple[LengthRow, ...]
    position_tiers: tuple[Tier, Tier, Tier] = POSITION_TIERS


def hint_length_table(
    bank: QuestionBank,
    summaries: dict[str, dict[Tier, str]] | None = None,
) -> LengthTable:
    """Per-question character lengths of each hint and, when given, its summary."""
    summaries = summaries or {}
    unknown = set(summaries) - set(bank.ids())
    if unknown:
        raise BankError(f"summaries reference unknown question ids: {sorted(unknown)}")

    rows = []
    for q in bank:
        hint_lens = []
        insight_lens = []
        per_q = summaries.get(q.id, {})
        for tier in POSITION_TIERS:
            hint_lens.append(q.hint(tier).char_len)
            text = per_q.get(tier)
            insight_lens.append(len(text) if text is not None else None)
        rows.append(LengthRow(q.id, tuple(hint_lens), tuple(insight_lens)))
    return LengthTable(rows=tuple(rows))


def length_table_csv(table: LengthTable) -> str:
    """Render the length table as CSV, one numbered row per question."""
    lines = ["row,hint1,insight1,hint2,insight2,hint3,insight3"]
    for i, row in enumerate(table.rows, start=1):
        cells: list[str] = [str(i)]
        for hint_len, insight_len in zip(row.hint_lens, row.insight_lens):
            cells.append(str(hint_len))
            cells.append("" if insight_len is None else str(insight_len))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
