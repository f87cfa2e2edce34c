"""Rubric scoring, the blind manual-grading workflow, and three judge protocols.

The 10-point rubric has three axes: completeness (0-3 awarded directly),
logic (4 minus 2 per logical inconsistency minus 1 per minor error, floored
at 0), and truthfulness (3 minus 1 per incorrect statement, floored at 0).

Judge protocols:

- ``Auto1``: zero-shot — rubric + sample answer + response.
- ``Auto2``: the judge model first writes its own key answer (seeded with the
  sample answer as a prior assistant turn), then grades against that key.
- ``Auto3``: Auto1 plus one worked, manually graded exemplar in the prompt.
"""

from __future__ import annotations

import csv
import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .context import ConditionLevel, ResponseSet, parse_level
from .corpus import Question, QuestionBank
from .gateway import ChatMessage, CompletionRequest, Gateway, assistant, user


class GradingError(Exception):
    pass


class JudgeOutputError(GradingError):
    """Judge reply could not be turned into rubric counts."""


class JudgeOutputMissing(JudgeOutputError):
    """No JSON object anywhere in the reply."""


class JudgeFieldMissing(JudgeOutputError):
    """A JSON object was found but lacks one of the four integer count fields."""


class JudgeValueError(JudgeOutputError):
    """All fields present but at least one value is out of range."""


# --- rubric ----------------------------------------------------------------

COMPLETENESS_MAX = 3
LOGIC_MAX = 4
TRUTHFULNESS_MAX = 3


@dataclass(frozen=True)
class RubricBreakdown:
    completeness: int
    logic_inconsistencies: int
    minor_errors: int
    incorrect_statements: int
    logic: int
    truthfulness: int
    total: int

    def as_dict(self) -> dict:
        return {
            "completeness": self.completeness,
            "logic_inconsistencies": self.logic_inconsistencies,
            "minor_errors": self.minor_errors,
            "incorrect_statements": self.incorrect_statements,
            "logic": self.logic,
            "truthfulness": self.truthfulness,
            "total": self.total,
        }


def score_rubric(completeness: int, a: int, b: int, c: int) -> RubricBreakdown:
    """Breakdown from completeness points and the three defect counts (a, b, c)."""
    for name, value in (
        ("completeness", completeness),
        ("logic_inconsistencies", a),
        ("minor_errors", b),
        ("incorrect_statements", c),
    ):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ValueError(f"{name} must be an integer, got {value!r}")
        if value < 0:
            raise ValueError(f"{name} must be nonnegative, got {value}")
    if completeness > COMPLETENESS_MAX:
        raise ValueError(f"completeness must be at most {COMPLETENESS_MAX}, got {completeness}")
    logic = max(0, LOGIC_MAX - 2 * a - b)
    truthfulness = max(0, TRUTHFULNESS_MAX - c)
    return RubricBreakdown(
        completeness=completeness,
        logic_inconsistencies=a,
        minor_errors=b,
        incorrect_statements=c,
        logic=logic,
        truthfulness=truthfulness,
        total=completeness + logic + truthfulness,
    )


class Grader(str, Enum):
    MANUAL = "Manual"
    AUTO1 = "Auto1"
    AUTO2 = "Auto2"
    AUTO3 = "Auto3"


AUTO_GRADERS = (Grader.AUTO1, Grader.AUTO2, Grader.AUTO3)


def parse_grader(name: str) -> Grader:
    for g in Grader:
        if g.value.lower() == name.lower():
            return g
    raise ValueError(f"unknown grader {name!r}")


@dataclass(frozen=True)
class GradeRecord:
    question_id: str
    level: ConditionLevel
    grader: Grader
    breakdown: RubricBreakdown
    raw_judge_output: str = ""  # empty for Manual
    key_answer_used: str = ""

    def as_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "level": self.level.value,
            "grader": self.grader.value,
            **self.breakdown.as_dict(),
            "raw_judge_output": self.raw_judge_output,
            "key_answer_used": self.key_answer_used,
        }


def grade_record_from_dict(obj: dict) -> GradeRecord:
    breakdown = score_rubric(
        obj["completeness"],
        obj["logic_inconsistencies"],
        obj["minor_errors"],
        obj["incorrect_statements"],
    )
    for axis in ("logic", "truthfulness", "total"):
        if axis in obj and obj[axis] != getattr(breakdown, axis):
            raise GradingError(
                f"stored {axis} {obj[axis]} disagrees with recomputed {getattr(breakdown, axis)}"
            )
    return GradeRecord(
        question_id=obj["question_id"],
        level=parse_level(obj["level"]),
        grader=parse_grader(obj["grader"]),
        breakdown=breakdown,
        raw_judge_output=obj.get("raw_judge_output", ""),
        key_answer_used=obj.get("key_answer_used", ""),
    )


def write_grade_records(records: list[GradeRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.as_dict(), ensure_ascii=False) + "\n")


def load_grade_records(path: str | Path) -> list[GradeRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(grade_record_from_dict(json.loads(line)))
            except (KeyError, ValueError, GradingError) as exc:
                raise GradingError(f"{Path(path).name}:{lineno}: {exc}") from exc
    return records


# --- blind manual workflow ------------------------------------------------------

SCORE_CSV_HEADER = "position,completeness,logic_inconsistencies,minor_errors,incorrect_statements"


@dataclass(frozen=True)
class SheetEntry:
    position: int  # 1-based
    response: str


@dataclass(frozen=True)
class GradingSheet:
    entries: tuple[SheetEntry, ...]
    permutation_seed: int
    key: dict[int, tuple[str, ConditionLevel]]  # sealed; never rendered with the sheet


def make_grading_sheet(rs: ResponseSet, seed: int) -> GradingSheet:
    """Shuffle successful responses into anonymous positions; same seed, same order."""
    records = rs.ok_records()
    if not records:
        raise GradingError("cannot build a grading sheet from an empty response set")
    order = list(range(len(records)))
    random.Random(seed).shuffle(order)
    entries = []
    key = {}
    for position, idx in enumerate(order, start=1):
        rec = records[idx]
        entries.append(SheetEntry(position=position, response=rec.response))
        key[position] = (rec.question_id, rec.level)
    return GradingSheet(entries=tuple(entries), permutation_seed=seed, key=key)


def unshuffle(sheet: GradingSheet) -> dict[tuple[str, ConditionLevel], str]:
    """Invert the permutation: (question_id, level) back to response text."""
    out = {}
    for entry in sheet.entries:
        qid, level = sheet.key[entry.position]
        if (qid, level) in out:
            raise GradingError(f"sheet key maps two positions to {(qid, level.value)}")
        out[(qid, level)] = entry.response
    return out


def render_sheet(sheet: GradingSheet, bank: QuestionBank | None = None) -> str:
    """The text handed to graders: positions and responses, nothing identifying."""
    lines = [
        "BLIND GRADING SHEET",
        f"{len(sheet.entries)} responses, shuffled. Score each with the rubric and",
        f"record the four counts per position in a CSV with header:",
        f"  {SCORE_CSV_HEADER}",
        "",
    ]
    for entry in sheet.entries:
        lines.append(f"--- position {entry.position} ---")
        if bank is not None:
            qid, _level = sheet.key[entry.position]
            q = bank.get(qid)
            lines.append(f"Task: {q.prompt}")
            lines.append(f"Reference answer: {q.sample_answer}")
        lines.append("Response:")
        lines.append(entry.response)
        lines.append("")
    return "\n".join(lines)


def write_sheet_files(sheet: GradingSheet, out_dir: str | Path, bank: QuestionBank | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sheet.txt").write_text(render_sheet(sheet, bank), encoding="utf-8")
    key_obj = {
        str(pos): {"question_id": qid, "level": level.value}
        for pos, (qid, level) in sorted(sheet.key.items())
    }
    with open(out / "sheet_key.json", "w", encoding="utf-8") as fh:
        json.dump({"permutation_seed": sheet.permutation_seed, "key": key_obj}, fh, indent=2)
        fh.write("\n")
    with open(out / "scores_template.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(SCORE_CSV_HEADER + "\n")
        for entry in sheet.entries:
            fh.write(f"{entry.position},,,,\n")


def load_sheet_key(path: str | Path) -> tuple[int, dict[int, tuple[str, ConditionLevel]]]:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    key = {
        int(pos): (cell["question_id"], parse_level(cell["level"]))
        for pos, cell in obj["key"].items()
    }
    return int(obj["permutation_seed"]), key


def read_score_csv(path: str | Path) -> dict[int, tuple[int, int, int, int]]:
    """Parse the filled score-entry CSV into position -> (completeness, a, b, c)."""
    scores: dict[int, tuple[int, int, int, int]] = {}
    expected = SCORE_CSV_HEADER.split(",")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != expected:
            raise GradingError(f"score CSV must start with header: {SCORE_CSV_HEADER}")
        for row in reader:
            if not row or not any(cell.strip() for cell in row):
                continue
            if len(row) != 5:
                raise GradingError(f"score CSV row has {len(row)} cells, expected 5: {row!r}")
            try:
                position, *counts = (int(cell) for cell in row)
            except ValueError as exc:
                raise GradingError(f"non-integer cell in score CSV row {row!r}") from exc
            if position in scores:
                raise GradingError(f"duplicate position {position} in score CSV")
            scores[position] = tuple(counts)  # type: ignore[assignment]
    return scores


def ingest_manual_grades(
    sheet: GradingSheet, scores: dict[int, tuple[int, int, int, int]]
) -> list[GradeRecord]:
    """De-anonymize positions and attach Manual grade records."""
    records = []
    for entry in sheet.entries:
        if entry.position not in scores:
            raise GradingError(f"no score entered for position {entry.position}")
        completeness, a, b, c = scores[entry.position]
        qid, level = sheet.key[entry.position]
        records.append(
            GradeRecord(
                question_id=qid,
                level=level,
                grader=Grader.MANUAL,
                breakdown=score_rubric(completeness, a, b, c),
            )
        )
    unknown = set(scores) - {e.position for e in sheet.entries}
    if unknown:
        raise GradingError(f"score CSV refers to unknown positions: {sorted(unknown)}")
    return records


# --- judge protocols ---------------------------------------------------------

RUBRIC_TEXT = """\
Score the response out of 10 points on three axes:
1. Completeness (0-3 points): 3 for a full, on-target answer; 1-2 for a
   partially correct answer; 0 for an answer that misses the question.
2. Logic (0-4 points): start from 4, deduct 2 points for each logical
   inconsistency and 1 point for each minor error; never below 0.
3. Truthfulness (0-3 points): start from 3, deduct 1 point for each
   incorrect statement; never below 0.
Do not compute the axis scores yourself. Instead report the completeness
points you award plus raw counts of each defect type."""

JUDGE_OUTPUT_INSTRUCTION = (
    "After your assessment, output a single JSON object on its own line with "
    'exactly these integer fields: "completeness" (0-3), '
    '"logical_inconsistencies", "minor_errors", "incorrect_statements".'
)

JUDGE_FIELDS = (
    "completeness",
    "logical_inconsistencies",
    "minor_errors",
    "incorrect_statements",
)


@dataclass(frozen=True)
class Exemplar:
    """One worked, manually graded example shown to the Auto3 judge."""

    question: str
    key_answer: str
    response: str
    breakdown: RubricBreakdown
    rationale: str = ""


def save_exemplar(ex: Exemplar, path: str | Path) -> None:
    obj = {
        "question": ex.question,
        "key_answer": ex.key_answer,
        "response": ex.response,
        "completeness": ex.breakdown.completeness,
        "logic_inconsistencies": ex.breakdown.logic_inconsistencies,
        "minor_errors": ex.breakdown.minor_errors,
        "incorrect_statements": ex.breakdown.incorrect_statements,
        "rationale": ex.rationale,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, ensure_ascii=False, indent=2)
        fh.write("\n")


def load_exemplar(path: str | Path) -> Exemplar:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    return Exemplar(
        question=obj["question"],
        key_answer=obj["key_answer"],
        response=obj["response"],
        breakdown=score_rubric(
            obj["completeness"],
            obj["logic_inconsistencies"],
            obj["minor_errors"],
            obj["incorrect_statements"],
        ),
        rationale=obj.get("rationale", ""),
    )


def _format_exemplar(ex: Exemplar) -> str:
    counts = {
        "completeness": ex.breakdown.completeness,
        "logical_inconsistencies": ex.breakdown.logic_inconsistencies,
        "minor_errors": ex.breakdown.minor_errors,
        "incorrect_statements": ex.breakdown.incorrect_statements,
    }
    parts = [
        "Worked example of a correct grading:",
        f"Example question:\n{ex.question}",
        f"Example reference answer:\n{ex.key_answer}",
        f"Example response:\n{ex.response}",
    ]
    if ex.rationale:
        parts.append(f"Grader's reasoning:\n{ex.rationale}")
    parts.append("Correct output:\n" + json.dumps(counts))
    return "\n\n".join(parts)


def build_judge_prompt(
    question: str,
    response: str,
    key_answer: str,
    rubric_text: str = RUBRIC_TEXT,
    exemplar: Exemplar | None = None,
) -> tuple[ChatMessage, ...]:
    """Single deterministic user message: rubric, optional exemplar, then the task."""
    for name, text in (("question", question), ("response", response), ("key_answer", key_answer)):
        if not text:
            raise ValueError(f"{name} must be nonempty")
    sections = ["You are grading a response to an exam question.", rubric_text]
    if exemplar is not None:
        sections.append(_format_exemplar(exemplar))
    sections.append(f"Question:\n{question}")
    sections.append(f"Reference answer:\n{key_answer}")
    sections.append(f"Response to grade:\n{response}")
    sections.append(JUDGE_OUTPUT_INSTRUCTION)
    return (user("\n\n".join(sections)),)


def parse_judge_output(text: str) -> tuple[int, int, int, int]:
    """Extract (completeness, a, b, c) from the judge's reply.

    Scans for JSON objects anywhere in the text and takes the last one that
    carries all four count fields; raises a distinct error class for a missing
    object, a missing field, or an out-of-range value, so the caller can
    phrase a targeted re-ask.
    """
    decoder = json.JSONDecoder()
    candidates = []
    idx = text.find("{")
    while idx != -1:
        try:
            obj, _end = decoder.raw_decode(text, idx)
        except ValueError:
            pass
        else:
            if isinstance(obj, dict):
                candidates.append(obj)
        idx = text.find("{", idx + 1)
    if not candidates:
        raise JudgeOutputMissing("no JSON object found in judge reply")

    def intfields(obj: dict) -> dict | None:
        out = {}
        for name in JUDGE_FIELDS:
            value = obj.get(name)
            if not isinstance(value, int) or isinstance(value, bool):
                return None
            out[name] = value
        return out

    complete = [f for f in (intfields(obj) for obj in candidates) if f is not None]
    if not complete:
        last = candidates[-1]
        missing = [name for name in JUDGE_FIELDS if not isinstance(last.get(name), int)]
        raise JudgeFieldMissing(f"judge object lacks integer fields: {missing}")
    fields = complete[-1]
    completeness = fields["completeness"]
    a = fields["logical_inconsistencies"]
    b = fields["minor_errors"]
    c = fields["incorrect_statements"]
    if not 0 <= completeness <= COMPLETENESS_MAX:
        raise JudgeValueError(f"completeness {completeness} outside 0..{COMPLETENESS_MAX}")
    if min(a, b, c) < 0:
        raise JudgeValueError(f"negative defect count in {fields}")
    return completeness, a, b, c


REASK_TEXT = (
    "Your previous reply could not be parsed ({reason}). Reply again with only "
    "a single JSON object containing the integer fields "
    '"completeness", "logical_inconsistencies", "minor_errors", '
    'and "incorrect_statements".'
)

MAX_REASKS = 2


def _judge_call(gateway: Gateway, messages: tuple[ChatMessage, ...]) -> tuple[str, tuple[int, int, int, int]]:
    """Ask, then re-ask up to twice with the parse failure quoted back."""
    convo = list(messages)
    last_error: JudgeOutputError | None = None
    for _attempt in range(1 + MAX_REASKS):
        req = CompletionRequest(
            messages=tuple(convo),
            model_id=gateway.spec.chat_model,
            temperature=0.0,  # judging is always deterministic, whatever the run temperature
            max_output_tokens=gateway.spec.max_output_tokens,
        )
        raw = gateway.chat(req)
        try:
            return raw, parse_judge_output(raw)
        except JudgeOutputError as exc:
            last_error = exc
            convo.append(assistant(raw))
            convo.append(user(REASK_TEXT.format(reason=exc)))
    raise GradingError(
        f"judge output unparseable after {MAX_REASKS} re-asks: {last_error}"
    ) from last_error


def generate_key_answer(question: Question, gateway: Gateway) -> str:
    """Auto2's first step: the model writes its own key, seeded by the sample answer."""
    req = CompletionRequest(
        messages=(assistant(question.sample_answer), user(question.prompt)),
        model_id=gateway.spec.chat_model,
        temperature=0.0,
        max_output_tokens=gateway.spec.max_output_tokens,
    )
    return gateway.chat(req)


def auto_grade(
    question: Question,
    response: str,
    mode: Grader,
    gateway: Gateway,
    exemplar: Exemplar | None = None,
    *,
    level: ConditionLevel,
) -> GradeRecord:
    if mode not in AUTO_GRADERS:
        raise GradingError(f"auto_grade handles {[g.value for g in AUTO_GRADERS]}, not {mode.value}")
    if mode is Grader.AUTO3 and exemplar is None:
        raise GradingError("Auto3 requires a worked exemplar")
    if mode is not Grader.AUTO3 and exemplar is not None:
        raise GradingError(f"{mode.value} does not accept an exemplar")
    if not response:
        raise ValueError("cannot grade an empty response")

    if mode is Grader.AUTO2:
        key_answer = generate_key_answer(question, gateway)
    else:
        key_answer = question.sample_answer

    messages = build_judge_prompt(
        question.prompt,
        response,
        key_answer,
        exemplar=exemplar if mode is Grader.AUTO3 else None,
    )
    raw, (completeness, a, b, c) = _judge_call(gateway, messages)
    return GradeRecord(
        question_id=question.id,
        level=level,
        grader=mode,
        breakdown=score_rubric(completeness, a, b, c),
        raw_judge_output=raw,
        key_answer_used=key_answer,
    )


def grade_response_set(
    rs: ResponseSet,
    bank: QuestionBank,
    mode: Grader,
    gateway: Gateway,
    exemplar: Exemplar | None = None,
    max_workers: int | None = None,
) -> list[GradeRecord]:
    """Auto-grade every successful response, in canonical (bank × level) order."""
    records = rs.ok_records()
    workers = max_workers if max_workers is not None else gateway.spec.max_in_flight

    def one(rec):
        return auto_grade(
            bank.get(rec.question_id),
            rec.response,
            mode,
            gateway,
            exemplar=exemplar,
            level=rec.level,
        )

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(one, records))
