"""Condition matrix: pose every question under each hint condition.

A hint is injected as a *prior assistant turn*, so the model treats it as
something it already said; the user turn is always the question text,
verbatim.  The no-hint condition is a bare user turn.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .corpus import QuestionBank, Question, Tier
from .gateway import (
    ChatMessage,
    CompletionRequest,
    Gateway,
    ProviderError,
    UnrecordedRequestError,
    assistant,
    request_digest,
    user,
)


class ConditionLevel(str, Enum):
    NO_HINT = "NoHint"
    IRRELEVANT = "Irrelevant"
    VAGUE = "Vague"
    INSIGHTFUL = "Insightful"


LEVEL_ORDER = (
    ConditionLevel.NO_HINT,
    ConditionLevel.IRRELEVANT,
    ConditionLevel.VAGUE,
    ConditionLevel.INSIGHTFUL,
)

LEVEL_TIER = {
    ConditionLevel.IRRELEVANT: Tier.IRRELEVANT,
    ConditionLevel.VAGUE: Tier.VAGUE,
    ConditionLevel.INSIGHTFUL: Tier.INSIGHTFUL,
}


def parse_level(name: str) -> ConditionLevel:
    for level in ConditionLevel:
        if level.value == name:
            return level
    raise ValueError(f"unknown condition level {name!r}")


def hint_text_for(question: Question, level: ConditionLevel) -> str | None:
    """The hint a question supplies at this level; None for the bare condition."""
    if level is ConditionLevel.NO_HINT:
        return None
    return question.hint(LEVEL_TIER[level]).text


def build_messages(
    question: Question, level: ConditionLevel, hint_text: str | None = None
) -> tuple[ChatMessage, ...]:
    """Messages for one cell; pass hint_text to substitute the stored hint."""
    if level is ConditionLevel.NO_HINT:
        if hint_text is not None:
            raise ValueError("the bare condition takes no hint text")
        return (user(question.prompt),)
    text = hint_text if hint_text is not None else hint_text_for(question, level)
    return (assistant(text), user(question.prompt))


@dataclass(frozen=True)
class ResponseRecord:
    question_id: str
    level: ConditionLevel
    response: str = ""
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass
class ResponseSet:
    """All responses for one run, keyed by (question_id, level)."""

    run_id: str
    bank_digest: str
    provider_digest: str
    levels: tuple[ConditionLevel, ...]
    question_ids: tuple[str, ...]
    records: dict[tuple[str, ConditionLevel], ResponseRecord] = field(default_factory=dict)

    def get(self, question_id: str, level: ConditionLevel) -> ResponseRecord:
        return self.records[(question_id, level)]

    def ordered(self) -> list[ResponseRecord]:
        """Bank order, then level order — the canonical serialization order."""
        out = []
        for qid in self.question_ids:
            for level in self.levels:
                rec = self.records.get((qid, level))
                if rec is not None:
                    out.append(rec)
        return out

    def ok_records(self) -> list[ResponseRecord]:
        return [r for r in self.ordered() if r.ok]

    def failures(self) -> list[ResponseRecord]:
        return [r for r in self.ordered() if not r.ok]

    def __len__(self) -> int:
        return len(self.records)


def compute_run_id(
    bank_digest: str, provider_digest: str, levels: tuple[ConditionLevel, ...]
) -> str:
    # mode deliberately excluded: a replay carries the same identity as its source
    return request_digest(
        {
            "bank": bank_digest,
            "provider": provider_digest,
            "levels": [level.value for level in levels],
        }
    )[:16]


def run_matrix(
    bank: QuestionBank,
    gateway: Gateway,
    levels: tuple[ConditionLevel, ...] = LEVEL_ORDER,
    max_workers: int | None = None,
    hint_overrides: dict[str, dict[ConditionLevel, str]] | None = None,
) -> ResponseSet:
    """Pose every question at every level; provider failures become per-cell errors.

    hint_overrides maps question_id -> {level: substitute hint text}.
    """
    if not levels:
        raise ValueError("at least one condition level is required")
    if len(set(levels)) != len(levels):
        raise ValueError("duplicate condition levels")
    overrides = hint_overrides or {}
    workers = max_workers if max_workers is not None else gateway.spec.max_in_flight

    rs = ResponseSet(
        run_id=compute_run_id(bank.digest(), gateway.spec.digest(), tuple(levels)),
        bank_digest=bank.digest(),
        provider_digest=gateway.spec.digest(),
        levels=tuple(levels),
        question_ids=tuple(bank.ids()),
    )

    def one_cell(question: Question, level: ConditionLevel) -> ResponseRecord:
        override = overrides.get(question.id, {}).get(level)
        try:
            messages = build_messages(question, level, hint_text=override)
            req = CompletionRequest(
                messages=messages,
                model_id=gateway.spec.chat_model,
                temperature=gateway.spec.temperature,
                max_output_tokens=gateway.spec.max_output_tokens,
            )
            return ResponseRecord(question.id, level, response=gateway.chat(req))
        except (ProviderError, UnrecordedRequestError) as exc:
            return ResponseRecord(question.id, level, error=f"{type(exc).__name__}: {exc}")

    cells = [(q, level) for q in bank for level in levels]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(lambda cell: one_cell(*cell), cells))
    for rec in results:
        rs.records[(rec.question_id, rec.level)] = rec
    return rs


# --- serialization ------------------------------------------------------------


def export_responses(rs: ResponseSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in rs.ordered():
            fh.write(
                json.dumps(
                    {
                        "question_id": rec.question_id,
                        "level": rec.level.value,
                        "response": rec.response,
                        "error": rec.error,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def write_run_manifest(rs: ResponseSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "run_id": rs.run_id,
                "bank_digest": rs.bank_digest,
                "provider_digest": rs.provider_digest,
                "levels": [level.value for level in rs.levels],
                "question_ids": list(rs.question_ids),
            },
            fh,
            ensure_ascii=False,
            indent=2,
        )
        fh.write("\n")


def export_run(rs: ResponseSet, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    export_responses(rs, out / "responses.jsonl")
    write_run_manifest(rs, out / "run_manifest.json")


def load_run(out_dir: str | Path) -> ResponseSet:
    out = Path(out_dir)
    with open(out / "run_manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    rs = ResponseSet(
        run_id=manifest["run_id"],
        bank_digest=manifest["bank_digest"],
        provider_digest=manifest["provider_digest"],
        levels=tuple(parse_level(v) for v in manifest["levels"]),
        question_ids=tuple(manifest["question_ids"]),
    )
    with open(out / "responses.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            rec = ResponseRecord(
                question_id=obj["question_id"],
                level=parse_level(obj["level"]),
                response=obj.get("response", ""),
                error=obj.get("error", ""),
            )
            rs.records[(rec.question_id, rec.level)] = rec
    return rs
