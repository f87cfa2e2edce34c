"""Feedback engine: distill comments, score relevance, track credibility,
and pack the best insights into a prompt context.

Credibility lives in [0,1].  A comment addressed at another user raises the
target's credibility only when the comment's sentiment is positive AND the
author is already credible (>= the gate threshold); nothing ever lowers a
score.  Prompt assembly is a greedy weighted knapsack over
relevance x credibility with skip-and-continue under a character budget.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from .gateway import Gateway


class CefaError(Exception):
    pass


@dataclass(frozen=True)
class CredibilityConfig:
    base: float = 0.2
    eta: float = 0.1  # update step size
    theta_high: float = 0.6  # author gate threshold
    experience_rate: float = 0.01
    experience_cap: int = 30


DEFAULT_CONFIG = CredibilityConfig()


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    credibility: float
    credential_bonus: float = 0.0
    experience_events: int = 0

    def __post_init__(self):
        if not self.user_id:
            raise CefaError("user_id must be nonempty")
        if not 0.0 <= self.credibility <= 1.0:
            raise CefaError(f"credibility {self.credibility} outside [0,1] for {self.user_id}")
        if not 0.0 <= self.credential_bonus <= 1.0:
            raise CefaError(f"credential_bonus {self.credential_bonus} outside [0,1]")
        if self.experience_events < 0:
            raise CefaError("experience_events must be nonnegative")


@dataclass(frozen=True)
class Comment:
    comment_id: str
    author_id: str
    question_id: str
    text: str
    target_user_id: str = ""  # set when the comment addresses another user

    def __post_init__(self):
        if not self.text:
            raise CefaError(f"comment {self.comment_id!r} has empty text")
        if not self.comment_id or not self.author_id:
            raise CefaError("comment_id and author_id must be nonempty")


@dataclass(frozen=True)
class Insight:
    source_comment_id: str
    text: str
    char_len: int
    question_id: str = ""
    relevance: float | None = None
    author_credibility_at_scoring: float | None = None

    def __post_init__(self):
        if self.char_len != len(self.text):
            raise CefaError(
                f"insight {self.source_comment_id}: char_len {self.char_len} != len(text) {len(self.text)}"
            )
        for name, value in (
            ("relevance", self.relevance),
            ("author_credibility_at_scoring", self.author_credibility_at_scoring),
        ):
            if value is not None and not 0.0 <= value <= 1.0:
                raise CefaError(f"insight {name} {value} outside [0,1]")

    @property
    def weight(self) -> float:
        if self.relevance is None or self.author_credibility_at_scoring is None:
            raise CefaError(f"insight {self.source_comment_id} is not fully scored")
        return self.relevance * self.author_credibility_at_scoring


@dataclass(frozen=True)
class PromptContext:
    insights: tuple[Insight, ...]  # descending weight order
    total_chars: int
    budget_chars: int


# --- credibility ---------------------------------------------------------------


def init_credibility(
    credential_bonus: float, experience_events: int, config: CredibilityConfig = DEFAULT_CONFIG
) -> float:
    if not 0.0 <= credential_bonus <= 1.0:
        raise CefaError(f"credential_bonus {credential_bonus} outside [0,1]")
    if experience_events < 0:
        raise CefaError("experience_events must be nonnegative")
    seniority = config.experience_rate * min(experience_events, config.experience_cap)
    return min(1.0, config.base + credential_bonus + seniority)


def new_profile(
    user_id: str,
    credential_bonus: float = 0.0,
    experience_events: int = 0,
    config: CredibilityConfig = DEFAULT_CONFIG,
) -> UserProfile:
    return UserProfile(
        user_id=user_id,
        credibility=init_credibility(credential_bonus, experience_events, config),
        credential_bonus=credential_bonus,
        experience_events=experience_events,
    )


def update_credibility(
    profiles: dict[str, UserProfile],
    event: Comment,
    gateway: Gateway,
    config: CredibilityConfig = DEFAULT_CONFIG,
) -> dict[str, UserProfile]:
    """Apply one endorsement event in place; at most the target's score moves, upward."""
    if not event.target_user_id:
        raise CefaError(f"comment {event.comment_id} does not address a user")
    if event.author_id == event.target_user_id:
        raise CefaError(f"comment {event.comment_id} is self-referential")
    author = profiles.get(event.author_id)
    target = profiles.get(event.target_user_id)
    if author is None:
        raise CefaError(f"unknown author {event.author_id!r}")
    if target is None:
        raise CefaError(f"unknown target user {event.target_user_id!r}")

    s = gateway.sentiment(event.text)
    if s.label == "positive" and author.credibility >= config.theta_high:
        lifted = min(1.0, target.credibility + config.eta * author.credibility * s.confidence)
        profiles[target.user_id] = replace(target, credibility=lifted)
    return profiles


def apply_events(
    profiles: dict[str, UserProfile],
    events: list[Comment],
    gateway: Gateway,
    config: CredibilityConfig = DEFAULT_CONFIG,
) -> list[tuple[str, str, float, float]]:
    """Run all addressed comments in ingestion order; returns (comment_id, user, old, new) deltas."""
    deltas = []
    for event in events:
        if not event.target_user_id:
            continue
        before = profiles[event.target_user_id].credibility if event.target_user_id in profiles else None
        update_credibility(profiles, event, gateway, config)
        after = profiles[event.target_user_id].credibility
        if before is not None and after != before:
            deltas.append((event.comment_id, event.target_user_id, before, after))
    return deltas


# --- distillation and relevance ------------------------------------------------


def distill(comment: Comment, budget_chars: int, gateway: Gateway) -> Insight:
    """Compress one comment to the character budget; relevance is scored later."""
    text = gateway.summarize(comment.text, budget_chars)
    return Insight(
        source_comment_id=comment.comment_id,
        text=text,
        char_len=len(text),
        question_id=comment.question_id,
    )


def relevance_score(question_text: str, insight_text: str, gateway: Gateway) -> float:
    """Cosine of the two embeddings, floored at 0 (vectors arrive unit-length)."""
    if not question_text or not insight_text:
        raise ValueError("relevance needs two nonempty texts")
    q = gateway.embed(question_text)
    i = gateway.embed(insight_text)
    if len(q) != len(i):
        raise CefaError(f"embedding dimension mismatch: {len(q)} vs {len(i)}")
    cos = math.fsum(x * y for x, y in zip(q, i))
    return max(0.0, min(1.0, cos))


def process_comments(
    comments: list[Comment],
    question_texts: dict[str, str],
    profiles: dict[str, UserProfile],
    gateway: Gateway,
    distill_budget: int,
    config: CredibilityConfig = DEFAULT_CONFIG,
    max_workers: int | None = None,
) -> list[Insight]:
    """Distill and score every question-directed comment (bounded fan-out).

    Comments addressed at users are credibility events, not insight sources,
    and are skipped here; unknown authors get a fresh baseline profile.
    """
    sources = [c for c in comments if not c.target_user_id]
    for c in sources:
        if c.question_id not in question_texts:
            raise CefaError(f"comment {c.comment_id} references unknown question {c.question_id!r}")
        if c.author_id not in profiles:
            profiles[c.author_id] = new_profile(c.author_id, config=config)
    workers = max_workers if max_workers is not None else gateway.spec.max_in_flight

    def one(comment: Comment) -> Insight:
        raw = distill(comment, distill_budget, gateway)
        rel = relevance_score(question_texts[comment.question_id], raw.text, gateway)
        return replace(
            raw,
            relevance=rel,
            author_credibility_at_scoring=profiles[comment.author_id].credibility,
        )

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(one, sources))


# --- prompt assembly ---------------------------------------------------------


def optimize_prompt(insights: list[Insight], budget_chars: int) -> PromptContext:
    """Greedy pack by weight = relevance x credibility under the character budget.

    Ties go to the shorter insight, then the smaller comment id; an insight
    that does not fit is skipped and selection continues down the ranking.
    """
    if budget_chars < 16:
        raise ValueError(f"context budget {budget_chars} is degenerate (minimum 16)")
    ranked = sorted(insights, key=lambda i: (-i.weight, i.char_len, i.source_comment_id))
    selected: list[Insight] = []
    total = 0
    for insight in ranked:
        if total + insight.char_len <= budget_chars:
            selected.append(insight)
            total += insight.char_len
    return PromptContext(insights=tuple(selected), total_chars=total, budget_chars=budget_chars)


def render_context_text(ctx: PromptContext) -> str:
    return "\n\n".join(i.text for i in ctx.insights)


def contexts_to_overrides(contexts: dict[str, PromptContext], level) -> dict[str, dict]:
    """Overrides for run_matrix_with_overrides: question_id -> {level: packed text}."""
    out = {}
    for qid, ctx in contexts.items():
        if ctx.insights:
            out[qid] = {level: render_context_text(ctx)}
    return out


# --- file stores ---------------------------------------------------------------


def load_comments(path: str | Path) -> list[Comment]:
    comments = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                comment = Comment(
                    comment_id=obj["comment_id"],
                    author_id=obj["author_id"],
                    question_id=obj.get("question_id", ""),
                    text=obj["text"],
                    target_user_id=obj.get("target_user_id", ""),
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CefaError(f"{Path(path).name}:{lineno}: bad comment record ({exc})") from exc
            if comment.comment_id in seen:
                raise CefaError(f"{Path(path).name}:{lineno}: duplicate comment id {comment.comment_id!r}")
            seen.add(comment.comment_id)
            comments.append(comment)
    return comments


def load_profiles(path: str | Path) -> dict[str, UserProfile]:
    profiles: dict[str, UserProfile] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                profile = UserProfile(
                    user_id=obj["user_id"],
                    credibility=float(obj["credibility"]),
                    credential_bonus=float(obj.get("credential_bonus", 0.0)),
                    experience_events=int(obj.get("experience_events", 0)),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CefaError(f"{Path(path).name}:{lineno}: bad profile record ({exc})") from exc
            if profile.user_id in profiles:
                raise CefaError(f"{Path(path).name}:{lineno}: duplicate user id {profile.user_id!r}")
            profiles[profile.user_id] = profile
    return profiles


def save_profiles(profiles: dict[str, UserProfile], path: str | Path) -> None:
    """Rewrite the whole store atomically (write-temp-then-rename), sorted by user id."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=".profiles-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for user_id in sorted(profiles):
                p = profiles[user_id]
                fh.write(
                    json.dumps(
                        {
                            "user_id": p.user_id,
                            "credibility": p.credibility,
                            "credential_bonus": p.credential_bonus,
                            "experience_events": p.experience_events,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_insights(insights: list[Insight], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i in insights:
            fh.write(
                json.dumps(
                    {
                        "source_comment_id": i.source_comment_id,
                        "text": i.text,
                        "char_len": i.char_len,
                        "question_id": i.question_id,
                        "relevance": i.relevance,
                        "author_credibility_at_scoring": i.author_credibility_at_scoring,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_insights(path: str | Path) -> list[Insight]:
    insights = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                insights.append(
                    Insight(
                        source_comment_id=obj["source_comment_id"],
                        text=obj["text"],
                        char_len=int(obj["char_len"]),
                        question_id=obj.get("question_id", ""),
                        relevance=obj.get("relevance"),
                        author_credibility_at_scoring=obj.get("author_credibility_at_scoring"),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, CefaError) as exc:
                raise CefaError(f"{Path(path).name}:{lineno}: bad insight record ({exc})") from exc
    return insights


def export_context(ctx: PromptContext, path: str | Path) -> None:
    obj = {
        "budget_chars": ctx.budget_chars,
        "total_chars": ctx.total_chars,
        "insights": [
            {
                "source_comment_id": i.source_comment_id,
                "text": i.text,
                "char_len": i.char_len,
                "question_id": i.question_id,
                "relevance": i.relevance,
                "author_credibility_at_scoring": i.author_credibility_at_scoring,
                "weight": i.weight,
            }
            for i in ctx.insights
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, ensure_ascii=False, indent=2)
        fh.write("\n")
