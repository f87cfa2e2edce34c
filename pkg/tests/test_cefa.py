import json

import pytest

from contextlab.cefa import (
    CefaError,
    Comment,
    CredibilityConfig,
    Insight,
    UserProfile,
    apply_events,
    contexts_to_overrides,
    distill,
    export_context,
    init_credibility,
    load_comments,
    load_insights,
    load_profiles,
    new_profile,
    optimize_prompt,
    process_comments,
    relevance_score,
    render_context_text,
    save_profiles,
    update_credibility,
    write_insights,
)
from contextlab.context import ConditionLevel
from contextlab.gateway import MockProvider


def _insight(cid, length, rel, cred, qid="q01"):
    return Insight(
        source_comment_id=cid,
        text="x" * length,
        char_len=length,
        question_id=qid,
        relevance=rel,
        author_credibility_at_scoring=cred,
    )


def _event(author, target, text, cid="e1"):
    return Comment(comment_id=cid, author_id=author, question_id="", text=text, target_user_id=target)


# --- initial credibility ------------------------------------------------------


def test_init_credibility_reference_points():
    assert init_credibility(0.0, 0) == 0.2
    assert init_credibility(0.5, 10) == pytest.approx(0.2 + 0.5 + 0.1)
    assert init_credibility(0.0, 30) == pytest.approx(0.5)
    assert init_credibility(0.0, 100) == pytest.approx(0.5)  # experience saturates
    assert init_credibility(0.9, 30) == 1.0  # capped


def test_init_credibility_validation():
    with pytest.raises(CefaError):
        init_credibility(1.5, 0)
    with pytest.raises(CefaError):
        init_credibility(0.0, -1)


def test_custom_config_changes_baseline():
    cfg = CredibilityConfig(base=0.1, experience_rate=0.02, experience_cap=10)
    assert init_credibility(0.0, 20, cfg) == pytest.approx(0.1 + 0.2)


def test_profile_validation():
    with pytest.raises(CefaError):
        UserProfile(user_id="u", credibility=1.2)
    with pytest.raises(CefaError):
        UserProfile(user_id="", credibility=0.5)


# --- credibility updates --------------------------------------------------------


def test_endorsement_lifts_target(make_gateway):
    g = make_gateway()
    profiles = {
        "author": UserProfile("author", 0.9),
        "target": UserProfile("target", 0.5),
    }
    update_credibility(profiles, _event("author", "target", "an excellent answer"), g)
    # mock sentiment: positive with confidence 0.95
    assert profiles["target"].credibility == pytest.approx(0.5 + 0.1 * 0.9 * 0.95)
    assert profiles["author"].credibility == 0.9


def test_update_caps_at_one(make_gateway):
    g = make_gateway()
    profiles = {"a": UserProfile("a", 1.0), "t": UserProfile("t", 0.98)}
    update_credibility(profiles, _event("a", "t", "a correct and helpful reply"), g)
    assert profiles["t"].credibility == 1.0


def test_negative_sentiment_never_lowers(make_gateway):
    g = make_gateway()
    profiles = {"a": UserProfile("a", 0.9), "t": UserProfile("t", 0.5)}
    update_credibility(profiles, _event("a", "t", "this is wrong and misleading"), g)
    assert profiles["t"].credibility == 0.5


def test_low_credibility_author_is_gated(make_gateway):
    g = make_gateway()
    profiles = {"a": UserProfile("a", 0.59), "t": UserProfile("t", 0.5)}
    update_credibility(profiles, _event("a", "t", "an excellent answer"), g)
    assert profiles["t"].credibility == 0.5
    # exactly at the gate counts
    profiles = {"a": UserProfile("a", 0.6), "t": UserProfile("t", 0.5)}
    update_credibility(profiles, _event("a", "t", "an excellent answer"), g)
    assert profiles["t"].credibility > 0.5


def test_update_event_validation(make_gateway):
    g = make_gateway()
    profiles = {"a": UserProfile("a", 0.9), "t": UserProfile("t", 0.5)}
    with pytest.raises(CefaError, match="does not address"):
        update_credibility(profiles, Comment("c", "a", "q01", "text"), g)
    with pytest.raises(CefaError, match="self-referential"):
        update_credibility(profiles, _event("a", "a", "nice"), g)
    with pytest.raises(CefaError, match="ghost"):
        update_credibility(profiles, _event("ghost", "t", "nice"), g)
    with pytest.raises(CefaError, match="nobody"):
        update_credibility(profiles, _event("a", "nobody", "nice"), g)


def test_apply_events_returns_deltas(make_gateway):
    g = make_gateway()
    profiles = {
        "a": UserProfile("a", 0.9),
        "b": UserProfile("b", 0.3),
        "c": UserProfile("c", 0.2),
    }
    events = [
        _event("a", "b", "an excellent answer", cid="e1"),
        Comment("q-comment", "a", "q01", "just a question note"),
        _event("b", "c", "a great reply", cid="e2"),  # gated: b below threshold
    ]
    deltas = apply_events(profiles, events, g)
    assert [d[0] for d in deltas] == ["e1"]
    cid, uid, old, new = deltas[0]
    assert (uid, old) == ("b", 0.3)
    assert profiles["b"].credibility == pytest.approx(new)
    assert profiles["c"].credibility == 0.2


# --- distillation and relevance ---------------------------------------------------


def test_distill_pass_through_and_truncation(make_gateway):
    g = make_gateway()
    short = Comment("c1", "a", "q01", "already short")
    ins = distill(short, 100, g)
    assert ins.text == "already short"
    assert ins.char_len == len("already short")
    long = Comment("c2", "a", "q01", "y" * 500)
    ins2 = distill(long, 40, g)
    assert ins2.char_len == 40


def test_relevance_self_similarity(make_gateway):
    g = make_gateway()
    assert relevance_score("some question text", "some question text", g) == pytest.approx(1.0, abs=1e-6)


def test_relevance_orthogonal_and_floor(make_gateway):
    provider = MockProvider(embeddings={"qa": [1.0, 0.0], "ib": [0.0, 1.0], "neg": [-1.0, 0.0]})
    g = make_gateway(provider=provider)
    assert relevance_score("qa", "ib", g) == 0.0
    assert relevance_score("qa", "neg", g) == 0.0  # negative cosine floored


def test_relevance_known_angle(make_gateway):
    provider = MockProvider(embeddings={"qa": [1.0, 0.0], "mix": [0.6, 0.8]})
    g = make_gateway(provider=provider)
    assert relevance_score("qa", "mix", g) == pytest.approx(0.6)
    assert relevance_score("mix", "qa", g) == pytest.approx(0.6)


def test_relevance_needs_text(make_gateway):
    with pytest.raises(ValueError):
        relevance_score("", "x", make_gateway())


def test_process_comments_scores_question_comments_only(make_gateway):
    g = make_gateway()
    comments = [
        Comment("c1", "alice", "q01", "the key point is the mechanism"),
        _event("alice", "bob", "an excellent answer", cid="e1"),
        Comment("c2", "bob", "q02", "another long observation " * 5),
    ]
    profiles = {"alice": UserProfile("alice", 0.9)}
    insights = process_comments(
        comments,
        {"q01": "Question one?", "q02": "Question two?"},
        profiles,
        g,
        distill_budget=60,
    )
    assert [i.source_comment_id for i in insights] == ["c1", "c2"]
    assert insights[0].author_credibility_at_scoring == 0.9
    assert all(0.0 <= i.relevance <= 1.0 for i in insights)
    assert all(i.char_len <= 60 for i in insights)
    # bob had no profile: created at the baseline
    assert profiles["bob"].credibility == pytest.approx(0.2)
    assert insights[1].author_credibility_at_scoring == pytest.approx(0.2)


def test_process_comments_rejects_unknown_question(make_gateway):
    g = make_gateway()
    comments = [Comment("c1", "alice", "q99", "text")]
    with pytest.raises(CefaError, match="q99"):
        process_comments(comments, {"q01": "?"}, {}, g, distill_budget=60)


# --- prompt assembly ----------------------------------------------------------------


def test_optimize_prefers_weight():
    a = _insight("a", 300, 0.9, 1.0)
    b = _insight("b", 300, 0.5, 1.0)
    ctx = optimize_prompt([b, a], budget_chars=400)
    assert [i.source_comment_id for i in ctx.insights] == ["a"]
    assert ctx.total_chars == 300


def test_optimize_skip_and_continue():
    big = _insight("big", 500, 0.9, 1.0)
    small = _insight("small", 100, 0.5, 1.0)
    ctx = optimize_prompt([big, small], budget_chars=400)
    assert [i.source_comment_id for i in ctx.insights] == ["small"]


def test_optimize_tie_breaks():
    long_a = _insight("aaa", 120, 0.8, 1.0)
    short = _insight("zzz", 80, 0.8, 1.0)
    ctx = optimize_prompt([long_a, short], budget_chars=1000)
    assert [i.source_comment_id for i in ctx.insights] == ["zzz", "aaa"]
    twin1 = _insight("id1", 80, 0.8, 1.0)
    twin2 = _insight("id2", 80, 0.8, 1.0)
    ctx = optimize_prompt([twin2, twin1], budget_chars=1000)
    assert [i.source_comment_id for i in ctx.insights] == ["id1", "id2"]


def test_optimize_budget_floor_and_empty():
    with pytest.raises(ValueError):
        optimize_prompt([], budget_chars=15)
    ctx = optimize_prompt([], budget_chars=16)
    assert ctx.insights == ()
    assert ctx.total_chars == 0


def test_optimize_requires_scored_insights():
    unscored = Insight(source_comment_id="u", text="xx", char_len=2)
    with pytest.raises(CefaError, match="not fully scored"):
        optimize_prompt([unscored], budget_chars=100)


def test_render_and_overrides():
    ctx = optimize_prompt([_insight("a", 20, 0.9, 1.0), _insight("b", 30, 0.1, 1.0)], 100)
    text = render_context_text(ctx)
    assert text == "x" * 20 + "\n\n" + "x" * 30
    overrides = contexts_to_overrides({"q01": ctx}, ConditionLevel.INSIGHTFUL)
    assert overrides == {"q01": {ConditionLevel.INSIGHTFUL: text}}
    empty = optimize_prompt([], 100)
    assert contexts_to_overrides({"q01": empty}, ConditionLevel.INSIGHTFUL) == {}


# --- stores -----------------------------------------------------------------------


def test_comment_store_round_trip(tmp_path):
    path = tmp_path / "comments.jsonl"
    path.write_text(
        json.dumps({"comment_id": "c1", "author_id": "a", "question_id": "q01", "text": "t"})
        + "\n"
        + json.dumps({"comment_id": "e1", "author_id": "a", "text": "nice", "target_user_id": "b"})
        + "\n",
        encoding="utf-8",
    )
    comments = load_comments(path)
    assert comments[0].question_id == "q01"
    assert comments[1].target_user_id == "b"
    path.write_text(
        json.dumps({"comment_id": "c1", "author_id": "a", "text": "t"}) + "\n" * 2
        + json.dumps({"comment_id": "c1", "author_id": "a", "text": "t"}) + "\n",
        encoding="utf-8",
    )
    with pytest.raises(CefaError, match="duplicate comment id"):
        load_comments(path)


def test_profile_store_round_trip(tmp_path):
    path = tmp_path / "profiles.jsonl"
    profiles = {
        "bob": new_profile("bob"),
        "alice": new_profile("alice", credential_bonus=0.5, experience_events=10),
    }
    save_profiles(profiles, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert [json.loads(l)["user_id"] for l in lines] == ["alice", "bob"]
    assert load_profiles(path) == profiles
    assert not list(tmp_path.glob(".profiles-*"))  # no temp droppings


def test_profile_store_rejects_bad_lines(tmp_path):
    path = tmp_path / "profiles.jsonl"
    path.write_text('{"user_id": "a"}\n', encoding="utf-8")
    with pytest.raises(CefaError, match="profiles.jsonl:1"):
        load_profiles(path)


def test_insight_store_round_trip(tmp_path):
    path = tmp_path / "insights.jsonl"
    insights = [_insight("a", 10, 0.5, 0.7), _insight("b", 20, 0.9, 0.2)]
    write_insights(insights, path)
    assert load_insights(path) == insights


def test_export_context_includes_weight(tmp_path):
    path = tmp_path / "context.json"
    ctx = optimize_prompt([_insight("a", 10, 0.5, 0.8)], 100)
    export_context(ctx, path)
    obj = json.loads(path.read_text(encoding="utf-8"))
    assert obj["budget_chars"] == 100
    assert obj["insights"][0]["weight"] == pytest.approx(0.4)
