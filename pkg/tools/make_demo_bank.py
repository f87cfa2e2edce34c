#!/usr/bin/env python3
"""Generate the shipped demo fixtures.

The 10-question demo bank carries hints with exact character lengths (and a
summaries file with matching compressed lengths) so the length-table CSV is
fully deterministic; the third hint is one shared off-topic passage.  Also
writes the single-question sample bank, its recorded grades, a worked grading
exemplar, and the feedback-engine seed files.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
FIXTURES = HERE.parent / "src" / "contextlab" / "fixtures"
DATA = HERE.parent / "tests" / "data"

# per question: (hint1, insight1, hint2, insight2) with hint1 = insightful tier,
# hint2 = vague tier; the shared third hint is 1284 chars, its summary 286.
LENGTHS = [
    (168, 167, 412, 275),
    (412, 275, 168, 167),
    (68, 56, 80, 68),
    (80, 68, 68, 56),
    (70, 69, 1687, 234),
    (1669, 235, 552, 174),
    (1852, 211, 927, 248),
    (2106, 203, 927, 248),
    (1849, 302, 1288, 194),
    (1617, 302, 1288, 194),
]
UNRELATED_LEN = 1284
UNRELATED_SUMMARY_LEN = 286

QUESTIONS = [
    ("q01", "Why does a charged balloon stick to a neutral wall?",
     "The balloon's surface charge polarizes the wall, and the induced surface charge attracts the balloon."),
    ("q02", "What keeps a satellite in a circular orbit from falling to the ground?",
     "Gravity supplies exactly the centripetal force needed for its tangential speed, so it keeps missing the ground."),
    ("q03", "Why does ice float on liquid water?",
     "The hydrogen-bonded crystal packs molecules less densely than the liquid, so solid water is lighter per volume."),
    ("q04", "Why is the daytime sky blue rather than white?",
     "Air molecules scatter short wavelengths far more strongly, so scattered blue light dominates the sky."),
    ("q05", "Why does a spinning figure skater speed up when pulling in their arms?",
     "Angular momentum is conserved; reducing the moment of inertia raises the angular velocity."),
    ("q06", "Why can a glass lens focus sunlight to a hot spot?",
     "Refraction bends parallel rays toward a common focal point, concentrating the radiant power on a small area."),
    ("q07", "Why do two ships moving side by side get pulled toward each other?",
     "Faster flow between the hulls lowers the pressure there, and the outside pressure pushes them together."),
    ("q08", "Why does a metal spoon feel colder than a wooden one at room temperature?",
     "Metal conducts heat away from the hand much faster, so the skin cools although both spoons are equally warm."),
    ("q09", "Why does sound travel faster in water than in air?",
     "Water is far stiffer relative to its density, and the wave speed grows with the stiffness-to-density ratio."),
    ("q10", "Why does a compass needle settle pointing roughly north?",
     "The needle is a small magnet; Earth's field exerts a torque until the needle aligns with the field lines."),
]

FILLER = (
    "Consider the energy balance first, then check which quantities the "
    "symmetry of the setup conserves, and only afterwards reach for the "
    "detailed equations of motion. "
)

UNRELATED_SEED = (
    "An aside on the history of laboratory glassware: early vacuum pumps "
    "used greased ground-glass joints, and the craft of the glassblower "
    "often decided which experiments were possible at all. "
)


def exact_text(prefix: str, length: int, filler: str = FILLER) -> str:
    """Deterministic single-line text of exactly `length` characters."""
    if length < 8:
        raise SystemExit(f"length {length} too short for a sensible hint")
    body = prefix + " "
    while len(body) < length:
        body += filler
    text = body[: length - 1].rstrip()
    text = text + "." * (length - len(text))
    assert len(text) == length and "\n" not in text
    return text


def main() -> int:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    DATA.mkdir(parents=True, exist_ok=True)

    unrelated = exact_text("Off-topic digression.", UNRELATED_LEN, UNRELATED_SEED)
    unrelated_summary = exact_text("Digression, condensed.", UNRELATED_SUMMARY_LEN, UNRELATED_SEED)

    bank_lines = []
    summaries = {}
    for (qid, question, answer), (h1, i1, h2, i2) in zip(QUESTIONS, LENGTHS):
        insightful = exact_text(f"Insight for {qid}: the governing principle decides it.", h1)
        vague = exact_text(f"Loose pointer for {qid}: think about what stays fixed.", h2)
        bank_lines.append(
            {
                "id": qid,
                "question": question,
                "answer": answer,
                "insightful_hint": insightful,
                "vague_hint": vague,
                "unrelated_hint": unrelated,
            }
        )
        summaries[qid] = {
            "Insightful": exact_text(f"Insight for {qid}, condensed.", i1),
            "Vague": exact_text(f"Pointer for {qid}, condensed.", i2),
            "Irrelevant": unrelated_summary,
        }

    with open(FIXTURES / "demo_bank.jsonl", "w", encoding="utf-8") as fh:
        for rec in bank_lines:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    with open(FIXTURES / "demo_summaries.json", "w", encoding="utf-8") as fh:
        json.dump(summaries, fh, ensure_ascii=False, indent=2)
        fh.write("\n")

    # golden length CSV, written straight from the target numbers
    rows = ["row,hint1,insight1,hint2,insight2,hint3,insight3"]
    for i, (h1, i1, h2, i2) in enumerate(LENGTHS, start=1):
        rows.append(f"{i},{h1},{i1},{h2},{i2},{UNRELATED_LEN},{UNRELATED_SUMMARY_LEN}")
    (DATA / "golden_lengths.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")

    # single-question sample bank with its recorded grade counts
    sample = {
        "id": "spin-directions",
        "question": (
            "A beam of silver atoms passes through a vertical field gradient "
            "and splits in two. If the apparatus is rotated so its axis points "
            "along any chosen direction, which of the candidate spin axes can "
            "a measurement report?"
        ),
        "answer": "All of the candidate directions can be reported.",
        "insightful_hint": exact_text(
            "The measurement postulate: the detector projects the state onto "
            "the eigenbasis of whatever axis the apparatus selects.", 168
        ),
        "vague_hint": exact_text(
            "Remember that what you measure depends on how the apparatus is "
            "oriented, not only on how the state was prepared.", 412
        ),
        "unrelated_hint": unrelated,
    }
    with open(FIXTURES / "sample_bank.jsonl", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(sample, ensure_ascii=False) + "\n")

    # counts chosen so the totals land on the recorded 6 / 7 / 7
    sample_grades = {
        "Manual": {"completeness": 2, "logic_inconsistencies": 1, "minor_errors": 0, "incorrect_statements": 1},
        "Auto1": {"completeness": 2, "logic_inconsistencies": 1, "minor_errors": 0, "incorrect_statements": 0},
        "Auto2": {"completeness": 3, "logic_inconsistencies": 1, "minor_errors": 0, "incorrect_statements": 1},
    }
    with open(FIXTURES / "sample_grades.json", "w", encoding="utf-8") as fh:
        json.dump(sample_grades, fh, indent=2)
        fh.write("\n")

    exemplar = {
        "question": sample["question"],
        "key_answer": sample["answer"],
        "response": (
            "Only the axis of the original field gradient can come out, "
            "because the beam already split along it."
        ),
        "completeness": 1,
        "logic_inconsistencies": 1,
        "minor_errors": 0,
        "incorrect_statements": 2,
        "rationale": (
            "The response picks one axis, missing that the rotated apparatus "
            "defines a new measurement basis: partial completeness, one "
            "logical inconsistency, two untrue claims."
        ),
    }
    with open(FIXTURES / "exemplar.json", "w", encoding="utf-8") as fh:
        json.dump(exemplar, fh, ensure_ascii=False, indent=2)
        fh.write("\n")

    # feedback-engine seeds: four users, question comments, endorsement events
    profiles = [
        {"user_id": "alice", "credibility": 0.8, "credential_bonus": 0.5, "experience_events": 10},
        {"user_id": "bob", "credibility": 0.2, "credential_bonus": 0.0, "experience_events": 0},
        {"user_id": "carol", "credibility": 0.9, "credential_bonus": 0.4, "experience_events": 30},
        {"user_id": "dan", "credibility": 0.25, "credential_bonus": 0.0, "experience_events": 5},
    ]
    with open(FIXTURES / "demo_profiles.jsonl", "w", encoding="utf-8") as fh:
        for p in profiles:
            fh.write(json.dumps(p) + "\n")

    comments = [
        {"comment_id": "c01", "author_id": "alice", "question_id": "q01",
         "text": "The wall has no net charge, so the effect must come from induced "
                 "polarization; the field of the balloon rearranges wall charges."},
        {"comment_id": "c02", "author_id": "bob", "question_id": "q01",
         "text": "Static electricity is basically tiny lightning, the balloon zaps "
                 "the wall and then glues itself there with leftover sparks."},
        {"comment_id": "c03", "author_id": "carol", "question_id": "q02",
         "text": "Treat the orbit as free fall with enough sideways speed: the "
                 "satellite accelerates toward Earth the whole time but the ground "
                 "curves away at the same rate, which is why the altitude holds."},
        {"comment_id": "c04", "author_id": "dan", "question_id": "q02",
         "text": "There is no gravity in space, so nothing pulls the satellite down."},
        {"comment_id": "c05", "author_id": "carol", "question_id": "q01",
         "text": "A quick way to see the sign: induced charge is always attracted, "
                 "never repelled, because the nearer induced charge is opposite."},
        {"comment_id": "e01", "author_id": "alice", "target_user_id": "bob",
         "question_id": "", "text": "This explanation is excellent and very clear."},
        {"comment_id": "e02", "author_id": "carol", "target_user_id": "dan",
         "question_id": "", "text": "Good catch on the reference frame, great point."},
        {"comment_id": "e03", "author_id": "bob", "target_user_id": "dan",
         "question_id": "", "text": "This take is brilliant, really helpful."},
        {"comment_id": "e04", "author_id": "alice", "target_user_id": "carol",
         "question_id": "", "text": "Wrong direction entirely, the argument is misleading."},
    ]
    with open(FIXTURES / "demo_comments.jsonl", "w", encoding="utf-8") as fh:
        for c in comments:
            fh.write(json.dumps(c, ensure_ascii=False) + "\n")

    print(f"fixtures -> {FIXTURES}")
    print(f"golden lengths -> {DATA / 'golden_lengths.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
