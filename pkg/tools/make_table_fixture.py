#!/usr/bin/env python3
"""Generate the synthetic grade fixture and its golden report tables.

Everything here is computed independently of the package: direct-summation
statistics, Decimal half-away-from-zero rendering, and a hand-rolled table
renderer.  The test suite then renders the same records through the package
and demands byte identity with the goldens committed from this script.

For each (grader, level) cell we search for ten integer scores in 0..10
whose mean/sem round to the target "m ± e" at one decimal and whose
population std rounds to the target at two decimals.  With n = 10 the sum
S is pinned exactly by the mean; the sum of squares Q is then searched over
its feasible range, and a multiset realizing (S, Q) is built by pairwise
spread moves from the balanced configuration.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import sys
from decimal import Decimal, ROUND_HALF_UP
from pathlib import Path

HERE = Path(__file__).resolve().parent
DATA = HERE.parent / "tests" / "data"

N = 10
LEVELS = ("NoHint", "Irrelevant", "Vague", "Insightful")
GRADERS = ("Manual", "Auto1", "Auto2")

# (grader, level) -> (mean 1dp, sem 1dp, population std 2dp)
TARGETS = {
    ("Manual", "NoHint"): ("7.5", "0.6", "1.69"),
    ("Manual", "Irrelevant"): ("7.9", "0.6", "1.70"),
    ("Manual", "Vague"): ("7.9", "0.7", "1.97"),
    ("Manual", "Insightful"): ("8.4", "0.6", "1.69"),
    ("Auto1", "NoHint"): ("6.6", "0.6", "1.69"),
    ("Auto1", "Irrelevant"): ("6.8", "0.4", "1.17"),
    ("Auto1", "Vague"): ("6.6", "0.7", "2.11"),
    ("Auto1", "Insightful"): ("7.4", "0.6", "1.91"),
    ("Auto2", "NoHint"): ("6.4", "0.6", "1.85"),
    ("Auto2", "Irrelevant"): ("7.0", "0.4", "1.34"),
    ("Auto2", "Vague"): ("6.6", "0.7", "2.11"),
    ("Auto2", "Insightful"): ("7.6", "0.5", "1.43"),
}

# total -> (completeness, logical inconsistencies, minor errors, incorrect statements)
COUNTS_FOR_TOTAL = {
    10: (3, 0, 0, 0),
    9: (3, 0, 1, 0),
    8: (3, 0, 2, 0),
    7: (3, 1, 0, 1),
    6: (2, 1, 0, 1),
    5: (2, 1, 1, 1),
    4: (1, 1, 1, 1),
    3: (1, 2, 0, 1),
    2: (0, 2, 0, 1),
    1: (0, 2, 0, 2),
    0: (0, 2, 0, 3),
}


def rnd(x: float, places: int) -> str:
    return str(Decimal(repr(x)).quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP))


def stats_direct(xs: list[int]) -> tuple[float, float, float]:
    """(mean, sem, population std) via plain summation - the oracle route."""
    n = len(xs)
    mean = sum(xs) / n
    ss = sum((x - mean) ** 2 for x in xs)
    pstd = math.sqrt(ss / n)
    sstd = math.sqrt(ss / (n - 1)) if n > 1 else 0.0
    return mean, sstd / math.sqrt(n), pstd


def q_candidates(S: int, mean_t: str, sem_t: str, pstd_t: str) -> list[int]:
    """All sums-of-squares consistent with the printed mean/sem/pstd."""
    out = []
    base = S * S / N
    # population variance can't exceed (max spread)^2; search generously
    for Q in range(math.ceil(base), S * 10 + 1):
        if (Q - S) % 2 != 0:  # sum of squares shares parity with the sum
            continue
        var = (Q - base) / N
        if var < 0:
            continue
        pstd = math.sqrt(var)
        sem = math.sqrt((Q - base) / (N - 1)) / math.sqrt(N)
        if rnd(pstd, 2) == pstd_t and rnd(sem, 1) == sem_t and rnd(S / N, 1) == mean_t:
            out.append(Q)
    return out


def realize(S: int, Q: int, seed: int) -> list[int]:
    """Ten integers in 0..10 with sum S and sum of squares Q."""
    k, r = divmod(S, N)
    xs = [k + 1] * r + [k] * (N - r)  # balanced start: minimal sum of squares
    rng = random.Random(seed)

    def sumsq():
        return sum(x * x for x in xs)

    for _ in range(200000):
        cur = sumsq()
        if cur == Q:
            ordered = sorted(xs)
            assert sum(ordered) == S and all(0 <= x <= 10 for x in ordered)
            return ordered
        i, j = rng.randrange(N), rng.randrange(N)
        if i == j:
            continue
        # move one unit i -> j; changes sum of squares by 2*(xs[j] - xs[i]) + 2
        if xs[i] <= 0 or xs[j] >= 10:
            continue
        delta = 2 * (xs[j] - xs[i]) + 2
        if abs(cur + delta - Q) <= abs(cur - Q):
            xs[i] -= 1
            xs[j] += 1
    raise SystemExit(f"no multiset found for S={S} Q={Q}")


def build_cell(grader: str, level: str) -> list[int]:
    mean_t, sem_t, pstd_t = TARGETS[(grader, level)]
    S = int(Decimal(mean_t) * N)
    qs = q_candidates(S, mean_t, sem_t, pstd_t)
    if not qs:
        raise SystemExit(f"no feasible sum of squares for {grader}/{level}")
    # stable seed (hash() is randomized per process)
    seed = int(hashlib.sha256(f"{grader}/{level}".encode()).hexdigest()[:8], 16)
    scores = realize(S, qs[0], seed=seed)
    mean, sem, pstd = stats_direct(scores)
    assert rnd(mean, 1) == mean_t and rnd(sem, 1) == sem_t and rnd(pstd, 2) == pstd_t
    return scores


def render_tables(cells: dict[tuple[str, str], list[int]]) -> tuple[str, str]:
    """Golden mean and std tables, straight from the oracle statistics."""
    mean_lines = ["| Grader | " + " | ".join(LEVELS) + " |", "| --- |" + " --- |" * len(LEVELS)]
    std_lines = list(mean_lines)
    for grader in GRADERS:
        stats = {lv: stats_direct(cells[(grader, lv)]) for lv in LEVELS}
        mean_round = {lv: Decimal(rnd(stats[lv][0], 1)) for lv in LEVELS}
        pstd_round = {lv: Decimal(rnd(stats[lv][2], 2)) for lv in LEVELS}
        best_mean = max(mean_round.values())
        best_pstd = max(pstd_round.values())
        mean_cells = []
        std_cells = []
        for lv in LEVELS:
            m = f"{rnd(stats[lv][0], 1)} ± {rnd(stats[lv][1], 1)}"
            mean_cells.append(f"**{m}**" if mean_round[lv] == best_mean else m)
            p = rnd(stats[lv][2], 2)
            std_cells.append(f"**{p}**" if pstd_round[lv] == best_pstd else p)
        mean_lines.append(f"| {grader} | " + " | ".join(mean_cells) + " |")
        std_lines.append(f"| {grader} | " + " | ".join(std_cells) + " |")
    return "\n".join(mean_lines) + "\n", "\n".join(std_lines) + "\n"


def grade_record(qid: str, level: str, grader: str, total: int) -> dict:
    comp, a, b, c = COUNTS_FOR_TOTAL[total]
    logic = max(0, 4 - 2 * a - b)
    truth = max(0, 3 - c)
    assert comp + logic + truth == total
    counts_json = json.dumps(
        {
            "completeness": comp,
            "logical_inconsistencies": a,
            "minor_errors": b,
            "incorrect_statements": c,
        }
    )
    return {
        "question_id": qid,
        "level": level,
        "grader": grader,
        "completeness": comp,
        "logic_inconsistencies": a,
        "minor_errors": b,
        "incorrect_statements": c,
        "logic": logic,
        "truthfulness": truth,
        "total": total,
        "raw_judge_output": "" if grader == "Manual" else counts_json,
        "key_answer_used": "" if grader == "Manual" else "fixture key answer",
    }


def main() -> int:
    DATA.mkdir(parents=True, exist_ok=True)
    cells = {key: build_cell(*key) for key in TARGETS}

    records = []
    for grader in GRADERS:
        for level in LEVELS:
            for idx, total in enumerate(cells[(grader, level)], start=1):
                records.append(grade_record(f"q{idx:02d}", level, grader, total))
    with open(DATA / "table1_grades.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")

    mean_md, std_md = render_tables(cells)
    (DATA / "golden_mean_table.md").write_text(mean_md, encoding="utf-8")
    (DATA / "golden_std_table.md").write_text(std_md, encoding="utf-8")
    print(mean_md)
    print(std_md)
    print(f"{len(records)} records -> {DATA / 'table1_grades.jsonl'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
