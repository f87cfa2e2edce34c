"""Statistics over grade records and the report renderers.

Both spread conventions are computed side by side: the mean table shows
mean ± sem (sem = sample std / sqrt(n), n-1 denominator) and the std table
shows the population standard deviation (n denominator).  All rendering
rounds half away from zero so golden files are stable across platforms.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass
from decimal import Decimal, ROUND_HALF_UP
from pathlib import Path

from .context import ConditionLevel, LEVEL_ORDER, LEVEL_TIER, run_matrix
from .corpus import QuestionBank, Tier, TIER_FIELDS, hint_length_table, length_table_csv
from .gateway import Gateway
from .grading import Exemplar, GradeRecord, Grader, grade_response_set

GRADER_ORDER = (Grader.MANUAL, Grader.AUTO1, Grader.AUTO2, Grader.AUTO3)

SCORE_MIN = 0
SCORE_MAX = 10


class AnalysisError(Exception):
    pass


# --- rounding -------------------------------------------------------------------


def round_half_away(x: float, places: int) -> Decimal:
    """Decimal rounding with halves moving away from zero (so 8.35 -> 8.4)."""
    quantum = Decimal(1).scaleb(-places)
    return Decimal(repr(x)).quantize(quantum, rounding=ROUND_HALF_UP)


def fmt(x: float, places: int) -> str:
    return str(round_half_away(x, places))


# --- score groups ---------------------------------------------------------------


@dataclass(frozen=True)
class ScoreGroup:
    grader: Grader
    level: ConditionLevel
    scores: tuple[int, ...]

    def __post_init__(self):
        for s in self.scores:
            if not isinstance(s, int) or isinstance(s, bool) or not SCORE_MIN <= s <= SCORE_MAX:
                raise AnalysisError(f"score {s!r} outside {SCORE_MIN}..{SCORE_MAX}")


@dataclass(frozen=True)
class GroupSummary:
    mean: float
    sem: float
    sample_std: float
    population_std: float
    n: int


def summarize_group(g: ScoreGroup) -> GroupSummary:
    if not g.scores:
        raise AnalysisError(f"empty score group {g.grader.value}/{g.level.value}")
    n = len(g.scores)
    mean = statistics.fmean(g.scores)
    sample_std = statistics.stdev(g.scores) if n > 1 else 0.0
    population_std = statistics.pstdev(g.scores)
    return GroupSummary(
        mean=mean,
        sem=sample_std / math.sqrt(n),
        sample_std=sample_std,
        population_std=population_std,
        n=n,
    )


def histogram(g: ScoreGroup) -> list[int]:
    """Counts for the 11 integer score bins 0..10."""
    if not g.scores:
        raise AnalysisError(f"empty score group {g.grader.value}/{g.level.value}")
    bins = [0] * (SCORE_MAX - SCORE_MIN + 1)
    for s in g.scores:
        bins[s - SCORE_MIN] += 1
    return bins


def groups_from_records(records: list[GradeRecord]) -> dict[tuple[Grader, ConditionLevel], ScoreGroup]:
    """Bucket grade totals by (grader, level), in canonical order."""
    totals: dict[tuple[Grader, ConditionLevel], list[int]] = {}
    for rec in records:
        totals.setdefault((rec.grader, rec.level), []).append(rec.breakdown.total)
    out = {}
    for grader in GRADER_ORDER:
        for level in LEVEL_ORDER:
            if (grader, level) in totals:
                out[(grader, level)] = ScoreGroup(grader, level, tuple(totals[(grader, level)]))
    return out


def _present_axes(
    keys,
) -> tuple[tuple[Grader, ...], tuple[ConditionLevel, ...]]:
    graders = tuple(g for g in GRADER_ORDER if any(k[0] is g for k in keys))
    levels = tuple(lv for lv in LEVEL_ORDER if any(k[1] is lv for k in keys))
    return graders, levels


# --- table rendering ------------------------------------------------------------


def _render_matrix(
    summaries: dict[tuple[Grader, ConditionLevel], GroupSummary],
    cell_fn,
    sort_key_fn,
) -> str:
    """Markdown matrix, one row per grader; per-row maxima bolded (ties all bold)."""
    graders, levels = _present_axes(summaries.keys())
    if not graders or not levels:
        raise AnalysisError("no score groups to render")
    for grader in graders:
        for level in levels:
            if (grader, level) not in summaries:
                raise AnalysisError(f"missing cell {grader.value}/{level.value}")
    lines = ["| Grader | " + " | ".join(lv.value for lv in levels) + " |"]
    lines.append("| --- |" + " --- |" * len(levels))
    for grader in graders:
        row_vals = {lv: sort_key_fn(summaries[(grader, lv)]) for lv in levels}
        best = max(row_vals.values())
        cells = []
        for lv in levels:
            text = cell_fn(summaries[(grader, lv)])
            cells.append(f"**{text}**" if row_vals[lv] == best else text)
        lines.append(f"| {grader.value} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def render_mean_table(summaries: dict[tuple[Grader, ConditionLevel], GroupSummary]) -> str:
    """Rows = graders, columns = levels, cells "mean ± sem" at one decimal."""
    return _render_matrix(
        summaries,
        cell_fn=lambda s: f"{fmt(s.mean, 1)} ± {fmt(s.sem, 1)}",
        sort_key_fn=lambda s: round_half_away(s.mean, 1),
    )


def render_std_table(summaries: dict[tuple[Grader, ConditionLevel], GroupSummary]) -> str:
    """Same matrix, cells = population standard deviation at two decimals."""
    return _render_matrix(
        summaries,
        cell_fn=lambda s: fmt(s.population_std, 2),
        sort_key_fn=lambda s: round_half_away(s.population_std, 2),
    )


def mean_table_csv(summaries: dict[tuple[Grader, ConditionLevel], GroupSummary]) -> str:
    """Long-format numeric export at full precision."""
    graders, levels = _present_axes(summaries.keys())
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["grader", "level", "n", "mean", "sem", "sample_std", "population_std"])
    for grader in graders:
        for level in levels:
            s = summaries.get((grader, level))
            if s is None:
                continue
            writer.writerow(
                [grader.value, level.value, s.n, repr(s.mean), repr(s.sem), repr(s.sample_std), repr(s.population_std)]
            )
    return buf.getvalue()


def histograms_csv(groups: dict[tuple[Grader, ConditionLevel], ScoreGroup]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["grader", "level", "bin", "count"])
    for (grader, level), group in groups.items():
        for score_bin, count in enumerate(histogram(group)):
            writer.writerow([grader.value, level.value, score_bin, count])
    return buf.getvalue()


def scores_csv(records: list[GradeRecord]) -> str:
    """One row per grade record: the per-question report."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["question_id", "level", "grader", "total"])
    ordered = sorted(
        records,
        key=lambda r: (r.question_id, LEVEL_ORDER.index(r.level), GRADER_ORDER.index(r.grader)),
    )
    for rec in ordered:
        writer.writerow([rec.question_id, rec.level.value, rec.grader.value, rec.breakdown.total])
    return buf.getvalue()


# --- grader agreement -------------------------------------------------------------


@dataclass(frozen=True)
class AgreementReport:
    gaps: dict[tuple[Grader, ConditionLevel], float]  # mean(manual) − mean(auto), overlap only
    overlap_counts: dict[Grader, int]
    level_ranking: dict[Grader, tuple[ConditionLevel, ...]]  # descending mean


def _totals_by_key(records: list[GradeRecord], grader: Grader) -> dict[tuple[str, ConditionLevel], int]:
    out: dict[tuple[str, ConditionLevel], int] = {}
    for rec in records:
        key = (rec.question_id, rec.level)
        if key in out:
            raise AnalysisError(
                f"duplicate grade for {grader.value} on {rec.question_id}/{rec.level.value}"
            )
        out[key] = rec.breakdown.total
    return out


def grader_agreement(records_by_grader: dict[Grader, list[GradeRecord]]) -> AgreementReport:
    if Grader.MANUAL not in records_by_grader or not records_by_grader[Grader.MANUAL]:
        raise AnalysisError("agreement needs Manual grades")
    autos = [g for g in GRADER_ORDER if g is not Grader.MANUAL and records_by_grader.get(g)]
    if not autos:
        raise AnalysisError("agreement needs at least one automated grader")
    manual = _totals_by_key(records_by_grader[Grader.MANUAL], Grader.MANUAL)

    gaps: dict[tuple[Grader, ConditionLevel], float] = {}
    overlap_counts: dict[Grader, int] = {}
    for grader in autos:
        auto = _totals_by_key(records_by_grader[grader], grader)
        shared = sorted(set(manual) & set(auto), key=lambda k: (k[0], LEVEL_ORDER.index(k[1])))
        overlap_counts[grader] = len(shared)
        if not shared:
            raise AnalysisError(f"no overlapping (question, level) keys between Manual and {grader.value}")
        for level in LEVEL_ORDER:
            keys = [k for k in shared if k[1] is level]
            if keys:
                gaps[(grader, level)] = statistics.fmean(
                    manual[k] - auto[k] for k in keys
                )

    level_ranking: dict[Grader, tuple[ConditionLevel, ...]] = {}
    for grader in GRADER_ORDER:
        records = records_by_grader.get(grader)
        if not records:
            continue
        means: dict[ConditionLevel, float] = {}
        for level in LEVEL_ORDER:
            totals = [r.breakdown.total for r in records if r.level is level]
            if totals:
                means[level] = statistics.fmean(totals)
        ranked = sorted(means, key=lambda lv: (-means[lv], LEVEL_ORDER.index(lv)))
        level_ranking[grader] = tuple(ranked)
    return AgreementReport(gaps=gaps, overlap_counts=overlap_counts, level_ranking=level_ranking)


def render_agreement_md(report: AgreementReport) -> str:
    lines = ["# Grader agreement", ""]
    autos = sorted(report.overlap_counts, key=GRADER_ORDER.index)
    lines.append("| Grader | Level | Manual − auto (mean gap) |")
    lines.append("| --- | --- | --- |")
    for grader in autos:
        for level in LEVEL_ORDER:
            gap = report.gaps.get((grader, level))
            if gap is not None:
                lines.append(f"| {grader.value} | {level.value} | {fmt(gap, 2)} |")
    lines.append("")
    for grader, ranking in report.level_ranking.items():
        order = " > ".join(lv.value for lv in ranking)
        lines.append(f"- {grader.value} level means, descending: {order}")
    for grader in autos:
        lines.append(f"- Overlap with Manual for {grader.value}: {report.overlap_counts[grader]} keys")
    return "\n".join(lines) + "\n"


# --- summarization experiment ------------------------------------------------------

COMPARISON_LEVELS = (ConditionLevel.IRRELEVANT, ConditionLevel.VAGUE, ConditionLevel.INSIGHTFUL)


@dataclass(frozen=True)
class ComparisonReport:
    baseline_grader: Grader
    summarized_grader: Grader
    levels: tuple[ConditionLevel, ...]
    baseline_means: dict[ConditionLevel, float | None]
    summarized_means: dict[ConditionLevel, float | None]
    length_csv: str
    incomplete: tuple[str, ...] = ()


@dataclass(frozen=True)
class ExperimentResult:
    report: ComparisonReport
    summaries: dict[str, dict[Tier, str]]
    baseline_grades: list[GradeRecord]
    summarized_grades: list[GradeRecord]


def _level_means(records: list[GradeRecord], levels) -> tuple[dict, list[str]]:
    means: dict[ConditionLevel, float | None] = {}
    notes = []
    for level in levels:
        totals = [r.breakdown.total for r in records if r.level is level]
        if totals:
            means[level] = statistics.fmean(totals)
        else:
            means[level] = None
            notes.append(f"no grades for level {level.value}")
    return means, notes


def run_summarization_experiment(
    bank: QuestionBank,
    gateway: Gateway,
    budget_chars: int,
    exemplar: Exemplar | None = None,
    baseline_grader: Grader = Grader.AUTO2,
    summarized_grader: Grader = Grader.AUTO3,
    levels: tuple[ConditionLevel, ...] = COMPARISON_LEVELS,
    max_workers: int | None = None,
) -> ExperimentResult:
    """Compress every hint, rerun the hinted conditions on the compressed
    versions, and grade both runs for a side-by-side comparison.

    The baseline is graded with ``baseline_grader`` and the summarized rerun
    with ``summarized_grader`` (pass the same one for an identity control).
    """
    if ConditionLevel.NO_HINT in levels:
        raise AnalysisError("the comparison covers hinted conditions only")

    summaries: dict[str, dict[Tier, str]] = {}
    for q in bank:
        summaries[q.id] = {
            tier: gateway.summarize(q.hint(tier).text, budget_chars) for tier in TIER_FIELDS
        }
    length_csv = length_table_csv(hint_length_table(bank, summaries))

    notes: list[str] = []
    baseline_rs = run_matrix(bank, gateway, levels, max_workers=max_workers)
    notes.extend(f"baseline response error: {r.question_id}/{r.level.value}" for r in baseline_rs.failures())
    baseline_grades = grade_response_set(
        baseline_rs, bank, baseline_grader, gateway,
        exemplar=exemplar if baseline_grader is Grader.AUTO3 else None,
        max_workers=max_workers,
    )

    overrides = {
        q.id: {level: summaries[q.id][LEVEL_TIER[level]] for level in levels} for q in bank
    }
    summarized_rs = run_matrix(bank, gateway, levels, max_workers=max_workers, hint_overrides=overrides)
    notes.extend(
        f"summarized response error: {r.question_id}/{r.level.value}" for r in summarized_rs.failures()
    )
    summarized_grades = grade_response_set(
        summarized_rs, bank, summarized_grader, gateway,
        exemplar=exemplar if summarized_grader is Grader.AUTO3 else None,
        max_workers=max_workers,
    )

    baseline_means, more = _level_means(baseline_grades, levels)
    notes.extend(f"baseline: {n}" for n in more)
    summarized_means, more = _level_means(summarized_grades, levels)
    notes.extend(f"summarized: {n}" for n in more)

    report = ComparisonReport(
        baseline_grader=baseline_grader,
        summarized_grader=summarized_grader,
        levels=tuple(levels),
        baseline_means=baseline_means,
        summarized_means=summarized_means,
        length_csv=length_csv,
        incomplete=tuple(notes),
    )
    return ExperimentResult(
        report=report,
        summaries=summaries,
        baseline_grades=baseline_grades,
        summarized_grades=summarized_grades,
    )


def render_comparison_md(report: ComparisonReport) -> str:
    lines = ["# Hint summarization comparison", ""]
    lines.append("| Grader | " + " | ".join(lv.value for lv in report.levels) + " |")
    lines.append("| --- |" + " --- |" * len(report.levels))

    def row(label: str, means: dict) -> str:
        rounded = {
            lv: (round_half_away(means[lv], 1) if means[lv] is not None else None)
            for lv in report.levels
        }
        present = [v for v in rounded.values() if v is not None]
        best = max(present) if present else None
        cells = []
        for lv in report.levels:
            if rounded[lv] is None:
                cells.append("n/a")
            elif rounded[lv] == best:
                cells.append(f"**{rounded[lv]}**")
            else:
                cells.append(str(rounded[lv]))
        return f"| {label} | " + " | ".join(cells) + " |"

    lines.append(row(report.baseline_grader.value, report.baseline_means))
    lines.append(row(f"{report.summarized_grader.value}+summaries", report.summarized_means))
    if report.incomplete:
        lines.append("")
        lines.append("Incomplete cells:")
        lines.extend(f"- {note}" for note in report.incomplete)
    return "\n".join(lines) + "\n"


# --- report bundle ----------------------------------------------------------------


def write_report_bundle(
    records: list[GradeRecord],
    out_dir: str | Path,
    comparison: ComparisonReport | None = None,
) -> None:
    """Write the full report directory; agreement degrades to a note when
    Manual grades are absent, tables hard-fail on an incomplete matrix."""
    if not records:
        raise AnalysisError("no grade records to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    groups = groups_from_records(records)
    summaries = {key: summarize_group(g) for key, g in groups.items()}

    (out / "mean_table.md").write_text(render_mean_table(summaries), encoding="utf-8")
    (out / "mean_table.csv").write_text(mean_table_csv(summaries), encoding="utf-8")
    (out / "std_table.md").write_text(render_std_table(summaries), encoding="utf-8")
    (out / "histograms.csv").write_text(histograms_csv(groups), encoding="utf-8")
    (out / "scores.csv").write_text(scores_csv(records), encoding="utf-8")

    by_grader: dict[Grader, list[GradeRecord]] = {}
    for rec in records:
        by_grader.setdefault(rec.grader, []).append(rec)
    try:
        agreement = grader_agreement(by_grader)
    except AnalysisError as exc:
        (out / "agreement.md").write_text(f"# Grader agreement\n\nNot computed: {exc}\n", encoding="utf-8")
    else:
        (out / "agreement.md").write_text(render_agreement_md(agreement), encoding="utf-8")

    if comparison is not None:
        (out / "comparison.md").write_text(render_comparison_md(comparison), encoding="utf-8")
    else:
        (out / "comparison.md").write_text(
            "# Hint summarization comparison\n\nNo summarization run in this report.\n",
            encoding="utf-8",
        )
