"""Command-line entry point.

Exit codes are a stable contract for scripting:
0 success, 1 usage, 2 data validation, 3 configuration/credentials,
4 provider failure after retries.

Each run writes into a fresh directory named by the config digest, treated
as immutable once complete; grading and reporting add files next to the run
they consume.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import cefa as cefa_mod
from .analysis import (
    AnalysisError,
    COMPARISON_LEVELS,
    render_comparison_md,
    run_summarization_experiment,
    write_report_bundle,
)
from .config import MODES, RunConfig, apply_overrides, load_config, validate_config
from .context import (
    ConditionLevel,
    LEVEL_ORDER,
    export_run,
    load_run,
    parse_level,
    run_matrix,
)
from .corpus import BankError, QuestionBank, load_bank
from .gateway import (
    ConfigurationError,
    Gateway,
    MockProvider,
    ProviderError,
    ProviderSpec,
    UnrecordedRequestError,
    configure_provider,
)
from .grading import (
    Grader,
    GradingError,
    GradingSheet,
    SheetEntry,
    grade_response_set,
    ingest_manual_grades,
    load_exemplar,
    load_grade_records,
    load_sheet_key,
    make_grading_sheet,
    parse_grader,
    read_score_csv,
    write_grade_records,
    write_sheet_files,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CONFIG = 3
EXIT_PROVIDER = 4


class _UsageError(Exception):
    pass


class _DataError(Exception):
    """Input files missing or malformed at the command level."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); keep 1 for usage
        raise _UsageError(message)


def _utcnow() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


class DirLock:
    """One command at a time per output directory."""

    def __init__(self, directory: Path):
        self.path = Path(directory) / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigurationError(
                f"another command holds the lock on {self.path.parent} "
                f"(remove {self.path.name} if it is stale)"
            ) from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        try:
            self.path.unlink()
        except FileNotFoundError:
            pass


# --- argument surface ---------------------------------------------------------


def build_parser() -> _Parser:
    shared = _Parser(add_help=False)
    # SUPPRESS so values set before the subcommand survive subparser defaults
    shared.add_argument("--config", default=argparse.SUPPRESS, help="TOML config file")
    shared.add_argument("--mode", choices=MODES, default=argparse.SUPPRESS)
    shared.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    shared.add_argument("--out", default=argparse.SUPPRESS, help="output directory root")
    shared.add_argument("--ledger", default=argparse.SUPPRESS, help="input call ledger")

    parser = _Parser(prog="contextlab", parents=[shared])
    sub = parser.add_subparsers(dest="command")

    sub.add_parser("validate", parents=[shared], help="check config and bank")

    p_run = sub.add_parser("run", parents=[shared], help="pose every question at every level")
    p_run.add_argument("--overrides", help="JSON hint-override file (question_id -> level -> text)")

    p_grade = sub.add_parser("grade", parents=[shared], help="grade a completed run")
    p_grade.add_argument("--grader", required=True, help="manual | auto1 | auto2 | auto3")
    p_grade.add_argument("--run", help="run directory (default: the config's run dir)")
    p_grade.add_argument("--scores", help="filled score CSV (manual grading, second phase)")
    p_grade.add_argument("--exemplar", help="worked exemplar JSON (required for auto3)")

    p_report = sub.add_parser("report", parents=[shared], help="render the report bundle")
    p_report.add_argument("--run", help="run directory containing grades_*.jsonl")
    p_report.add_argument("--grades", nargs="+", help="explicit grade files")

    p_cefa = sub.add_parser("cefa", parents=[shared], help="feedback-engine pipeline")
    p_cefa.add_argument("step", choices=["ingest", "score", "optimize"])
    p_cefa.add_argument("--comments", help="comment stream (JSONL)")
    p_cefa.add_argument("--profiles", help="profile store (JSONL)")
    p_cefa.add_argument("--insights", help="insight file (output of score, input of optimize)")
    p_cefa.add_argument("--level", default=ConditionLevel.INSIGHTFUL.value,
                        help="condition level the optimized context overrides")
    p_cefa.add_argument("--create-missing", action="store_true",
                        help="create baseline profiles for unknown users in events")

    p_exp = sub.add_parser(
        "summarize-experiment", parents=[shared],
        help="compress hints, rerun, and compare grading side by side",
    )
    p_exp.add_argument("--baseline", default=Grader.AUTO2.value)
    p_exp.add_argument("--summarized", default=Grader.AUTO3.value)

    return parser


def _load_cfg(args) -> RunConfig:
    config_path = getattr(args, "config", None)
    if not config_path:
        raise _UsageError("--config PATH is required")
    cfg = load_config(config_path)
    return apply_overrides(
        cfg,
        mode=getattr(args, "mode", None),
        seed=getattr(args, "seed", None),
        out=getattr(args, "out", None),
        ledger=getattr(args, "ledger", None),
    )


def _load_bank_checked(cfg: RunConfig) -> QuestionBank:
    path = cfg.resolve(cfg.bank_path)
    if not Path(path).exists():
        raise ConfigurationError(f"bank file not found: {path}")
    return load_bank(path)


def _run_dir(cfg: RunConfig) -> Path:
    # output_dir is CWD-relative by design; only input paths are config-relative
    return Path(cfg.output_dir) / f"run-{cfg.digest()[:12]}"


def _gateway(cfg: RunConfig, ledger_in: str | None, ledger_out: Path | None) -> Gateway:
    spec = dataclasses.replace(cfg.provider, ledger_path=ledger_in or "")
    return configure_provider(spec, ledger_out=ledger_out)


def _stage_manifest(gw: Gateway, cfg: RunConfig, bank: QuestionBank) -> None:
    gw.set_manifest(
        {
            "config_digest": cfg.digest(),
            "bank_digest": bank.digest(),
            "started_at": _utcnow(),
        }
    )


# --- commands ----------------------------------------------------------------


def _cmd_validate(cfg: RunConfig, args) -> int:
    problems = validate_config(cfg)
    if cfg.provider.mode in ("live", "record"):
        for env in (cfg.provider.chat_key_env, cfg.provider.infer_key_env):
            if not os.environ.get(env):
                problems.append(f"missing credential: set {env}")
    if problems:
        for p in problems:
            print(f"config: {p}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        bank = load_bank(cfg.resolve(cfg.bank_path))
    except BankError as exc:
        print(f"bank: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(f"ok: {len(bank)} questions in {cfg.bank_path}; config digest {cfg.digest()[:12]}")
    return EXIT_OK


def _load_overrides(path: str) -> dict[str, dict[ConditionLevel, str]]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    out: dict[str, dict[ConditionLevel, str]] = {}
    for qid, per_level in raw.items():
        out[qid] = {parse_level(name): text for name, text in per_level.items()}
    return out


def _cmd_run(cfg: RunConfig, args) -> int:
    bank = _load_bank_checked(cfg)
    run_dir = _run_dir(cfg)
    if (run_dir / "run_manifest.json").exists():
        raise ConfigurationError(
            f"{run_dir} already holds a completed run (runs are immutable; change seed/out)"
        )
    overrides = _load_overrides(getattr(args, "overrides", None)) if getattr(args, "overrides", None) else None
    run_dir.mkdir(parents=True, exist_ok=True)
    with DirLock(run_dir):
        ledger_in = cfg.resolve(cfg.provider.ledger_path) or None
        with _gateway(cfg, ledger_in, run_dir / "ledger.jsonl") as gw:
            _stage_manifest(gw, cfg, bank)
            rs = run_matrix(bank, gw, cfg.levels, hint_overrides=overrides)
        export_run(rs, run_dir)
    failures = rs.failures()
    if failures and len(failures) == len(rs.records):
        for rec in failures:
            print(f"failed: {rec.question_id}/{rec.level.value}: {rec.error}", file=sys.stderr)
        print("every cell failed; see errors above", file=sys.stderr)
        return EXIT_PROVIDER
    print(f"run {rs.run_id}: {len(rs)} cells -> {run_dir}")
    if failures:
        print(f"warning: {len(failures)} cells failed; rerun in record mode to fill them in", file=sys.stderr)
    return EXIT_OK


def _resolve_run_dir(cfg: RunConfig, args) -> Path:
    run_dir = Path(args.run) if getattr(args, "run", None) else _run_dir(cfg)
    if not (run_dir / "run_manifest.json").exists():
        raise _DataError(f"{run_dir} has no run_manifest.json; run `contextlab run` first")
    return run_dir


def _rebuild_sheet(run_dir: Path, rs) -> GradingSheet:
    seed, key = load_sheet_key(run_dir / "manual" / "sheet_key.json")
    entries = []
    for position in sorted(key):
        qid, level = key[position]
        entries.append(SheetEntry(position=position, response=rs.get(qid, level).response))
    return GradingSheet(entries=tuple(entries), permutation_seed=seed, key=key)


def _canonical_grade_order(records, bank: QuestionBank):
    index = {qid: i for i, qid in enumerate(bank.ids())}
    return sorted(records, key=lambda r: (index.get(r.question_id, len(index)), LEVEL_ORDER.index(r.level)))


def _parse_choice(parse_fn, value: str) -> object:
    try:
        return parse_fn(value)
    except ValueError as exc:  # bad flag value is a usage error, not bad data
        raise _UsageError(str(exc)) from exc


def _cmd_grade(cfg: RunConfig, args) -> int:
    grader = _parse_choice(parse_grader, args.grader)
    bank = _load_bank_checked(cfg)
    run_dir = _resolve_run_dir(cfg, args)
    rs = load_run(run_dir)

    if grader is Grader.MANUAL:
        if not getattr(args, "scores", None):
            sheet = make_grading_sheet(rs, cfg.seed)
            write_sheet_files(sheet, run_dir / "manual", bank)
            print(f"blind sheet -> {run_dir / 'manual' / 'sheet.txt'}")
            print(f"enter counts in {run_dir / 'manual' / 'scores_template.csv'} and rerun with --scores")
            return EXIT_OK
        if not Path(args.scores).exists():
            raise _DataError(f"score file not found: {args.scores}")
        if not (run_dir / "manual" / "sheet_key.json").exists():
            raise _DataError("no sheet_key.json; generate the sheet first (grade --grader manual)")
        sheet = _rebuild_sheet(run_dir, rs)
        records = ingest_manual_grades(sheet, read_score_csv(args.scores))
    else:
        exemplar = None
        exemplar_path = getattr(args, "exemplar", None) or cfg.resolve(cfg.exemplar_path)
        if grader is Grader.AUTO3:
            if not exemplar_path or not Path(exemplar_path).exists():
                raise ConfigurationError("auto3 needs --exemplar (or exemplar= in the config)")
            exemplar = load_exemplar(exemplar_path)
        ledger_in = cfg.resolve(cfg.provider.ledger_path) or str(run_dir / "ledger.jsonl")
        ledger_out = None if cfg.provider.mode == "replay" else run_dir / "ledger.jsonl"
        with DirLock(run_dir):
            with _gateway(cfg, ledger_in, ledger_out) as gw:
                records = grade_response_set(rs, bank, grader, gw, exemplar=exemplar)

    records = _canonical_grade_order(records, bank)
    out_path = run_dir / f"grades_{grader.value.lower()}.jsonl"
    write_grade_records(records, out_path)
    print(f"{len(records)} {grader.value} grade records -> {out_path}")
    return EXIT_OK


def _cmd_report(cfg: RunConfig, args) -> int:
    if getattr(args, "grades", None):
        grade_files = [Path(p) for p in args.grades]
        out_dir = Path(cfg.output_dir) / "report"
    else:
        run_dir = _resolve_run_dir(cfg, args)
        grade_files = sorted(run_dir.glob("grades_*.jsonl"))
        out_dir = run_dir / "report"
    if not grade_files:
        raise _DataError("no grade files found; run `contextlab grade` first")
    records = []
    for path in grade_files:
        if not path.exists():
            raise _DataError(f"grade file not found: {path}")
        records.extend(load_grade_records(path))
    if not records:
        raise _DataError("grade files contain no records")
    write_report_bundle(records, out_dir)
    print(f"report bundle ({len(records)} records) -> {out_dir}")
    return EXIT_OK


def _cefa_paths(cfg: RunConfig, args) -> tuple[str, str]:
    comments = getattr(args, "comments", None) or cfg.resolve(cfg.comments_path)
    profiles = getattr(args, "profiles", None) or cfg.resolve(cfg.profiles_path)
    if not comments or not Path(comments).exists():
        raise _DataError(f"comment stream not found: {comments or '(not configured)'}")
    if not profiles or not Path(profiles).exists():
        raise _DataError(f"profile store not found: {profiles or '(not configured)'}")
    return comments, profiles


def _cmd_cefa(cfg: RunConfig, args) -> int:
    out_root = Path(cfg.output_dir)
    ledger_in = cfg.resolve(cfg.provider.ledger_path) or None
    insights_path = getattr(args, "insights", None) or str(out_root / "insights.jsonl")

    if args.step == "ingest":
        comments_path, profiles_path = _cefa_paths(cfg, args)
        comments = cefa_mod.load_comments(comments_path)
        profiles = cefa_mod.load_profiles(profiles_path)
        events = [c for c in comments if c.target_user_id]
        if args.create_missing:
            for event in events:
                for uid in (event.author_id, event.target_user_id):
                    if uid not in profiles:
                        profiles[uid] = cefa_mod.new_profile(uid, config=cfg.credibility)
        with _gateway(cfg, ledger_in, None) as gw:
            deltas = cefa_mod.apply_events(profiles, events, gw, cfg.credibility)
        cefa_mod.save_profiles(profiles, profiles_path)
        print(f"{len(events)} events, {len(deltas)} credibility changes -> {profiles_path}")
        for comment_id, uid, old, new in deltas:
            print(f"  {comment_id}: {uid} {old:.4f} -> {new:.4f}")
        return EXIT_OK

    if args.step == "score":
        comments_path, profiles_path = _cefa_paths(cfg, args)
        bank = _load_bank_checked(cfg)
        comments = cefa_mod.load_comments(comments_path)
        profiles = cefa_mod.load_profiles(profiles_path)
        question_texts = {q.id: q.prompt for q in bank}
        with _gateway(cfg, ledger_in, None) as gw:
            insights = cefa_mod.process_comments(
                comments, question_texts, profiles, gw, cfg.summary_chars, cfg.credibility
            )
        out_root.mkdir(parents=True, exist_ok=True)
        cefa_mod.write_insights(insights, insights_path)
        cefa_mod.save_profiles(profiles, profiles_path)  # may include new baseline authors
        print(f"{len(insights)} insights -> {insights_path}")
        return EXIT_OK

    # optimize
    if not Path(insights_path).exists():
        raise _DataError(f"insight file not found: {insights_path}; run `cefa score` first")
    level = _parse_choice(parse_level, args.level)
    insights = cefa_mod.load_insights(insights_path)
    by_question: dict[str, list] = {}
    for insight in insights:
        by_question.setdefault(insight.question_id, []).append(insight)
    contexts = {
        qid: cefa_mod.optimize_prompt(group, cfg.context_chars)
        for qid, group in sorted(by_question.items())
    }
    out_root.mkdir(parents=True, exist_ok=True)
    detail = {
        qid: {
            "budget_chars": ctx.budget_chars,
            "total_chars": ctx.total_chars,
            "insights": [
                {
                    "source_comment_id": i.source_comment_id,
                    "text": i.text,
                    "char_len": i.char_len,
                    "relevance": i.relevance,
                    "author_credibility_at_scoring": i.author_credibility_at_scoring,
                    "weight": i.weight,
                }
                for i in ctx.insights
            ],
        }
        for qid, ctx in contexts.items()
    }
    with open(out_root / "cefa_context.json", "w", encoding="utf-8") as fh:
        json.dump(detail, fh, ensure_ascii=False, indent=2)
        fh.write("\n")
    overrides = {
        qid: {level.value: cefa_mod.render_context_text(ctx)}
        for qid, ctx in contexts.items()
        if ctx.insights
    }
    overrides_path = out_root / "cefa_overrides.json"
    with open(overrides_path, "w", encoding="utf-8") as fh:
        json.dump(overrides, fh, ensure_ascii=False, indent=2)
        fh.write("\n")
    packed = sum(len(ctx.insights) for ctx in contexts.values())
    print(f"packed {packed} insights for {len(contexts)} questions -> {overrides_path}")
    print(f"use them with: contextlab run --overrides {overrides_path}")
    return EXIT_OK


def _cmd_summarize_experiment(cfg: RunConfig, args) -> int:
    bank = _load_bank_checked(cfg)
    baseline = _parse_choice(parse_grader, args.baseline)
    summarized = _parse_choice(parse_grader, args.summarized)
    exemplar = None
    if Grader.AUTO3 in (baseline, summarized):
        exemplar_path = cfg.resolve(cfg.exemplar_path)
        if not exemplar_path or not Path(exemplar_path).exists():
            raise ConfigurationError("auto3 grading needs exemplar= in the config")
        exemplar = load_exemplar(exemplar_path)

    exp_dir = Path(cfg.output_dir) / f"exp-{cfg.digest()[:12]}"
    if (exp_dir / "comparison.md").exists():
        raise ConfigurationError(f"{exp_dir} already holds a completed experiment")
    exp_dir.mkdir(parents=True, exist_ok=True)
    with DirLock(exp_dir):
        ledger_in = cfg.resolve(cfg.provider.ledger_path) or None
        with _gateway(cfg, ledger_in, exp_dir / "ledger.jsonl") as gw:
            _stage_manifest(gw, cfg, bank)
            result = run_summarization_experiment(
                bank,
                gw,
                cfg.summary_chars,
                exemplar=exemplar,
                baseline_grader=baseline,
                summarized_grader=summarized,
                levels=COMPARISON_LEVELS,
            )
        (exp_dir / "lengths.csv").write_text(result.report.length_csv, encoding="utf-8")
        (exp_dir / "comparison.md").write_text(render_comparison_md(result.report), encoding="utf-8")
        with open(exp_dir / "summaries.json", "w", encoding="utf-8") as fh:
            json.dump(
                {qid: {tier.value: text for tier, text in per.items()} for qid, per in result.summaries.items()},
                fh,
                ensure_ascii=False,
                indent=2,
            )
            fh.write("\n")
        write_grade_records(result.baseline_grades, exp_dir / "grades_baseline.jsonl")
        write_grade_records(result.summarized_grades, exp_dir / "grades_summarized.jsonl")
    print(f"comparison ({baseline.value} vs {summarized.value}+summaries) -> {exp_dir / 'comparison.md'}")
    if result.report.incomplete:
        print(f"warning: {len(result.report.incomplete)} incomplete cells", file=sys.stderr)
    return EXIT_OK


# --- dispatch ----------------------------------------------------------------

_HANDLERS = {
    "validate": _cmd_validate,
    "run": _cmd_run,
    "grade": _cmd_grade,
    "report": _cmd_report,
    "cefa": _cmd_cefa,
    "summarize-experiment": _cmd_summarize_experiment,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        command = getattr(args, "command", None)
        if not command:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        cfg = _load_cfg(args)
        return _HANDLERS[command](cfg, args)
    except _UsageError as exc:
        print(f"usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProviderError as exc:
        print(f"provider failure: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (
        _DataError,
        BankError,
        GradingError,
        AnalysisError,
        cefa_mod.CefaError,
        UnrecordedRequestError,
        ValueError,
        json.JSONDecodeError,
    ) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
