"""Experiment configuration: one TOML file, secrets only via environment.

Relative *input* paths (bank, exemplar, comments, profiles, ledger) resolve
against the config file's own directory, so configs can ship next to their
fixtures; ``output_dir`` stays relative to the working directory.  The config
digest names output directories, which makes reruns collision-free and
diffable.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - interpreter-dependent
    import tomli as tomllib

from .cefa import CredibilityConfig, DEFAULT_CONFIG
from .context import ConditionLevel, LEVEL_ORDER, parse_level
from .gateway import ConfigurationError, ProviderSpec, request_digest
from .grading import Grader, parse_grader

MIN_BUDGET = 16

MODES = ("live", "record", "replay", "mock")


@dataclass(frozen=True)
class RunConfig:
    bank_path: str
    provider: ProviderSpec
    levels: tuple[ConditionLevel, ...] = LEVEL_ORDER
    seed: int = 0
    summary_chars: int = 300
    context_chars: int = 1200
    graders: tuple[Grader, ...] = (Grader.AUTO1,)
    output_dir: str = "runs"
    exemplar_path: str = ""
    comments_path: str = ""
    profiles_path: str = ""
    credibility: CredibilityConfig = DEFAULT_CONFIG
    config_dir: str = "."

    def resolve(self, path: str) -> str:
        """Interpret a config-file path relative to the config's directory."""
        if not path:
            return ""
        p = Path(path)
        return str(p if p.is_absolute() else Path(self.config_dir) / p)

    def digest(self) -> str:
        payload = {
            "bank": self.bank_path,
            "levels": [lv.value for lv in self.levels],
            "seed": self.seed,
            "summary_chars": self.summary_chars,
            "context_chars": self.context_chars,
            "graders": [g.value for g in self.graders],
            "output_dir": self.output_dir,
            "exemplar": self.exemplar_path,
            "comments": self.comments_path,
            "profiles": self.profiles_path,
            "credibility": dataclasses.asdict(self.credibility),
            "provider": {
                "mode": self.provider.mode,
                "chat_url": self.provider.chat_url,
                "embed_url": self.provider.embed_url,
                "sentiment_url": self.provider.sentiment_url,
                "summarize_url": self.provider.summarize_url,
                "chat_model": self.provider.chat_model,
                "embed_model": self.provider.embed_model,
                "sentiment_model": self.provider.sentiment_model,
                "summarize_model": self.provider.summarize_model,
                "temperature": self.provider.temperature,
                "max_output_tokens": self.provider.max_output_tokens,
                "ledger": self.provider.ledger_path,
                "max_in_flight": self.provider.max_in_flight,
            },
        }
        return request_digest(payload)


def _take(table: dict, allowed: dict, where: str) -> dict:
    """Pop known keys with type checks; anything left over is a config typo."""
    out = {}
    for key, kinds in allowed.items():
        if key in table:
            value = table.pop(key)
            # no config field is boolean; reject bools before the int check catches them
            if isinstance(value, bool) or not isinstance(value, kinds):
                raise ConfigurationError(f"{where}.{key} has the wrong type: {value!r}")
            out[key] = value
    if table:
        raise ConfigurationError(f"unknown keys in {where}: {sorted(table)}")
    return out


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid TOML: {exc}") from exc

    provider_raw = raw.pop("provider", {})
    budgets_raw = raw.pop("budgets", {})
    cefa_raw = raw.pop("cefa", {})

    top = _take(
        raw,
        {
            "bank": str,
            "levels": list,
            "seed": int,
            "graders": list,
            "output_dir": str,
            "exemplar": str,
        },
        "config",
    )
    prov = _take(
        provider_raw,
        {
            "mode": str,
            "chat_url": str,
            "embed_url": str,
            "sentiment_url": str,
            "summarize_url": str,
            "chat_model": str,
            "embed_model": str,
            "sentiment_model": str,
            "summarize_model": str,
            "temperature": (int, float),
            "max_output_tokens": int,
            "ledger": str,
            "max_in_flight": int,
        },
        "provider",
    )
    budgets = _take(budgets_raw, {"summary_chars": int, "context_chars": int}, "budgets")
    cefa = _take(
        cefa_raw,
        {
            "comments": str,
            "profiles": str,
            "base": (int, float),
            "eta": (int, float),
            "theta_high": (int, float),
            "experience_rate": (int, float),
            "experience_cap": int,
        },
        "cefa",
    )

    if "bank" not in top:
        raise ConfigurationError("config is missing the 'bank' path")
    mode = prov.get("mode", "mock")
    if mode not in MODES:
        raise ConfigurationError(f"provider.mode must be one of {MODES}, got {mode!r}")

    try:
        levels = tuple(parse_level(v) for v in top.get("levels", [lv.value for lv in LEVEL_ORDER]))
        graders = tuple(parse_grader(v) for v in top.get("graders", ["Auto1"]))
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc

    spec = ProviderSpec(
        mode=mode,
        chat_url=prov.get("chat_url", ""),
        embed_url=prov.get("embed_url", ""),
        sentiment_url=prov.get("sentiment_url", ""),
        summarize_url=prov.get("summarize_url", ""),
        chat_model=prov.get("chat_model", "gpt-4"),
        embed_model=prov.get("embed_model", "sentence-embedder"),
        sentiment_model=prov.get("sentiment_model", "sst2-binary"),
        summarize_model=prov.get("summarize_model", "bart-cnn"),
        temperature=float(prov.get("temperature", 0.0)),
        max_output_tokens=prov.get("max_output_tokens", 1024),
        ledger_path=prov.get("ledger", ""),
        max_in_flight=prov.get("max_in_flight", 4),
    )
    credibility = CredibilityConfig(
        base=float(cefa.get("base", DEFAULT_CONFIG.base)),
        eta=float(cefa.get("eta", DEFAULT_CONFIG.eta)),
        theta_high=float(cefa.get("theta_high", DEFAULT_CONFIG.theta_high)),
        experience_rate=float(cefa.get("experience_rate", DEFAULT_CONFIG.experience_rate)),
        experience_cap=cefa.get("experience_cap", DEFAULT_CONFIG.experience_cap),
    )
    return RunConfig(
        bank_path=top["bank"],
        provider=spec,
        levels=levels,
        seed=top.get("seed", 0),
        summary_chars=budgets.get("summary_chars", 300),
        context_chars=budgets.get("context_chars", 1200),
        graders=graders,
        output_dir=top.get("output_dir", "runs"),
        exemplar_path=top.get("exemplar", ""),
        comments_path=cefa.get("comments", ""),
        profiles_path=cefa.get("profiles", ""),
        credibility=credibility,
        config_dir=str(path.parent),
    )


def apply_overrides(
    cfg: RunConfig,
    mode: str | None = None,
    seed: int | None = None,
    out: str | None = None,
    ledger: str | None = None,
) -> RunConfig:
    if mode is not None:
        if mode not in MODES:
            raise ConfigurationError(f"--mode must be one of {MODES}, got {mode!r}")
        cfg = dataclasses.replace(cfg, provider=dataclasses.replace(cfg.provider, mode=mode))
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    if out is not None:
        cfg = dataclasses.replace(cfg, output_dir=out)
    if ledger is not None:
        cfg = dataclasses.replace(
            cfg, provider=dataclasses.replace(cfg.provider, ledger_path=ledger)
        )
    return cfg


def validate_config(cfg: RunConfig) -> list[str]:
    """Structural problems only; bank content is checked by the corpus loader."""
    problems = []
    if not Path(cfg.resolve(cfg.bank_path)).exists():
        problems.append(f"bank file not found: {cfg.resolve(cfg.bank_path)}")
    for label, budget in (("summary_chars", cfg.summary_chars), ("context_chars", cfg.context_chars)):
        if budget < MIN_BUDGET:
            problems.append(f"budgets.{label} = {budget} is below the minimum {MIN_BUDGET}")
    if not cfg.levels:
        problems.append("levels must not be empty")
    if len(set(cfg.levels)) != len(cfg.levels):
        problems.append("levels contains duplicates")
    if cfg.provider.max_in_flight < 1:
        problems.append("provider.max_in_flight must be at least 1")
    if cfg.provider.mode == "replay" and not cfg.provider.ledger_path:
        problems.append("replay mode requires provider.ledger (or --ledger)")
    for label, p in (
        ("exemplar", cfg.exemplar_path),
        ("cefa.comments", cfg.comments_path),
        ("cefa.profiles", cfg.profiles_path),
        ("provider.ledger", cfg.provider.ledger_path),
    ):
        if p and not Path(cfg.resolve(p)).exists():
            problems.append(f"{label} path not found: {cfg.resolve(p)}")
    cred = cfg.credibility
    for label, value in (
        ("base", cred.base),
        ("eta", cred.eta),
        ("theta_high", cred.theta_high),
        ("experience_rate", cred.experience_rate),
    ):
        if not 0.0 <= value <= 1.0:
            problems.append(f"cefa.{label} = {value} outside [0,1]")
    if cred.experience_cap < 0:
        problems.append("cefa.experience_cap must be nonnegative")
    return problems
