"""Evaluation runs, micro-F1 and report emission."""

from __future__ import annotations

import csv
import io
import json
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Sequence

from .corpus import MIX_ALGORITHM, load_dataset
from .embeddings import corpus_similarity_report, embed
from .extraction import (
    APPROACHES,
    N_DEMOS,
    build_extraction_prompt,
    classify_intent_fewshot,
    extract,
    score_extraction,
    select_demos,
)
from .lm_gateway import ConfigurationError, FixtureMiss, GenerationError, GenerationRequest
from .query_language import compare_parses
from .records import LANGUAGE_CODES, normalize_language
from .strategies import STRATEGIES, ParserContext, ParsingTrace, run_strategy
from .templates import template_versions

TASKS = ("parse_eval", "intent_eval", "extraction_eval", "similarity_report", "translate", "stats")
REPORT_FORMATS = ("json", "csv", "markdown")
_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def micro_f1(predictions: Sequence, golds: Sequence | None = None) -> float:
    """Micro-averaged F1 in percent.

    ``predictions`` are labels aligned with ``golds``; ``None`` marks a failed
    prediction. With ``golds`` omitted, ``predictions`` are per-instance
    correctness booleans.
    """
    if golds is None:
        outcomes = [bool(p) for p in predictions]
    else:
        if len(predictions) != len(golds):
            raise ValueError("predictions and golds must be aligned")
        outcomes = [p is not None and p == g for p, g in zip(predictions, golds)]
    tp = sum(outcomes)
    # a wrong or missing prediction is one false positive and one false negative
    fp = fn = len(outcomes) - tp
    if tp == 0:
        return 0.0
    precision, recall = tp / (tp + fp), tp / (tp + fn)
    return 100.0 * 2 * precision * recall / (precision + recall)


# -- configuration -------------------------------------------------------------------


@dataclass
class RunConfig:
    task: str = "parse_eval"
    dataset: str = "demo"
    languages: list[str] = field(default_factory=lambda: ["EN"])
    strategies: list[str] = field(default_factory=list)
    backend: str | None = None
    model: str | None = None
    embed: str = "mock"
    embed_cache: str | None = None
    shots: int = 20
    k: int = 3
    per_intent_demos: int = 3
    n_demos: int = N_DEMOS
    seed: int = 17
    parallelism: int = 4
    out: str = "runs"
    train_split: str = "train"
    test_split: str = "test"
    limit: int | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigurationError(f"unknown task {self.task!r}")
        self.languages = [normalize_language(x) for x in self.languages]
        if self.parallelism < 1:
            raise ConfigurationError("parallelism must be >= 1")
        valid = {"parse_eval": STRATEGIES, "extraction_eval": APPROACHES}.get(self.task)
        if valid is not None:
            if not self.strategies:
                self.strategies = list(valid)
            bad = [s for s in self.strategies if s not in valid]
            if bad:
                raise ConfigurationError(f"invalid for {self.task}: {', '.join(bad)}; expected {', '.join(valid)}")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path, env: dict | None = None) -> "RunConfig":
        """JSON config; ``${VAR}`` placeholders are filled from the environment."""
        return cls.from_dict(json.loads(interpolate_env(Path(path).read_text("utf-8"), env)))

    def snapshot(self) -> dict:
        return asdict(self)


def interpolate_env(text: str, env: dict | None = None) -> str:
    env = os.environ if env is None else env

    def sub(m: re.Match) -> str:
        if m[1] not in env:
            raise ConfigurationError(f"environment variable {m[1]} is not set")
        return json.dumps(env[m[1]])[1:-1]

    return _ENV_RE.sub(sub, text)


def resolve_dataset(path: str) -> Path:
    """``demo`` names the small bundled corpus; anything else is a filesystem path."""
    if path == "demo":
        return Path(str(resources.files("xqlparse.data") / "demo"))
    return Path(path)


# -- reports -----------------------------------------------------------------------


@dataclass
class Cell:
    language: str
    system: str
    model: str
    total: int = 0
    correct: int = 0
    incorrect: int = 0
    failed: int = 0
    value: float = 0.0
    extra: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def failure_rate(self) -> float:
        return 100.0 * self.failed / self.total if self.total else 0.0


@dataclass
class EvalReport:
    task: str
    cells: list[Cell] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def cell(self, language: str, system: str) -> Cell:
        for c in self.cells:
            if c.language == language and c.system == system:
                return c
        raise KeyError((language, system))

    def to_dict(self) -> dict:
        return {"task": self.task, "cells": [asdict(c) for c in self.cells], "metadata": self.metadata}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(data["task"], [Cell(**c) for c in data["cells"]], data.get("metadata", {}))

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text("utf-8")))


def _ordered(languages) -> list[str]:
    langs = list(dict.fromkeys(languages))
    return sorted(langs, key=lambda x: LANGUAGE_CODES.index(x) if x in LANGUAGE_CODES else len(LANGUAGE_CODES))


def _markdown_grid(report: EvalReport, metric: Callable[[Cell], str], title: str) -> str:
    langs = _ordered(c.language for c in report.cells)
    rows = list(dict.fromkeys((c.system, c.model) for c in report.cells))
    lines = [f"**{title}**", "", "| system | model | " + " | ".join(langs) + " |",
             "|---|---|" + "---|" * len(langs)]
    index = {(c.system, c.model, c.language): c for c in report.cells}
    for system, model in rows:
        vals = []
        for lang in langs:
            c = index.get((system, model, lang))
            vals.append("" if c is None else metric(c))
        lines.append(f"| {system} | {model} | " + " | ".join(vals) + " |")
    return "\n".join(lines) + "\n"


def emit_report(report: EvalReport, fmt: str, path: str | Path | None = None) -> str:
    """Render ``report`` as json, csv or markdown; writes to ``path`` when given."""
    if fmt == "json":
        text = report.to_json()
    elif fmt == "csv":
        buf = io.StringIO()
        cols = ["task", "language", "system", "model", "total", "correct", "incorrect", "failed", "value",
                "failure_rate", "extra", "error"]
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for c in report.cells:
            writer.writerow([report.task, c.language, c.system, c.model, c.total, c.correct, c.incorrect, c.failed,
                             f"{c.value:.2f}", f"{c.failure_rate:.2f}", json.dumps(c.extra, sort_keys=True), c.error or ""])
        text = buf.getvalue()
    elif fmt == "markdown":
        label = "cosine similarity (%)" if report.task == "similarity_report" else "micro-F1 (%)"
        parts = [f"# {report.task}", "", _markdown_grid(report, lambda c: f"{c.value:.2f}", label)]
        if report.task != "similarity_report":
            parts += ["", _markdown_grid(report, lambda c: f"{c.failure_rate:.2f}", "failure rate (%)")]
        if report.task == "extraction_eval":
            parts += ["", _markdown_grid(report, lambda c: f"{c.extra.get('overlap_f1', 0.0):.2f}",
                                         "character-overlap F1 (%)")]
        text = "\n".join(parts)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text, "utf-8")
    return text


# -- run plumbing ------------------------------------------------------------------


@dataclass
class RunContext:
    """Backend, provider and output location for one evaluation run."""

    config: RunConfig
    backend: Any = None
    provider: Any = None
    run_dir: Path | None = None

    def write_traces(self, name: str, traces: Sequence[dict]) -> None:
        if self.run_dir is None:
            return
        tdir = self.run_dir / "traces"
        tdir.mkdir(parents=True, exist_ok=True)
        with (tdir / f"{name}.jsonl").open("w", encoding="utf-8") as fh:
            for t in traces:
                fh.write(json.dumps(t, ensure_ascii=False, sort_keys=True) + "\n")


def make_run_dir(out: str | Path, task: str) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    path = Path(out) / f"{stamp}-{task}"
    path.mkdir(parents=True, exist_ok=False)
    return path


def _map(fn, items: Sequence, parallelism: int) -> list:
    if parallelism <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(fn, items))


def _metadata(ctx: RunContext, **extra) -> dict:
    cfg = ctx.config
    return {
        "config": cfg.snapshot(),
        "seed": cfg.seed,
        "backend": getattr(ctx.backend, "name", None),
        "provider": getattr(ctx.provider, "id", None),
        "template_versions": template_versions(),
        "sampling_algorithm": MIX_ALGORITHM,
        "started": datetime.now(timezone.utc).isoformat(),
        **extra,
    }


def _model_id(ctx: RunContext) -> str:
    return ctx.config.model or getattr(ctx.backend, "name", None) or "none"


def _train_for(bundle, split: str, language: str) -> tuple[list, str]:
    rows = bundle.split(split, language)
    if rows:
        return rows, language
    rows = bundle.split(split, "EN")
    if rows:
        return rows, "EN"
    raise ConfigurationError(f"no {split} split for {language} (or EN fallback)")


def _limit(rows: list, limit: int | None) -> list:
    return rows if limit is None else rows[:limit]


def run_parse_eval(ctx: RunContext) -> EvalReport:
    cfg = ctx.config
    bundle = load_dataset(resolve_dataset(cfg.dataset), "coxql", languages=cfg.languages + ["EN"])
    report = EvalReport("parse_eval", metadata=_metadata(ctx))
    train_langs = {}
    for lang in cfg.languages:
        test = _limit(bundle.split(cfg.test_split, lang), cfg.limit)
        train, train_lang = _train_for(bundle, cfg.train_split, lang)
        train_langs[lang] = train_lang
        parser_ctx = ParserContext(bundle.registry, train, ctx.provider, ctx.backend, shots=cfg.shots, k=cfg.k,
                                   per_intent_demos=cfg.per_intent_demos, fine_demos=cfg.n_demos, mp_demos=cfg.n_demos)
        for strategy in cfg.strategies:
            model = "embedding" if strategy == "nn" else _model_id(ctx)
            cell = Cell(lang, strategy, model, total=len(test))

            def one(rec, strategy=strategy) -> ParsingTrace:
                return run_strategy(strategy, rec.question, parser_ctx)

            try:
                traces = _map(one, test, cfg.parallelism)
            except FixtureMiss:
                raise
            except GenerationError as exc:
                cell.failed, cell.error = cell.total, f"{type(exc).__name__}: {exc}"
                report.cells.append(cell)
                continue
            outcomes = [compare_parses(t.final_parse, r.parse, bundle.registry) for t, r in zip(traces, test)]
            cell.correct = sum(outcomes)
            cell.failed = sum(t.failure is not None for t in traces)
            cell.incorrect = cell.total - cell.correct - cell.failed
            cell.value = round(micro_f1(outcomes), 2)
            report.cells.append(cell)
            ctx.write_traces(f"{lang}-{strategy}", [
                {**t.to_dict(), "gold": r.parse, "correct": ok} for t, r, ok in zip(traces, test, outcomes)
            ])
    report.metadata["train_language"] = train_langs
    return report


def run_intent_eval(ctx: RunContext) -> EvalReport:
    cfg = ctx.config
    bundle = load_dataset(resolve_dataset(cfg.dataset), "compass", languages=cfg.languages + ["EN"])
    report = EvalReport("intent_eval", metadata=_metadata(ctx))
    for lang in cfg.languages:
        test = _limit(bundle.split(cfg.test_split, lang), cfg.limit)
        train, _ = _train_for(bundle, cfg.train_split, lang)
        vectors = embed([r.user_question for r in train], ctx.provider)
        cell = Cell(lang, "fewshot", _model_id(ctx), total=len(test))

        def one(rec):
            return classify_intent_fewshot(rec.user_question, train, ctx.backend, ctx.provider, bundle.registry,
                                           n=min(cfg.n_demos, len(train)), language=lang, pool_vectors=vectors)

        try:
            results = _map(one, test, cfg.parallelism)
        except FixtureMiss:
            raise
        except GenerationError as exc:
            cell.failed, cell.error = cell.total, f"{type(exc).__name__}: {exc}"
            report.cells.append(cell)
            continue
        preds = [r.intent for r in results]
        golds = [r.operation_name for r in test]
        cell.correct = sum(p == g for p, g in zip(preds, golds))
        cell.failed = sum(r.failure is not None for r in results)
        cell.incorrect = cell.total - cell.correct - cell.failed
        cell.value = round(micro_f1(preds, golds), 2)
        report.cells.append(cell)
        ctx.write_traces(f"{lang}-intent", [
            {"question": rec.user_question, "prompt": res.prompt, "raw_output": res.raw_output,
             "intent": res.intent, "failure": res.failure, "gold": rec.operation_name}
            for rec, res in zip(test, results)
        ])
    return report


def run_extraction_eval(ctx: RunContext) -> EvalReport:
    cfg = ctx.config
    bundle = load_dataset(resolve_dataset(cfg.dataset), "compass", languages=cfg.languages + ["EN"])
    report = EvalReport("extraction_eval", metadata=_metadata(ctx))
    for lang in cfg.languages:
        test = _limit(bundle.split(cfg.test_split, lang), cfg.limit)
        train, _ = _train_for(bundle, cfg.train_split, lang)
        vectors = embed([r.user_question for r in train], ctx.provider)
        for approach in cfg.strategies:
            cell = Cell(lang, approach, _model_id(ctx), total=len(test))

            def one(rec, approach=approach):
                demos = select_demos(rec.user_question, train, ctx.provider, min(cfg.n_demos, len(train)), vectors)
                prompt = build_extraction_prompt(approach, rec.user_question, demos, lang)
                comp = ctx.backend.complete(GenerationRequest(prompt, max_new_tokens=128, stop_sequences=("\n\n",)))
                return prompt, extract(approach, rec.user_question, comp.text.strip())

            try:
                pairs = _map(one, test, cfg.parallelism)
            except FixtureMiss:
                raise
            except GenerationError as exc:
                cell.failed, cell.error = cell.total, f"{type(exc).__name__}: {exc}"
                report.cells.append(cell)
                continue
            results = [r for _, r in pairs]
            score = score_extraction(results, test)
            cell.correct = score.correct
            cell.failed = score.decode_errors
            cell.incorrect = cell.total - cell.correct - cell.failed
            cell.value = round(score.exact_f1, 2)
            cell.extra = {"overlap_f1": round(score.overlap_f1, 2), "decode_errors": score.decode_errors,
                          "not_contained": score.not_contained}
            report.cells.append(cell)
            ctx.write_traces(f"{lang}-{approach}", [
                {"question": rec.user_question, "prompt": prompt, "raw_output": res.raw_output,
                 "extracted": res.extracted, "contained": res.contained, "decode_error": res.decode_error,
                 "diagnostics": res.diagnostics, "gold": rec.custom_input}
                for rec, (prompt, res) in zip(test, pairs)
            ])
    return report


def run_similarity(ctx: RunContext) -> EvalReport:
    """Mean cosine similarity between aligned EN and target-language test questions."""
    cfg = ctx.config
    path = resolve_dataset(cfg.dataset)
    fmt = "compass" if any(path.glob("compass.*.json")) and not any(path.glob("coxql.*.json")) else "coxql"
    if cfg.strategies and cfg.strategies[0] in ("coxql", "compass"):
        fmt = cfg.strategies[0]
    bundle = load_dataset(path, fmt, languages=sorted(set(cfg.languages) | {"EN"}))
    text = (lambda r: r.question) if fmt == "coxql" else (lambda r: r.user_question)
    source = bundle.split(cfg.test_split, "EN")
    report = EvalReport("similarity_report", metadata=_metadata(ctx, format=fmt))
    for lang in cfg.languages:
        if lang == "EN":
            continue
        target = bundle.split(cfg.test_split, lang)
        n = min(len(source), len(target))
        cell = Cell(lang, fmt, getattr(ctx.provider, "id", "none"), total=n, correct=n)
        if n:
            cell.value = corpus_similarity_report([(text(a), text(b)) for a, b in zip(source, target)], ctx.provider)
        report.cells.append(cell)
    return report


RUNNERS = {
    "parse_eval": run_parse_eval,
    "intent_eval": run_intent_eval,
    "extraction_eval": run_extraction_eval,
    "similarity_report": run_similarity,
}


def execute(ctx: RunContext, formats: Sequence[str] = REPORT_FORMATS) -> EvalReport:
    """Run the configured task and persist config, traces and reports under the run directory."""
    runner = RUNNERS.get(ctx.config.task)
    if runner is None:
        raise ConfigurationError(f"task {ctx.config.task!r} is not an evaluation task")
    if ctx.run_dir is not None:
        (ctx.run_dir / "config.json").write_text(json.dumps(ctx.config.snapshot(), indent=2) + "\n", "utf-8")
    t0 = time.monotonic()
    report = runner(ctx)
    report.metadata["elapsed_seconds"] = round(time.monotonic() - t0, 3)
    report.metadata["finished"] = datetime.now(timezone.utc).isoformat()
    if ctx.run_dir is not None:
        suffix = {"json": "json", "csv": "csv", "markdown": "md"}
        for fmt in formats:
            emit_report(report, fmt, ctx.run_dir / f"report.{suffix[fmt]}")
    return report


VOLATILE_METADATA = ("started", "finished", "elapsed_seconds")


def stable_view(report: EvalReport) -> str:
    """JSON text of a report without timestamps, for reproducibility checks."""
    data = report.to_dict()
    data["metadata"] = {k: v for k, v in data["metadata"].items() if k not in VOLATILE_METADATA}
    return json.dumps(data, indent=2, ensure_ascii=False, sort_keys=True)
