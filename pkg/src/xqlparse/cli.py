"""``xqlparse`` command line: eval, translate, stats, similarity, validate."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .corpus import (
    DatasetValidationError,
    TranslationRetryExhausted,
    dataset_stats,
    load_dataset,
    load_records,
    save_records,
    stats_table,
    translate_record,
)
from .embeddings import load_provider
from .evaluation import RunConfig, RunContext, emit_report, execute, make_run_dir, resolve_dataset
from .lm_gateway import GenerationError, load_backend
from .records import LANGUAGE_CODES

log = logging.getLogger("xqlparse")

TASK_ALIASES = {
    "parse": "parse_eval",
    "intent": "intent_eval",
    "extraction": "extraction_eval",
    "similarity": "similarity_report",
}


def _languages(text: str) -> list[str]:
    return [x.strip().upper() for x in text.split(",") if x.strip()]


def _csv(text: str) -> list[str]:
    return [x.strip().lower() for x in text.split(",") if x.strip()]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", help="dataset directory or file ('demo' for the bundled sample)")
    p.add_argument("--languages", type=_languages, help="comma-separated, e.g. en,zh")
    p.add_argument("--embed", help="embedding provider: mock, st:<model> or an HTTP URL")
    p.add_argument("--embed-url", dest="embed_url", help="embedding endpoint (same as --embed URL)")
    p.add_argument("--embed-cache", dest="embed_cache", help="JSONL file caching embeddings")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xqlparse", description="Explanation-request parsing and extraction toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    ev = sub.add_parser("eval", help="run an evaluation grid")
    ev.add_argument("--task", choices=sorted(TASK_ALIASES), help="what to evaluate")
    _add_common(ev)
    ev.add_argument("--strategies", type=_csv, help="parse strategies: nn,gd,mp,mp_plus,gmp")
    ev.add_argument("--approaches", type=_csv, help="extraction approaches: naive,tanl,gptner,gollie")
    ev.add_argument("--backend", help="scripted:<fixtures.json> or an HTTP completions URL")
    ev.add_argument("--backend-url", dest="backend_url", help="HTTP completions URL")
    ev.add_argument("--model", help="model identifier sent to the backend")
    ev.add_argument("--shots", type=int)
    ev.add_argument("--k", type=int)
    ev.add_argument("--seed", type=int)
    ev.add_argument("--parallelism", type=int)
    ev.add_argument("--limit", type=int, help="evaluate only the first N test rows per language")
    ev.add_argument("--out", help="parent directory for run folders (default runs/)")
    ev.add_argument("--config", help="JSON run config; command-line flags override it")

    tr = sub.add_parser("translate", help="machine-translate a dataset file")
    tr.add_argument("--dataset", required=True, help="input JSON file")
    tr.add_argument("--format", choices=("coxql", "compass"), required=True)
    tr.add_argument("--target", required=True, help="target language code")
    tr.add_argument("--backend", required=True)
    tr.add_argument("--model")
    tr.add_argument("--max-attempts", type=int, default=5, dest="max_attempts")
    tr.add_argument("--out", required=True, help="output JSON file")

    st = sub.add_parser("stats", help="per-operation / per-language counts")
    st.add_argument("--dataset", required=True)
    st.add_argument("--format", choices=("coxql", "compass"), required=True)
    st.add_argument("--languages", type=_languages)

    sim = sub.add_parser("similarity", help="cosine similarity between parallel test splits")
    _add_common(sim)
    sim.add_argument("--format", choices=("coxql", "compass"))
    sim.add_argument("--out", default="runs")

    va = sub.add_parser("validate", help="check a dataset and print the violation report")
    va.add_argument("--dataset", required=True)
    va.add_argument("--format", choices=("coxql", "compass"), required=True)
    return parser


def _config_from_args(args) -> RunConfig:
    base = {}
    if getattr(args, "config", None):
        base = RunConfig.from_file(args.config).snapshot()
    task = TASK_ALIASES[args.task] if getattr(args, "task", None) else base.get("task", "parse_eval")
    base["task"] = task
    overrides = {
        "dataset": args.dataset,
        "languages": args.languages,
        "backend": getattr(args, "backend_url", None) or getattr(args, "backend", None),
        "model": getattr(args, "model", None),
        "embed": args.embed_url or args.embed,
        "embed_cache": args.embed_cache,
        "shots": getattr(args, "shots", None),
        "k": getattr(args, "k", None),
        "seed": getattr(args, "seed", None),
        "parallelism": getattr(args, "parallelism", None),
        "limit": getattr(args, "limit", None),
        "out": getattr(args, "out", None),
    }
    systems = getattr(args, "approaches", None) if task == "extraction_eval" else getattr(args, "strategies", None)
    if task == "similarity_report" and getattr(args, "format", None):
        systems = [args.format]
    overrides["strategies"] = systems
    for key, value in overrides.items():
        if value is not None:
            base[key] = value
    return RunConfig.from_dict(base)


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    provider = load_provider(cfg.embed, cfg.embed_cache)
    backend = load_backend(cfg.backend, cfg.model) if cfg.backend else None
    needs_backend = cfg.task in ("intent_eval", "extraction_eval") or (
        cfg.task == "parse_eval" and any(s != "nn" for s in cfg.strategies))
    if needs_backend and backend is None:
        print("error: this evaluation needs --backend or --backend-url", file=sys.stderr)
        return 1
    run_dir = make_run_dir(cfg.out, cfg.task)
    report = execute(RunContext(cfg, backend, provider, run_dir))
    print(emit_report(report, "markdown"))
    print(f"run directory: {run_dir}", file=sys.stderr)
    failed_cells = [c for c in report.cells if c.error]
    for c in failed_cells:
        print(f"cell {c.language}/{c.system} failed: {c.error}", file=sys.stderr)
    return 0


def cmd_similarity(args) -> int:
    args.task = "similarity"
    return cmd_eval(args)


def cmd_translate(args) -> int:
    backend = load_backend(args.backend, args.model)
    records, violations = load_records(args.dataset, args.format)
    if violations:
        print(json.dumps({"violations": violations}, indent=2, ensure_ascii=False), file=sys.stderr)
        return 1
    out, flagged = [], []
    for i, rec in enumerate(records):
        try:
            out.append(translate_record(rec, args.target, backend, args.max_attempts).record)
        except TranslationRetryExhausted as exc:
            last = exc.last_attempt
            flagged.append({"index": i, "attempts": exc.attempts,
                            "last_attempt": last.to_json() if hasattr(last, "to_json") else last})
    save_records(out, args.out)
    if flagged:
        path = Path(args.out).with_suffix(".failures.json")
        path.write_text(json.dumps(flagged, indent=2, ensure_ascii=False) + "\n", "utf-8")
        print(f"{len(flagged)} record(s) failed containment; see {path}", file=sys.stderr)
        return 3
    return 0


def cmd_stats(args) -> int:
    bundle = load_dataset(resolve_dataset(args.dataset), args.format, languages=args.languages)
    langs = [x for x in LANGUAGE_CODES if x in bundle.languages()]
    for split, counts in sorted(dataset_stats(bundle).items()):
        print(f"## {split} ({sum(counts.values())} records)\n")
        print(stats_table(counts, langs))
    return 0


def cmd_validate(args) -> int:
    try:
        bundle = load_dataset(resolve_dataset(args.dataset), args.format)
    except DatasetValidationError as exc:
        print(exc.report())
        return 1
    sizes = {split: len(rows) for split, rows in bundle.splits.items()}
    print(json.dumps({"violations": [], "splits": sizes}, indent=2))
    return 0


COMMANDS = {"eval": cmd_eval, "translate": cmd_translate, "stats": cmd_stats,
            "similarity": cmd_similarity, "validate": cmd_validate}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (GenerationError, ValueError, OSError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
