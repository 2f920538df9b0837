"""Dataset loading, validation, translation and multilingual mixes.

Files are UTF-8 JSON arrays named ``{dataset}.{split}.{lang}.json``.
CoXQL-style rows use keys ``question``/``parse``/``language``; Compass rows
use ``user_question``/``operation_name``/``custom_input``/``language``.
"""

from __future__ import annotations

import json
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .extraction import validate_containment
from .lm_gateway import LANGUAGES, GenerationRequest, translate
from .query_language import LabelError, OperationRegistry, load_bundled_registry, parse_label
from .records import COMPASS_FIELDS, COXQL_FIELDS, CompassRecord, CoxqlRecord, normalize_language
from .templates import load_template

FORMATS = ("coxql", "compass")
MIX_PROPORTIONS = (10, 25, 50, 75, 100)
MIX_ALGORITHM = "python-random-mt19937:sample-then-shuffle"
TRANSLATION_RETRY_CAP = 5
_FILE_RE = re.compile(r"(?P<dataset>[^.]+)\.(?P<split>[^.]+)\.(?P<lang>[A-Za-z]{2})\.json\Z")


class DatasetValidationError(ValueError):
    def __init__(self, violations: list[dict]):
        self.violations = violations
        first = violations[0] if violations else {}
        super().__init__(f"{len(violations)} invalid record(s); first: {first}")

    def report(self) -> str:
        return json.dumps({"violations": self.violations}, indent=2, ensure_ascii=False)


@dataclass
class DatasetBundle:
    name: str
    splits: dict[str, list]
    registry: OperationRegistry

    def languages(self) -> list[str]:
        return sorted({r.language for rows in self.splits.values() for r in rows})

    def split(self, split: str, language: str | None = None) -> list:
        rows = self.splits.get(split, [])
        return rows if language is None else [r for r in rows if r.language == language]


def _record_from_json(row: Mapping, fmt: str, remap: Mapping[str, str], language: str | None):
    if not isinstance(row, Mapping):
        raise ValueError("record is not a JSON object")
    row = {remap.get(k, k): v for k, v in row.items()}
    if language and "language" not in row:
        row["language"] = language
    wanted = COXQL_FIELDS if fmt == "coxql" else COMPASS_FIELDS
    missing = [k for k in wanted if k not in row]
    if missing:
        raise ValueError(f"schema error: missing field(s) {', '.join(missing)}")
    for k in wanted:
        if not isinstance(row[k], str):
            raise ValueError(f"schema error: field {k!r} must be a string")
    values = {k: row[k] for k in wanted}
    values["language"] = normalize_language(values["language"])
    return CoxqlRecord(**values) if fmt == "coxql" else CompassRecord(**values)


def validate_record(record, registry: OperationRegistry) -> str | None:
    """Reason the record breaks its invariants, or None."""
    if isinstance(record, CoxqlRecord):
        try:
            parse_label(record.parse, registry)
        except LabelError as exc:
            return f"gold parse does not parse: {exc}"
        return None
    if record.operation_name not in registry:
        return f"unknown operation_name {record.operation_name!r}"
    if not record.custom_input.strip():
        return "empty custom_input"
    if not validate_containment(record.custom_input, record.user_question):
        return "custom_input is not contained in user_question (containment rule)"
    return None


def load_records(path: str | Path, fmt: str, registry: OperationRegistry | None = None,
                 remap: Mapping[str, str] | None = None, language: str | None = None,
                 split: str = "?") -> tuple[list, list[dict]]:
    """Parse one file. Returns (valid records, violations)."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}")
    registry = registry or load_bundled_registry(fmt)
    path = Path(path)
    try:
        rows = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        return [], [{"file": path.name, "split": split, "index": None, "error": f"malformed JSON: {exc}"}]
    if not isinstance(rows, list):
        return [], [{"file": path.name, "split": split, "index": None, "error": "top level must be an array"}]
    records, violations = [], []
    for i, row in enumerate(rows):
        try:
            rec = _record_from_json(row, fmt, remap or {}, language)
        except ValueError as exc:
            violations.append({"file": path.name, "split": split, "index": i, "error": str(exc)})
            continue
        problem = validate_record(rec, registry)
        if problem:
            violations.append({"file": path.name, "split": split, "index": i, "error": problem})
        else:
            records.append(rec)
    return records, violations


def load_dataset(path: str | Path, fmt: str, registry: OperationRegistry | None = None,
                 remap: Mapping[str, str] | None = None, name: str | None = None,
                 languages: Sequence[str] | None = None, strict: bool = True) -> DatasetBundle:
    """Load every ``{name}.{split}.{lang}.json`` under ``path`` (a directory or single file)."""
    registry = registry or load_bundled_registry(fmt)
    path = Path(path)
    files = [path] if path.is_file() else sorted(path.glob("*.json"))
    wanted = None if languages is None else {normalize_language(x) for x in languages}
    splits: dict[str, list] = {}
    violations: list[dict] = []
    dataset_name = name
    for f in files:
        m = _FILE_RE.match(f.name)
        if not m:
            continue
        if name is not None and m["dataset"] != name:
            continue
        if name is None and path.is_dir() and m["dataset"] not in (fmt, f"multi{fmt}"):
            continue
        lang = normalize_language(m["lang"])
        if wanted is not None and lang not in wanted:
            continue
        dataset_name = dataset_name or m["dataset"]
        recs, bad = load_records(f, fmt, registry, remap, lang, m["split"])
        splits.setdefault(m["split"], []).extend(recs)
        violations.extend(bad)
    if not splits and not violations:
        raise FileNotFoundError(f"no {fmt} dataset files found under {path}")
    if violations and strict:
        raise DatasetValidationError(violations)
    return DatasetBundle(dataset_name or fmt, splits, registry)


def save_records(records: Sequence, path: str | Path) -> None:
    rows = [r.to_json() for r in records]
    Path(path).write_text(json.dumps(rows, indent=2, ensure_ascii=False) + "\n", "utf-8")


# -- multilingual mixes -----------------------------------------------------------


@dataclass(frozen=True)
class MixSpec:
    target_language: str
    proportion: int
    seed: int = 0

    def __post_init__(self):
        if self.proportion not in MIX_PROPORTIONS:
            raise ValueError(f"proportion must be one of {MIX_PROPORTIONS}, got {self.proportion}")


def mix_size(n_target: int, proportion: int) -> int:
    return proportion * n_target // 100


def build_multilingual_mix(english_train: Sequence, target_train: Sequence, spec: MixSpec) -> list:
    """All English rows plus floor(p * |target|) sampled target rows, shuffled with ``spec.seed``."""
    if not english_train or not target_train:
        raise ValueError("both splits must be non-empty")
    rng = random.Random(spec.seed)
    sampled = rng.sample(list(target_train), mix_size(len(target_train), spec.proportion))
    mix = list(english_train) + sampled
    rng.shuffle(mix)
    return mix


# -- translation -----------------------------------------------------------------


class TranslationRetryExhausted(RuntimeError):
    def __init__(self, record, attempts: int, last_attempt):
        super().__init__(f"translation failed containment after {attempts} attempt(s)")
        self.record = record
        self.attempts = attempts
        self.last_attempt = last_attempt


@dataclass
class TranslationOutcome:
    record: object
    attempts: int
    history: list[str] = field(default_factory=list)


def compass_translation_prompt(record: CompassRecord, target_language: str) -> str:
    template, _ = load_template("compass_translation")
    instruction = template.format(language=LANGUAGES[target_language], operation_name=record.operation_name)
    payload = {k: getattr(record, k) for k in ("user_question", "operation_name", "custom_input")}
    return f"{instruction}\n\n{json.dumps(payload, ensure_ascii=False)}"


def _parse_translation(text: str) -> dict | None:
    lo, hi = text.find("{"), text.rfind("}")
    if lo < 0 or hi <= lo:
        return None
    try:
        data = json.loads(text[lo : hi + 1])
    except json.JSONDecodeError:
        return None
    if not isinstance(data, dict) or not all(isinstance(data.get(k), str) for k in ("user_question", "custom_input")):
        return None
    return data


def translate_record(record, target_language: str, backend, max_attempts: int = TRANSLATION_RETRY_CAP) -> TranslationOutcome:
    """Translate a record; Compass rows are retried until containment holds."""
    lang = normalize_language(target_language)
    if isinstance(record, CoxqlRecord):
        question = translate(record.question, lang, backend)
        return TranslationOutcome(CoxqlRecord(question, record.parse, lang), 1, [question])
    prompt = compass_translation_prompt(record, lang)
    history: list[str] = []
    last = None
    for attempt in range(1, max_attempts + 1):
        # the retry suffix keeps prompts distinct so replayed fixtures can differ per attempt
        suffix = "" if attempt == 1 else f"\n\n(attempt {attempt})"
        comp = backend.complete(GenerationRequest(prompt + suffix, max_new_tokens=1024))
        history.append(comp.text)
        data = _parse_translation(comp.text)
        if data is None:
            continue
        last = CompassRecord(data["user_question"].strip(), record.operation_name, data["custom_input"].strip(), lang)
        if last.custom_input and validate_containment(last.custom_input, last.user_question):
            return TranslationOutcome(last, attempt, history)
    raise TranslationRetryExhausted(record, max_attempts, last if last is not None else (history[-1] if history else None))


# -- statistics ------------------------------------------------------------------


def record_operation(record, registry: OperationRegistry) -> str:
    if isinstance(record, CompassRecord):
        return record.operation_name
    from .query_language import main_intent

    return main_intent(parse_label(record.parse, registry), registry)


def dataset_stats(bundle: DatasetBundle) -> dict[str, Counter]:
    """Per split: Counter over (operation, language)."""
    out: dict[str, Counter] = {}
    for split, rows in bundle.splits.items():
        out[split] = Counter((record_operation(r, bundle.registry), r.language) for r in rows)
    return out


def stats_table(counts: Counter, languages: Sequence[str] | None = None) -> str:
    """Markdown table: operations as rows, languages as columns, with totals."""
    if not counts:
        return "| operation | total |\n|---|---|\n"
    langs = list(languages) if languages else sorted({lang for _, lang in counts})
    ops = sorted({op for op, _ in counts})
    lines = ["| operation | " + " | ".join(langs) + " | total |", "|---" * (len(langs) + 2) + "|"]
    for op in ops:
        row = [counts.get((op, lang), 0) for lang in langs]
        lines.append(f"| {op} | " + " | ".join(map(str, row)) + f" | {sum(row)} |")
    totals = [sum(counts.get((op, lang), 0) for op in ops) for lang in langs]
    lines.append("| total | " + " | ".join(map(str, totals)) + f" | {sum(totals)} |")
    return "\n".join(lines) + "\n"
