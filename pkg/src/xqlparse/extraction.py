"""Custom-input extraction: prompts, output codecs, containment, scoring.

Four output conventions are supported. ``naive`` returns the span as plain
text, ``tanl`` tags it inline as ``[ span | custom_input ]``, ``gptner`` wraps
it in ``@@span##`` and ``gollie`` returns a list of strings.
"""

from __future__ import annotations

import ast
import json
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Sequence

from .embeddings import topk_examples
from .lm_gateway import GenerationRequest
from .query_language import OperationRegistry
from .records import CompassRecord
from .templates import load_template

APPROACHES = ("naive", "tanl", "gptner", "gollie")
N_DEMOS = 10
TANL_LABEL = "custom_input"
_QUOTES = "\"'`“”„‘’«»「」『』"
_TANL_RE = re.compile(r"\[\s*(.*?)\s*\|\s*" + TANL_LABEL + r"\s*\]", re.DOTALL)
_GOLLIE_CALL_RE = re.compile(r"CustomInput\(\s*span\s*=\s*(\"(?:[^\"\\]|\\.)*\"|'(?:[^'\\]|\\.)*')\s*\)")


class DecodeError(ValueError):
    code = "DecodeError"


class MissingAnnotation(DecodeError):
    code = "MissingAnnotation"


class UnbalancedMarkers(DecodeError):
    code = "UnbalancedMarkers"


class NotAList(DecodeError):
    code = "NotAList"


@dataclass
class Decoded:
    text: str | None
    diagnostics: list[str] = field(default_factory=list)


@dataclass
class ExtractionResult:
    extracted: str | None
    approach: str
    raw_output: str
    contained: bool
    decode_error: str | None = None
    diagnostics: list[str] = field(default_factory=list)


def nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


# -- encoders (demonstration targets) ----------------------------------------


def encode_naive(span: str, question: str | None = None) -> str:
    return span


def encode_tanl(span: str, question: str) -> str:
    i = question.find(span)
    if i < 0:
        raise ValueError("span is not contained in the question")
    return f"{question[:i]}[ {span} | {TANL_LABEL} ]{question[i + len(span):]}"


def encode_gptner(span: str, question: str) -> str:
    i = question.find(span)
    if i < 0:
        raise ValueError("span is not contained in the question")
    return f"{question[:i]}@@{span}##{question[i + len(span):]}"


def encode_gollie(span: str | None, question: str | None = None) -> str:
    return json.dumps([] if span is None else [span], ensure_ascii=False)


ENCODERS = {"naive": encode_naive, "tanl": encode_tanl, "gptner": encode_gptner, "gollie": encode_gollie}


# -- decoders ------------------------------------------------------------------


def decode_naive(raw: str) -> Decoded:
    text = raw.strip()
    while len(text) >= 2 and text[0] in _QUOTES and text[-1] in _QUOTES:
        text = text[1:-1].strip()
    return Decoded(text or None)


def decode_tanl(raw: str) -> Decoded:
    found = _TANL_RE.findall(raw)
    if not found:
        raise MissingAnnotation(f"no '[ ... | {TANL_LABEL} ]' annotation in output")
    diags = ["MultipleAnnotations"] if len(found) > 1 else []
    return Decoded(found[0] or None, diags)


def decode_gptner(raw: str) -> Decoded:
    start = raw.find("@@")
    if start < 0:
        if "##" in raw:
            raise UnbalancedMarkers("closing '##' without '@@'")
        raise MissingAnnotation("no '@@...##' markers in output")
    end = raw.find("##", start + 2)
    if end < 0:
        raise UnbalancedMarkers("'@@' is never closed by '##'")
    diags = ["MultipleAnnotations"] if "@@" in raw[end + 2 :] else []
    return Decoded(raw[start + 2 : end] or None, diags)


def _literal_list(text: str):
    for loader in (json.loads, ast.literal_eval):
        try:
            return loader(text)
        except (ValueError, SyntaxError, TypeError, MemoryError, RecursionError):
            continue
    return None


def decode_gollie(raw: str) -> Decoded:
    text = raw.strip()
    calls = _GOLLIE_CALL_RE.findall(text)
    if calls:
        items = [ast.literal_eval(c) for c in calls]
    else:
        items = _literal_list(text)
        if not isinstance(items, list):
            lo, hi = text.find("["), text.rfind("]")
            items = _literal_list(text[lo : hi + 1]) if 0 <= lo < hi else None
        if not isinstance(items, list) or not all(isinstance(x, str) for x in items):
            raise NotAList("output is not a list of strings")
    if not items:
        return Decoded(None)
    diags = [f"ExtraItems({len(items) - 1})"] if len(items) > 1 else []
    return Decoded(items[0] or None, diags)


DECODERS = {"naive": decode_naive, "tanl": decode_tanl, "gptner": decode_gptner, "gollie": decode_gollie}


def validate_containment(extracted: str | None, question: str) -> bool:
    """Exact contiguous-substring test after NFC normalisation."""
    if extracted is None:
        return False
    return nfc(extracted) in nfc(question)


def extract(approach: str, question: str, raw: str) -> ExtractionResult:
    if approach not in DECODERS:
        raise ValueError(f"unknown approach {approach!r}")
    try:
        dec = DECODERS[approach](raw)
    except DecodeError as exc:
        return ExtractionResult(None, approach, raw, False, exc.code, [str(exc)])
    return ExtractionResult(dec.text, approach, raw, validate_containment(dec.text, question), None, dec.diagnostics)


# -- prompts ---------------------------------------------------------------------


def _render_target(approach: str, record: CompassRecord) -> str:
    return ENCODERS[approach](record.custom_input, record.user_question)


def build_extraction_prompt(approach: str, question: str, demos: Sequence[CompassRecord],
                            language: str | None = None) -> str:
    if approach not in APPROACHES:
        raise ValueError(f"unknown approach {approach!r}")
    instruction, _ = load_template(f"extraction_{approach}", language)
    blocks = [instruction]
    for demo in demos:
        blocks.append(f"[User Question] {demo.user_question}\n[Custom Input] {_render_target(approach, demo)}")
    blocks.append(f"[User Question] {question}\n[Custom Input]")
    return "\n\n".join(blocks)


def select_demos(question: str, train: Sequence[CompassRecord], provider, n: int = N_DEMOS,
                 pool_vectors=None) -> list[CompassRecord]:
    """``n`` most similar training records, most similar first."""
    pool = [(r.user_question, r.operation_name) for r in train]
    hits = topk_examples(question, pool, n, provider, pool_vectors=pool_vectors)
    return [train[h.example_ref] for h in hits]


# -- intent classification -----------------------------------------------------


def load_aliases() -> dict[str, dict[str, str]]:
    text = resources.files("xqlparse.data").joinpath("intent_aliases.json").read_text("utf-8")
    return json.loads(text)


def _norm_label(label: str) -> str:
    text = nfc(label).strip().strip(_QUOTES + ".,:;!?()[]").strip().casefold()
    return re.sub(r"[\s\-]+", "_", text)


def normalize_intent(label: str, registry: OperationRegistry, aliases: Mapping[str, Mapping[str, str]] | None = None,
                     language: str | None = None) -> str | None:
    """Map a generated label onto a registry name, via aliases if needed."""
    key = _norm_label(label.splitlines()[0] if label.strip() else "")
    if not key:
        return None
    if key in registry:
        return key
    aliases = load_aliases() if aliases is None else aliases
    tables = []
    if language and language.upper() in aliases:
        tables.append(aliases[language.upper()])
    tables.append(aliases.get("*", {}))
    tables.extend(t for lang, t in aliases.items() if lang != "*" and lang != (language or "").upper())
    for table in tables:
        target = table.get(key)
        if target and target in registry:
            return target
    return None


@dataclass
class IntentResult:
    intent: str | None
    raw_output: str
    prompt: str
    failure: str | None = None


def build_intent_prompt(question: str, demos: Sequence[CompassRecord], registry: OperationRegistry) -> str:
    header, _ = load_template("intent")
    listing = "\n".join(f"- {op.name}: {op.description}" for op in registry)
    blocks = [header.format(operations=listing)]
    for demo in demos:
        blocks.append(f"[User Question] {demo.user_question}\n[Intent] {demo.operation_name}")
    blocks.append(f"[User Question] {question}\n[Intent]")
    return "\n\n".join(blocks)


def classify_intent_fewshot(question: str, train: Sequence[CompassRecord], backend, provider,
                            registry: OperationRegistry, n: int = N_DEMOS, language: str | None = None,
                            aliases=None, pool_vectors=None) -> IntentResult:
    demos = select_demos(question, train, provider, n, pool_vectors)
    prompt = build_intent_prompt(question, demos, registry)
    comp = backend.complete(GenerationRequest(prompt, max_new_tokens=16, stop_sequences=("\n",)))
    intent = normalize_intent(comp.text, registry, aliases, language)
    failure = None if intent else f"UnknownIntent({comp.text.strip()!r})"
    return IntentResult(intent, comp.text, prompt, failure)


# -- scoring ---------------------------------------------------------------------


@dataclass
class ExtractionScore:
    exact_f1: float
    overlap_f1: float
    total: int
    correct: int
    decode_errors: int
    not_contained: int


def _clean(text: str | None) -> str | None:
    return None if text is None else nfc(text).strip()


def score_extraction(results: Sequence[ExtractionResult], golds: Sequence[CompassRecord]) -> ExtractionScore:
    """Instance-level exact-match micro-F1 plus a character-overlap diagnostic."""
    from .evaluation import micro_f1

    if len(results) != len(golds):
        raise ValueError("results and golds must be aligned")
    preds = [_clean(r.extracted) for r in results]
    refs = [_clean(g.custom_input) for g in golds]
    exact = micro_f1(preds, refs)
    common = pred_chars = gold_chars = 0
    for p, g in zip(preds, refs):
        pc, gc = Counter(p or ""), Counter(g or "")
        common += sum((pc & gc).values())
        pred_chars += sum(pc.values())
        gold_chars += sum(gc.values())
    if common:
        prec, rec = common / pred_chars, common / gold_chars
        overlap = 100 * 2 * prec * rec / (prec + rec)
    else:
        overlap = 0.0
    return ExtractionScore(
        exact_f1=exact,
        overlap_f1=overlap,
        total=len(results),
        correct=sum(p is not None and p == g for p, g in zip(preds, refs)),
        decode_errors=sum(r.decode_error is not None for r in results),
        not_contained=sum(r.extracted is not None and not r.contained for r in results),
    )
