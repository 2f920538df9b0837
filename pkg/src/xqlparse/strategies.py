"""Explanation-request parsing strategies: NN, GD, MP, MP+ and GMP.

Every strategy takes a question and a :class:`ParserContext` and returns a
:class:`ParsingTrace`. Failures are results, not exceptions, so evaluation
can count them. The exception is :class:`~xqlparse.lm_gateway.FixtureMiss`,
which always propagates: a missing fixture is a broken test setup.
"""

from __future__ import annotations

import json
import threading
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np

from .embeddings import build_centroids, embed, topk_examples, topk_intents
from .grammar import (
    Grammar,
    PrefixRecognizer,
    build_full_grammar,
    derive_intent_grammar,
    derive_intent_only_grammar,
)
from .lm_gateway import ConfigurationError, FixtureMiss, GenerationError, GenerationRequest, generate
from .query_language import (
    LabelError,
    OperationRegistry,
    UnknownOperation,
    canonicalize,
    main_intent,
    parse_label,
    serialize,
    template_check,
)
from .records import CoxqlRecord
from .templates import load_template
from .tokenizer import MockTokenizer

STRATEGIES = ("nn", "gd", "mp", "mp_plus", "gmp")
GMP_STAGES = ("centroids", "candidates", "coarse_intent", "fine_parse")


@dataclass
class StageRecord:
    name: str
    prompt: str | None = None
    raw_output: str | None = None
    value: Any = None


@dataclass
class ParsingTrace:
    strategy: str
    question: str
    stages: list[StageRecord] = field(default_factory=list)
    final_parse: str | None = None
    failure: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False, sort_keys=True)

    def fail(self, diagnostic: str) -> "ParsingTrace":
        self.final_parse = None
        self.failure = diagnostic
        return self

    def succeed(self, parse: str) -> "ParsingTrace":
        self.final_parse = parse
        self.failure = None
        return self


@dataclass(frozen=True)
class DemonstrationSet:
    entries: tuple[tuple[str, str], ...]
    indices: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.entries)


class ParserContext:
    """Shared, read-only inputs for the strategies, with lazily cached derived data.

    ``train`` holds the demonstration pool. Embeddings of the pool, intent
    centroids and grammars are computed once and reused across questions;
    the context is safe to share between worker threads.
    """

    def __init__(
        self,
        registry: OperationRegistry,
        train: Sequence[CoxqlRecord],
        provider=None,
        backend=None,
        tokenizer=None,
        shots: int = 20,
        k: int = 3,
        per_intent_demos: int = 3,
        fine_demos: int = 10,
        mp_demos: int = 10,
        max_new_tokens: int = 48,
    ):
        if not train:
            raise ValueError("empty training pool")
        self.registry = registry
        self.train = list(train)
        self.provider = provider
        self.backend = backend
        self.tokenizer = tokenizer or MockTokenizer.for_registry(registry)
        self.shots = shots
        self.k = k
        self.per_intent_demos = per_intent_demos
        self.fine_demos = fine_demos
        self.mp_demos = mp_demos
        self.max_new_tokens = max_new_tokens
        self.gold = [canonicalize(r.parse, registry) for r in self.train]
        self.intents = [main_intent(parse_label(g, registry), registry) for g in self.gold]
        self.pool = [(r.question, intent) for r, intent in zip(self.train, self.intents)]
        self._lock = threading.RLock()
        self._vectors: np.ndarray | None = None
        self._centroids = None
        self._full: Grammar | None = None
        self._intent_grammars: dict[str, Grammar] = {}

    def _need(self, what: str, value) -> None:
        if value is None:
            raise ConfigurationError(f"this strategy needs a configured {what}")

    @property
    def vectors(self) -> np.ndarray:
        with self._lock:
            if self._vectors is None:
                self._need("embedding provider", self.provider)
                self._vectors = embed([q for q, _ in self.pool], self.provider)
            return self._vectors

    @property
    def centroids(self):
        with self._lock:
            if self._centroids is None:
                self._centroids = build_centroids(self.pool, self.provider, self.vectors)
            return self._centroids

    @property
    def full_grammar(self) -> Grammar:
        with self._lock:
            if self._full is None:
                self._full = build_full_grammar(self.registry)
            return self._full

    def intent_grammar(self, operation: str) -> Grammar:
        with self._lock:
            if operation not in self._intent_grammars:
                self._intent_grammars[operation] = derive_intent_grammar(self.registry, operation)
            return self._intent_grammars[operation]

    def query_vector(self, question: str) -> np.ndarray:
        return embed([question], self.provider)[0]

    def demonstrations(self, question: str, n: int, intents=None, qvec=None) -> DemonstrationSet:
        """``n`` most similar pool entries (most similar first), optionally per intent set."""
        qvec = self.query_vector(question) if qvec is None else qvec
        hits = topk_examples(question, self.pool, n, self.provider, intent_filter=intents,
                             pool_vectors=self.vectors, query_vector=qvec)
        return DemonstrationSet(tuple((self.train[h.example_ref].question, self.gold[h.example_ref]) for h in hits),
                                tuple(h.example_ref for h in hits))


# -- prompt assembly ---------------------------------------------------------------


def _listing(registry: OperationRegistry, names: Sequence[str] | None = None) -> str:
    ops = registry.clause_operations() if names is None else [registry[n] for n in names]
    return "\n".join(f"- {op.name}: {op.description}" for op in ops)


def _templates(registry: OperationRegistry, names: Sequence[str]) -> str:
    return "\n".join(f"- {registry[n].signature()}" for n in names)


def _prompt(header: str, demos: Sequence[tuple[str, str]], question: str, answer_tag: str) -> str:
    blocks = [header]
    blocks.extend(f"[Question] {q}\n[{answer_tag}] {a}" for q, a in demos)
    blocks.append(f"[Question] {question}\n[{answer_tag}]")
    return "\n\n".join(blocks)


def _filter_names(registry: OperationRegistry) -> list[str]:
    return [op.name for op in registry.clause_operations() if op.category == "filter"]


def _constrained(ctx: ParserContext, prompt: str, grammar: Grammar):
    req = GenerationRequest(prompt, max_new_tokens=ctx.max_new_tokens, stop_sequences=("\n",),
                            constraint=PrefixRecognizer.start(grammar))
    return generate(req, ctx.backend, ctx.tokenizer)


def _finish_failure(reason: str) -> str | None:
    if reason in ("eos", "stop"):
        return None
    return "BudgetExhausted" if reason == "length" else "ConstraintExhausted"


# -- strategies --------------------------------------------------------------------


def parse_nn(question: str, ctx: ParserContext) -> ParsingTrace:
    """Gold parse of the single most similar training question."""
    trace = ParsingTrace("nn", question)
    demo = ctx.demonstrations(question, 1)
    idx = demo.indices[0]
    trace.stages.append(StageRecord("nearest_neighbor", value={"index": idx, "question": demo.entries[0][0]}))
    return trace.succeed(demo.entries[0][1])


def parse_gd(question: str, ctx: ParserContext) -> ParsingTrace:
    """One generation under the full grammar, prompted with ``ctx.shots`` similar demonstrations."""
    ctx._need("backend", ctx.backend)
    trace = ParsingTrace("gd", question)
    demos = ctx.demonstrations(question, min(ctx.shots, len(ctx.pool)))
    header, _ = load_template("gd")
    prompt = _prompt(header.format(operations=_templates(ctx.registry, [o.name for o in ctx.registry.clause_operations()])),
                     demos.entries, question, "Parse")
    stage = StageRecord("guided_decoding", prompt, value={"demonstrations": list(demos.indices)})
    trace.stages.append(stage)
    try:
        comp = _constrained(ctx, prompt, ctx.full_grammar)
    except FixtureMiss:
        raise
    except GenerationError as exc:
        return trace.fail(f"GenerationError({exc})")
    stage.raw_output = comp.text
    failure = _finish_failure(comp.finish_reason)
    if failure:
        return trace.fail(failure)
    return trace.succeed(canonicalize(comp.text, ctx.registry))


def _mp_stages(question: str, ctx: ParserContext, trace: ParsingTrace) -> str | None:
    """Run both MP prompts; returns the raw stage-2 text or None after recording a failure."""
    ctx._need("backend", ctx.backend)
    qvec = ctx.query_vector(question)
    demos = ctx.demonstrations(question, min(ctx.mp_demos, len(ctx.pool)), qvec=qvec)
    header, _ = load_template("mp_operation")
    op_demos = [(q, ctx.intents[i]) for (q, _), i in zip(demos.entries, demos.indices)]
    prompt1 = _prompt(header.format(operations=_listing(ctx.registry)), op_demos, question, "Operation")
    try:
        comp1 = ctx.backend.complete(GenerationRequest(prompt1, max_new_tokens=8, stop_sequences=("\n",)))
    except FixtureMiss:
        raise
    except GenerationError as exc:
        trace.stages.append(StageRecord("operation", prompt1))
        trace.fail(f"GenerationError({exc})")
        return None
    operation = comp1.text.strip().lower()
    trace.stages.append(StageRecord("operation", prompt1, comp1.text, operation))
    if operation not in ctx.registry or ctx.registry[operation].category == "logic":
        trace.fail(str(UnknownOperation(comp1.text.strip())))
        return None

    fine = ctx.demonstrations(question, min(ctx.fine_demos, ctx.intents.count(operation)), [operation], qvec) \
        if operation in ctx.intents else DemonstrationSet((), ())
    header, _ = load_template("mp_attributes")
    templates = _templates(ctx.registry, [operation] + _filter_names(ctx.registry))
    prompt2 = _prompt(header.format(operation=operation, templates=templates), fine.entries, question, "Parse")
    try:
        comp2 = ctx.backend.complete(GenerationRequest(prompt2, max_new_tokens=ctx.max_new_tokens,
                                                       stop_sequences=("\n",)))
    except FixtureMiss:
        raise
    except GenerationError as exc:
        trace.stages.append(StageRecord("attributes", prompt2, value={"demonstrations": list(fine.indices)}))
        trace.fail(f"GenerationError({exc})")
        return None
    text = comp2.text.strip()
    trace.stages.append(StageRecord("attributes", prompt2, comp2.text, {"demonstrations": list(fine.indices)}))
    return text


def parse_mp(question: str, ctx: ParserContext) -> ParsingTrace:
    """Two unconstrained prompts: operation first, then the full parse.

    The stage-2 text is accepted only if it is already a complete template
    instance (every slot written out, nothing trailing).
    """
    trace = ParsingTrace("mp", question)
    text = _mp_stages(question, ctx, trace)
    if text is None:
        return trace
    check = template_check(text, ctx.registry)
    if check.status != "valid":
        return trace.fail(check.diagnostics[0] if check.status == "rejected" else f"Incomplete({check.diagnostics[0]})")
    return trace.succeed(serialize(check.tree, ctx.registry))


def parse_mp_plus(question: str, ctx: ParserContext) -> ParsingTrace:
    """:func:`parse_mp` followed by template validation and repair."""
    trace = ParsingTrace("mp_plus", question)
    text = _mp_stages(question, ctx, trace)
    if text is None:
        return trace
    check = template_check(text, ctx.registry)
    trace.stages.append(StageRecord("template_check", raw_output=text,
                                    value={"status": check.status, "diagnostics": check.diagnostics}))
    if not check.ok:
        return trace.fail(check.diagnostics[0])
    return trace.succeed(serialize(check.tree, ctx.registry))


def parse_gmp(question: str, ctx: ParserContext) -> ParsingTrace:
    """Centroid retrieval, candidate demonstrations, guided intent choice, guided slot filling."""
    ctx._need("backend", ctx.backend)
    trace = ParsingTrace("gmp", question)
    registry = ctx.registry
    centroids = ctx.centroids
    trace.stages.append(StageRecord("centroids", value=[{"intent": c.intent, "support": c.support_count}
                                                        for c in centroids]))

    qvec = ctx.query_vector(question)
    k = min(ctx.k, len(centroids))
    ranked = topk_intents(question, centroids, k, ctx.provider, query_vector=qvec)
    candidates = [name for name, _ in ranked]
    per_intent = {
        name: ctx.demonstrations(question, min(ctx.per_intent_demos, ctx.intents.count(name)), [name], qvec)
        for name in candidates
    }
    trace.stages.append(StageRecord("candidates", value={
        "intents": [{"intent": n, "score": round(s, 6)} for n, s in ranked],
        "demonstrations": {n: list(d.indices) for n, d in per_intent.items()},
    }))

    header, _ = load_template("gmp_intent")
    demos = [(q, name) for name in candidates for q, _ in per_intent[name].entries]
    prompt3 = _prompt(header.format(operations=_listing(registry, candidates)), demos, question, "Intent")
    stage3 = StageRecord("coarse_intent", prompt3)
    trace.stages.append(stage3)
    try:
        comp3 = _constrained(ctx, prompt3, derive_intent_only_grammar(registry, candidates))
    except FixtureMiss:
        raise
    except GenerationError as exc:
        return trace.fail(f"GenerationError({exc})")
    stage3.raw_output = comp3.text
    failure = _finish_failure(comp3.finish_reason)
    if failure:
        return trace.fail(failure)
    intent = comp3.text
    stage3.value = intent

    fine = ctx.demonstrations(question, min(ctx.fine_demos, ctx.intents.count(intent)), [intent], qvec)
    header, _ = load_template("gmp_parse")
    templates = _templates(registry, [intent] + [n for n in _filter_names(registry) if n != intent])
    prompt4 = _prompt(header.format(operation=intent, templates=templates), fine.entries, question, "Parse")
    stage4 = StageRecord("fine_parse", prompt4, value={"demonstrations": list(fine.indices)})
    trace.stages.append(stage4)
    try:
        comp4 = _constrained(ctx, prompt4, ctx.intent_grammar(intent))
    except FixtureMiss:
        raise
    except GenerationError as exc:
        return trace.fail(f"GenerationError({exc})")
    stage4.raw_output = comp4.text
    failure = _finish_failure(comp4.finish_reason)
    if failure:
        return trace.fail(failure)
    return trace.succeed(canonicalize(comp4.text, registry))


PARSERS = {"nn": parse_nn, "gd": parse_gd, "mp": parse_mp, "mp_plus": parse_mp_plus, "gmp": parse_gmp}


def run_strategy(strategy: str, question: str, ctx: ParserContext) -> ParsingTrace:
    try:
        parser = PARSERS[strategy]
    except KeyError:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {', '.join(STRATEGIES)}") from None
    trace = parser(question, ctx)
    if trace.final_parse is not None:
        try:
            parse_label(trace.final_parse, ctx.registry)
        except LabelError as exc:
            trace.fail(f"InvalidFinalParse({exc})")
    return trace
