"""Operation registry and the whitespace-token label language.

A label is a chain of clauses joined by ``and`` / ``or``. Each clause is an
operation name followed by its slot values in declaration order. Integer
slots are written as ``<slot name> <value>`` (``filter id 68``); enum and
free-token slots are written as the bare value (``nlpattribute topk 5 lime``);
flag slots (kind ``none``) are written as the slot name alone.

Parsing is lenient about omitted optional slots; :func:`serialize` always
emits defaults, so two labels that differ only in whether a default was
spelled out compare equal.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence, Union

CATEGORIES = (
    "local_prediction",
    "global_prediction",
    "local_explanation",
    "perturbation",
    "data",
    "modification",
    "meta",
    "filter",
    "logic",
)
SLOT_KINDS = ("integer", "enum_token", "free_token", "none")
CONNECTORS = ("and", "or")

_NAME_RE = re.compile(r"[a-z_]+\Z")
_INT_RE = re.compile(r"(0|[1-9][0-9]*)\Z")
_FREE_RE = re.compile(r"[a-z_][a-z0-9_]*\Z")

SlotValue = Union[int, str, bool]


class RegistryError(ValueError):
    """Malformed registry document."""


class LabelError(ValueError):
    """Base class for label parse failures."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position


class UnknownOperation(LabelError):
    def __init__(self, token: str, position: int | None = None):
        super().__init__(f"UnknownOperation({token!r})", position)
        self.token = token


class BadSlotValue(LabelError):
    def __init__(self, slot: str, token: str | None, position: int | None = None):
        shown = "<end>" if token is None else repr(token)
        super().__init__(f"BadSlotValue({slot}, {shown})", position)
        self.slot = slot
        self.token = token


class DanglingConnector(LabelError):
    def __init__(self, position: int | None = None):
        super().__init__("DanglingConnector", position)


class TrailingTokens(LabelError):
    def __init__(self, tokens: Sequence[str], position: int | None = None):
        super().__init__(f"TrailingTokens({' '.join(tokens)!r})", position)
        self.tokens = tuple(tokens)


@dataclass(frozen=True)
class SlotSpec:
    name: str
    kind: str
    allowed_values: frozenset[str] = frozenset()
    required: bool = True
    default: str | None = None

    def __post_init__(self):
        if self.kind not in SLOT_KINDS:
            raise RegistryError(f"slot {self.name!r}: malformed slot kind {self.kind!r}")
        if self.kind == "enum_token" and not self.allowed_values:
            raise RegistryError(f"slot {self.name!r}: enum slot with empty value set")
        if self.required and self.default is not None:
            raise RegistryError(f"slot {self.name!r}: required slot cannot carry a default")
        if self.kind == "none" and self.required:
            raise RegistryError(f"slot {self.name!r}: flag slots are always optional")
        if self.default is not None and not self.accepts(self.default):
            raise RegistryError(f"slot {self.name!r}: default {self.default!r} is not a legal value")

    @property
    def keyword(self) -> bool:
        """Whether the slot name is written before the value."""
        return self.kind in ("integer", "none")

    def accepts(self, token: str) -> bool:
        if self.kind == "integer":
            return bool(_INT_RE.match(token))
        if self.kind == "enum_token":
            return token in self.allowed_values
        if self.kind == "free_token":
            return bool(_FREE_RE.match(token)) and token not in CONNECTORS
        return False

    def coerce(self, token: str) -> SlotValue:
        return int(token) if self.kind == "integer" else token

    def default_value(self) -> SlotValue | None:
        return None if self.default is None else self.coerce(self.default)


@dataclass(frozen=True)
class OperationSpec:
    name: str
    category: str
    slots: tuple[SlotSpec, ...] = ()
    description: str = ""
    accepts_custom_input: bool = False

    @property
    def operands(self) -> int:
        return 2 if self.category == "logic" else 0

    def slot(self, name: str) -> SlotSpec:
        for s in self.slots:
            if s.name == name:
                return s
        raise KeyError(name)

    def signature(self) -> str:
        parts = [self.name]
        for s in self.slots:
            if s.kind == "integer":
                parts.append(f"{s.name} <int>")
            elif s.kind == "enum_token":
                parts.append("{" + "|".join(sorted(s.allowed_values)) + "}")
            elif s.kind == "free_token":
                parts.append(f"<{s.name}>")
            else:
                parts.append(f"[{s.name}]")
        return " ".join(parts)


class OperationRegistry:
    """Immutable, name-indexed set of operations."""

    def __init__(self, operations: Sequence[OperationSpec], name: str = "registry"):
        if not operations:
            raise RegistryError("no operations defined")
        by_name: dict[str, OperationSpec] = {}
        for op in operations:
            if not _NAME_RE.match(op.name):
                raise RegistryError(f"invalid operation name {op.name!r}")
            if op.name in by_name:
                raise RegistryError(f"duplicate operation name {op.name!r}")
            if op.category not in CATEGORIES:
                raise RegistryError(f"{op.name}: unknown category {op.category!r}")
            if op.category == "logic" and op.slots:
                raise RegistryError(f"{op.name}: logic operations take no slots")
            by_name[op.name] = op
        self.name = name
        self._ops = by_name

    def __len__(self) -> int:
        return len(self._ops)

    def __iter__(self):
        return iter(self._ops.values())

    def __contains__(self, name: object) -> bool:
        return name in self._ops

    def __getitem__(self, name: str) -> OperationSpec:
        return self._ops[name]

    @property
    def names(self) -> list[str]:
        return list(self._ops)

    def clause_operations(self) -> list[OperationSpec]:
        """Operations that may head a clause (everything except connectors)."""
        return [op for op in self._ops.values() if op.category != "logic"]

    def connectors(self) -> list[str]:
        names = [op.name for op in self._ops.values() if op.category == "logic"]
        return names or list(CONNECTORS)


def _slot_from_json(doc: Mapping) -> SlotSpec:
    try:
        name = doc["name"]
        kind = doc["kind"]
    except KeyError as exc:
        raise RegistryError(f"slot missing field {exc}") from None
    default = doc.get("default")
    return SlotSpec(
        name=name,
        kind=kind,
        allowed_values=frozenset(doc.get("allowed_values") or ()),
        required=bool(doc.get("required", default is None)),
        default=None if default is None else str(default),
    )


def registry_load(document: str | Mapping) -> OperationRegistry:
    """Build a registry from a JSON document (text or already-decoded)."""
    if isinstance(document, str):
        if not document.strip():
            raise RegistryError("no operations defined")
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise RegistryError(f"registry is not valid JSON: {exc}") from None
    ops_doc = document.get("operations") or []
    ops = []
    for entry in ops_doc:
        try:
            ops.append(
                OperationSpec(
                    name=entry["name"],
                    category=entry["category"],
                    slots=tuple(_slot_from_json(s) for s in entry.get("slots", ())),
                    description=entry.get("description", ""),
                    accepts_custom_input=bool(entry.get("accepts_custom_input", False)),
                )
            )
        except KeyError as exc:
            raise RegistryError(f"operation missing field {exc}") from None
    return OperationRegistry(ops, name=document.get("name", "registry"))


def registry_to_json(registry: OperationRegistry) -> dict:
    ops = []
    for op in registry:
        slots = []
        for s in op.slots:
            d = {"name": s.name, "kind": s.kind, "required": s.required}
            if s.allowed_values:
                d["allowed_values"] = sorted(s.allowed_values)
            if s.default is not None:
                d["default"] = s.default
            slots.append(d)
        ops.append(
            {
                "name": op.name,
                "category": op.category,
                "slots": slots,
                "accepts_custom_input": op.accepts_custom_input,
                "description": op.description,
            }
        )
    return {"name": registry.name, "operations": ops}


def load_bundled_registry(name: str) -> OperationRegistry:
    """Load ``coxql`` or ``compass`` from the package data."""
    text = resources.files("xqlparse.data").joinpath(f"{name}.registry.json").read_text("utf-8")
    return registry_load(text)


def load_registry_file(path: str | Path) -> OperationRegistry:
    return registry_load(Path(path).read_text("utf-8"))


@dataclass(frozen=True)
class Clause:
    operation: str
    bindings: tuple[tuple[str, SlotValue], ...] = ()

    @classmethod
    def of(cls, operation: str, **bindings: SlotValue) -> "Clause":
        return cls(operation, tuple(bindings.items()))

    def get(self, slot: str, default=None):
        return dict(self.bindings).get(slot, default)


@dataclass(frozen=True)
class ParseTree:
    clauses: tuple[Clause, ...]
    connectors: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.clauses:
            raise ValueError("a parse tree needs at least one clause")
        if len(self.connectors) != len(self.clauses) - 1:
            raise ValueError("connectors must number one fewer than clauses")

    def operations(self) -> list[str]:
        return [c.operation for c in self.clauses]


def main_intent(tree: ParseTree, registry: OperationRegistry) -> str:
    """The operation a request is about: the first non-filter clause, else the last clause."""
    for clause in tree.clauses:
        if registry[clause.operation].category != "filter":
            return clause.operation
    return tree.clauses[-1].operation


def tokenize(text: str) -> list[str]:
    return text.split()


class _ClauseReader:
    """Cursor over label tokens; shared by strict and lenient parsing."""

    def __init__(self, tokens: list[str], registry: OperationRegistry, collect: list | None = None):
        self.tokens = tokens
        self.registry = registry
        self.pos = 0
        self.collect = collect

    def peek(self) -> str | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def fail(self, err: LabelError):
        if self.collect is None:
            raise err
        self.collect.append(err)

    def read_clause(self) -> Clause | None:
        tok = self.peek()
        if tok is None or tok in CONNECTORS:
            self.fail(DanglingConnector(self.pos))
            return None
        if tok not in self.registry or self.registry[tok].category == "logic":
            self.fail(UnknownOperation(tok, self.pos))
            self.pos += 1
            # skip the clause body so later clauses still get checked
            while self.peek() is not None and self.peek() not in CONNECTORS:
                self.pos += 1
            return None
        op = self.registry[tok]
        self.pos += 1
        bindings: list[tuple[str, SlotValue]] = []
        for slot in op.slots:
            nxt = self.peek()
            if slot.kind == "none":
                if nxt == slot.name:
                    bindings.append((slot.name, True))
                    self.pos += 1
                continue
            if slot.keyword:
                if nxt != slot.name:
                    if slot.required:
                        self.fail(BadSlotValue(slot.name, nxt, self.pos))
                    continue
                self.pos += 1
                val = self.peek()
                if val is None or not slot.accepts(val):
                    self.fail(BadSlotValue(slot.name, val, self.pos))
                    if val is not None and val not in CONNECTORS:
                        self.pos += 1
                    continue
                bindings.append((slot.name, slot.coerce(val)))
                self.pos += 1
                continue
            if nxt is not None and slot.accepts(nxt):
                bindings.append((slot.name, slot.coerce(nxt)))
                self.pos += 1
            elif slot.required:
                self.fail(BadSlotValue(slot.name, nxt, self.pos))
                if nxt is not None and nxt not in CONNECTORS:
                    self.pos += 1
        return Clause(op.name, tuple(bindings))


def _parse_tokens(tokens: list[str], registry: OperationRegistry, collect: list | None = None):
    reader = _ClauseReader(tokens, registry, collect)
    clauses: list[Clause | None] = [reader.read_clause()]
    connectors: list[str] = []
    trailing_at = None
    while reader.peek() is not None:
        tok = reader.peek()
        if tok in CONNECTORS:
            reader.pos += 1
            connectors.append(tok)
            clauses.append(reader.read_clause())
        else:
            trailing_at = reader.pos
            reader.fail(TrailingTokens(tokens[reader.pos :], reader.pos))
            break
    return clauses, connectors, trailing_at


def parse_label(text: str, registry: OperationRegistry) -> ParseTree:
    """Parse a label string; raises a :class:`LabelError` subclass on failure."""
    tokens = tokenize(text)
    clauses, connectors, _ = _parse_tokens(tokens, registry)
    return ParseTree(tuple(clauses), tuple(connectors))


def _slot_token(slot: SlotSpec, value: SlotValue) -> list[str]:
    if slot.kind == "none":
        return [slot.name] if value else []
    if slot.keyword:
        return [slot.name, str(value)]
    return [str(value)]


def complete_clause(clause: Clause, registry: OperationRegistry) -> Clause:
    """Fill unbound optional slots with their defaults, in declaration order."""
    op = registry[clause.operation]
    bound = dict(clause.bindings)
    out = []
    for slot in op.slots:
        if slot.name in bound:
            out.append((slot.name, bound[slot.name]))
        elif slot.default is not None:
            out.append((slot.name, slot.default_value()))
    return Clause(clause.operation, tuple(out))


def canonical_tree(tree: ParseTree, registry: OperationRegistry) -> ParseTree:
    return ParseTree(tuple(complete_clause(c, registry) for c in tree.clauses), tree.connectors)


def is_complete(tree: ParseTree, registry: OperationRegistry) -> bool:
    """True when every slot that has a default is bound explicitly."""
    return canonical_tree(tree, registry) == tree


def serialize(tree: ParseTree, registry: OperationRegistry) -> str:
    """Canonical label string: single spaces, declaration order, defaults explicit."""
    parts: list[str] = []
    for i, clause in enumerate(tree.clauses):
        if i:
            parts.append(tree.connectors[i - 1])
        op = registry[clause.operation]
        bound = dict(complete_clause(clause, registry).bindings)
        parts.append(op.name)
        for slot in op.slots:
            if slot.name in bound:
                parts.extend(_slot_token(slot, bound[slot.name]))
    return " ".join(parts)


def canonicalize(text: str, registry: OperationRegistry) -> str:
    return serialize(parse_label(text, registry), registry)


@dataclass
class CheckResult:
    status: str  # valid | repaired | rejected
    tree: ParseTree | None = None
    diagnostics: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status != "rejected"


def template_check(tree_or_text: ParseTree | str, registry: OperationRegistry) -> CheckResult:
    """Validate a parse against operation templates, applying the two allowed repairs.

    Repairs: fill an unbound optional slot with its default; drop tokens that
    follow a complete parse. Anything else is rejected.
    """
    if isinstance(tree_or_text, ParseTree):
        tree = tree_or_text
        problems = _tree_violations(tree, registry)
        if problems:
            return CheckResult("rejected", None, problems)
        fixed = canonical_tree(tree, registry)
        if fixed == tree:
            return CheckResult("valid", tree)
        return CheckResult("repaired", fixed, _missing_default_notes(tree, registry))

    tokens = tokenize(tree_or_text)
    errors: list[LabelError] = []
    clauses, connectors, trailing_at = _parse_tokens(tokens, registry, errors)
    if not tokens:
        return CheckResult("rejected", None, ["EmptyParse"])
    hard = [e for e in errors if not isinstance(e, TrailingTokens)]
    if hard:
        return CheckResult("rejected", None, [str(e) for e in errors])
    tree = ParseTree(tuple(clauses), tuple(connectors))
    notes: list[str] = []
    if trailing_at is not None:
        notes.append(f"dropped trailing tokens {' '.join(tokens[trailing_at:])!r}")
    notes.extend(_missing_default_notes(tree, registry))
    fixed = canonical_tree(tree, registry)
    if not notes:
        return CheckResult("valid", fixed)
    return CheckResult("repaired", fixed, notes)


def _missing_default_notes(tree: ParseTree, registry: OperationRegistry) -> list[str]:
    notes = []
    for clause in tree.clauses:
        bound = dict(clause.bindings)
        for slot in registry[clause.operation].slots:
            if slot.name not in bound and slot.default is not None:
                notes.append(f"filled {clause.operation}.{slot.name} with default {slot.default!r}")
    return notes


def _tree_violations(tree: ParseTree, registry: OperationRegistry) -> list[str]:
    out = []
    for conn in tree.connectors:
        if conn not in CONNECTORS:
            out.append(f"unknown connector {conn!r}")
    for clause in tree.clauses:
        if clause.operation not in registry or registry[clause.operation].category == "logic":
            out.append(str(UnknownOperation(clause.operation)))
            continue
        op = registry[clause.operation]
        bound = dict(clause.bindings)
        names = {s.name for s in op.slots}
        for extra in set(bound) - names:
            out.append(f"{op.name}: unknown slot {extra!r}")
        for slot in op.slots:
            if slot.name not in bound:
                if slot.required:
                    out.append(str(BadSlotValue(slot.name, None)))
                continue
            value = bound[slot.name]
            token = str(value) if not isinstance(value, bool) else slot.name
            if slot.kind == "none":
                if not isinstance(value, bool):
                    out.append(str(BadSlotValue(slot.name, str(value))))
            elif not slot.accepts(token) or (slot.kind == "integer" and not isinstance(value, int)):
                out.append(str(BadSlotValue(slot.name, token)))
    return out


def compare_parses(predicted: str | None, gold: str, registry: OperationRegistry) -> bool:
    """Exact match of canonical forms. An unparseable gold label is a hard error."""
    gold_canon = canonicalize(gold, registry)
    if predicted is None:
        return False
    try:
        return canonicalize(predicted, registry) == gold_canon
    except LabelError:
        return False
