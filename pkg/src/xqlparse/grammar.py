"""Grammars over the label language and incremental prefix recognition.

Terminals are whole label tokens: literal keywords plus two lexical classes
(non-negative integers and free lowercase tokens). Sentences are the tokens
joined by single spaces. :class:`PrefixRecognizer` runs an Earley chart over
completed tokens and tracks the partially typed current token separately, so
viability can be answered for any character prefix.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from itertools import product
from typing import Iterable, Iterator, Mapping, Sequence

from .query_language import CONNECTORS, OperationRegistry, OperationSpec

INT_MAX_DIGITS = 9
_FREE_BODY = re.compile(r"[a-z_][a-z0-9_]*\Z")


class GrammarError(ValueError):
    pass


@dataclass(frozen=True)
class Literal:
    text: str

    def matches(self, lexeme: str) -> bool:
        return lexeme == self.text

    def viable(self, partial: str) -> bool:
        return self.text.startswith(partial)

    def view(self, partial: str):
        """What of ``partial`` can still influence this terminal."""
        return partial if self.text.startswith(partial) else None

    def __str__(self) -> str:
        return f'"{self.text}"'


@dataclass(frozen=True)
class IntToken:
    max_digits: int = INT_MAX_DIGITS

    def matches(self, lexeme: str) -> bool:
        return self.viable(lexeme) and lexeme != ""

    def viable(self, partial: str) -> bool:
        if len(partial) > self.max_digits or not partial.isascii():
            return False
        if not partial.isdigit():
            return partial == ""
        return partial == "0" or partial[0] != "0"

    def view(self, partial: str):
        return (len(partial), partial == "0") if self.viable(partial) else None

    def __str__(self) -> str:
        return "INT"


@dataclass(frozen=True)
class FreeToken:
    reserved: frozenset[str] = frozenset(CONNECTORS)

    def matches(self, lexeme: str) -> bool:
        return bool(_FREE_BODY.match(lexeme)) and lexeme not in self.reserved

    def viable(self, partial: str) -> bool:
        # any reserved word is still a prefix of a longer legal token
        return partial == "" or bool(_FREE_BODY.match(partial))

    def view(self, partial: str):
        if not self.viable(partial):
            return None
        # exact text only matters while it could still become a reserved word
        near = any(r.startswith(partial) for r in self.reserved)
        return (bool(partial), partial if near else None)

    def __str__(self) -> str:
        return "FREE"


Terminal = Literal | IntToken | FreeToken
Symbol = str | Terminal
INT = IntToken()
FREE = FreeToken()


class Grammar:
    """Context-free grammar with token terminals. Immutable after construction."""

    def __init__(
        self,
        rules: Mapping[str, Sequence[Sequence[Symbol]]],
        start: str,
        registry: OperationRegistry | None = None,
    ):
        self.start = start
        self.registry = registry
        self.rules = {lhs: tuple(tuple(p) for p in prods) for lhs, prods in rules.items()}
        if start not in self.rules:
            raise GrammarError(f"start symbol {start!r} has no rule")
        prods: list[tuple[str, tuple[Symbol, ...]]] = []
        for lhs, alts in self.rules.items():
            if not alts:
                raise GrammarError(f"{lhs!r} has no productions")
            for rhs in alts:
                if not rhs:
                    raise GrammarError(f"empty production for {lhs!r}")
                for sym in rhs:
                    if isinstance(sym, str) and sym not in self.rules:
                        raise GrammarError(f"{lhs!r} references undefined {sym!r}")
                prods.append((lhs, rhs))
        self.productions = tuple(prods)
        self._by_lhs: dict[str, tuple[int, ...]] = {}
        for i, (lhs, _) in enumerate(prods):
            self._by_lhs.setdefault(lhs, ())
            self._by_lhs[lhs] += (i,)
        self._expect_cache: dict = {}
        self._scan_cache: dict = {}
        self._mask_cache: dict = {}
        self._sigs: dict = {}
        self._viable_cache: dict = {}

    @property
    def terminals(self) -> set[Terminal]:
        return {s for _, rhs in self.productions for s in rhs if not isinstance(s, str)}

    def dump(self) -> str:
        """EBNF-like listing, one rule per line."""
        lines = []
        for lhs, alts in self.rules.items():
            body = " | ".join(" ".join(str(s) for s in rhs) for rhs in alts)
            lines.append(f"{lhs} ::= {body}")
        return "\n".join(lines)

    def recognizer(self) -> "PrefixRecognizer":
        return PrefixRecognizer.start(self)

    def accepts(self, text: str) -> bool:
        state = self.recognizer().advance(text)
        return state.viable and state.eos_allowed

    # -- Earley machinery ------------------------------------------------

    def _predict_closure(self, seed: frozenset, columns: tuple) -> frozenset:
        """Predictor/completer fixpoint for the column at index len(columns)."""
        here = len(columns)
        items = set(seed)
        agenda = list(seed)
        while agenda:
            prod_id, dot, origin = agenda.pop()
            rhs = self.productions[prod_id][1]
            if dot < len(rhs):
                sym = rhs[dot]
                if isinstance(sym, str):
                    for p in self._by_lhs[sym]:
                        item = (p, 0, here)
                        if item not in items:
                            items.add(item)
                            agenda.append(item)
                continue
            lhs = self.productions[prod_id][0]
            source = items if origin == here else columns[origin]
            for p2, d2, o2 in list(source):
                r2 = self.productions[p2][1]
                if d2 < len(r2) and r2[d2] == lhs:
                    item = (p2, d2 + 1, o2)
                    if item not in items:
                        items.add(item)
                        agenda.append(item)
        return frozenset(items)

    def _initial_column(self) -> frozenset:
        seed = frozenset((p, 0, 0) for p in self._by_lhs[self.start])
        return self._predict_closure(seed, ())

    def _expected(self, column: frozenset) -> tuple[Terminal, ...]:
        hit = self._expect_cache.get(column)
        if hit is None:
            seen = []
            for prod_id, dot, _ in column:
                rhs = self.productions[prod_id][1]
                if dot < len(rhs) and not isinstance(rhs[dot], str) and rhs[dot] not in seen:
                    seen.append(rhs[dot])
            hit = tuple(seen)
            self._expect_cache[column] = hit
        return hit

    def _scan(self, columns: tuple, lexeme: str) -> frozenset:
        key = (columns, lexeme)
        hit = self._scan_cache.get(key)
        if hit is not None:
            return hit
        advanced = set()
        for prod_id, dot, origin in columns[-1]:
            rhs = self.productions[prod_id][1]
            if dot < len(rhs) and not isinstance(rhs[dot], str) and rhs[dot].matches(lexeme):
                advanced.add((prod_id, dot + 1, origin))
        col = self._predict_closure(frozenset(advanced), columns) if advanced else frozenset()
        if len(self._scan_cache) > 200_000:
            self._scan_cache.clear()
        self._scan_cache[key] = col
        return col

    def _signature(self, column: frozenset, sigs: tuple):
        """Position-free identity of a column: origins replaced by their own signatures.

        Completed items are left out; they never influence later columns.
        """
        here = len(sigs)
        prods = self.productions
        sig = frozenset((p, d, None if o == here else sigs[o]) for p, d, o in column if d < len(prods[p][1]))
        return self._sigs.setdefault(sig, sig)

    def _complete(self, column: frozenset) -> bool:
        for prod_id, dot, origin in column:
            lhs, rhs = self.productions[prod_id]
            if origin == 0 and lhs == self.start and dot == len(rhs):
                return True
        return False


def _step(grammar: Grammar, columns: tuple, partial: str, ch: str):
    """Advance one character. Returns (columns, partial) or None on rejection."""
    if ch == " ":
        if not partial:
            return None
        col = grammar._scan(columns, partial)
        if not col or not grammar._expected(col):
            return None
        return columns + (col,), ""
    extended = partial + ch
    key = (columns[-1], extended)
    ok = grammar._viable_cache.get(key)
    if ok is None:
        ok = any(term.viable(extended) for term in grammar._expected(columns[-1]))
        if len(grammar._viable_cache) > 200_000:
            grammar._viable_cache.clear()
        grammar._viable_cache[key] = ok
    return (columns, extended) if ok else None


class PrefixRecognizer:
    """Value-like recognition state; :meth:`advance` returns a new state."""

    __slots__ = ("grammar", "columns", "partial", "consumed", "viable", "_sigs")

    def __init__(self, grammar: Grammar, columns: tuple, partial: str, consumed: str, viable: bool,
                 sigs: tuple = ()):
        self.grammar = grammar
        self.columns = columns
        self.partial = partial
        self.consumed = consumed
        self.viable = viable
        self._sigs = sigs

    @classmethod
    def start(cls, grammar: Grammar) -> "PrefixRecognizer":
        col = grammar._initial_column()
        return cls(grammar, (col,), "", "", True, (grammar._signature(col, ()),))

    @property
    def rejected(self) -> bool:
        return not self.viable

    @property
    def signature(self):
        sigs = self._sigs
        for i in range(len(sigs), len(self.columns)):
            sigs += (self.grammar._signature(self.columns[i], sigs),)
        self._sigs = sigs
        return sigs[-1]

    @property
    def key(self) -> tuple:
        """Equal keys imply identical futures; used to share token masks."""
        terms = self.grammar._expected(self.columns[-1])
        return (self.signature, tuple(t.view(self.partial) for t in terms))

    def advance(self, piece: str) -> "PrefixRecognizer":
        consumed = self.consumed + piece
        if not self.viable:
            return PrefixRecognizer(self.grammar, self.columns, self.partial, consumed, False, self._sigs)
        columns, partial = self.columns, self.partial
        for ch in piece:
            nxt = _step(self.grammar, columns, partial, ch)
            if nxt is None:
                return PrefixRecognizer(self.grammar, columns, partial, consumed, False, self._sigs)
            columns, partial = nxt
        return PrefixRecognizer(self.grammar, columns, partial, consumed, True, self._sigs)

    @property
    def eos_allowed(self) -> bool:
        if not self.viable or not self.partial:
            return False
        return self.grammar._complete(self.grammar._scan(self.columns, self.partial))

    def __repr__(self) -> str:
        state = "viable" if self.viable else "rejected"
        return f"PrefixRecognizer({self.consumed!r}, {state})"


def recognizer_advance(state: PrefixRecognizer, piece: str) -> PrefixRecognizer:
    return state.advance(piece)


# -- token masks -----------------------------------------------------------


@dataclass(frozen=True)
class TokenMask:
    allowed: frozenset[int]
    eos_allowed: bool

    def __len__(self) -> int:
        return len(self.allowed)


class VocabTrie:
    """Prefix trie over vocabulary strings; node = (children, token ids ending here)."""

    def __init__(self, vocabulary: Mapping[int, str]):
        self.root: dict = {}
        self.size = len(vocabulary)
        for tid, text in vocabulary.items():
            if not text:
                continue
            node = self.root
            for ch in text:
                node = node.setdefault(ch, {})
            node.setdefault(None, []).append(tid)


_TRIES: dict[int, tuple[Mapping, VocabTrie]] = {}


def _trie_for(vocabulary: Mapping[int, str]) -> VocabTrie:
    hit = _TRIES.get(id(vocabulary))
    if hit is not None and hit[0] is vocabulary:
        return hit[1]
    trie = VocabTrie(vocabulary)
    _TRIES[id(vocabulary)] = (vocabulary, trie)
    return trie


def allowed_continuations(state: PrefixRecognizer, vocabulary) -> TokenMask:
    """Token ids whose text keeps ``state`` viable, plus whether EOS is legal.

    ``vocabulary`` is a mapping id -> string or any object with a
    ``vocabulary`` attribute holding one.
    """
    vocab = getattr(vocabulary, "vocabulary", vocabulary)
    if not state.viable:
        return TokenMask(frozenset(), False)
    grammar = state.grammar
    # exact (signature, partial) first, then the coarser equivalence key
    exact_key = (id(vocab), state.signature, state.partial)
    hit = grammar._mask_cache.get(exact_key)
    if hit is not None:
        return hit
    cache_key = (id(vocab), state.key)
    hit = grammar._mask_cache.get(cache_key)
    if hit is not None:
        grammar._mask_cache[exact_key] = hit
        return hit
    trie = _trie_for(vocab)
    allowed: list[int] = []
    stack = [(trie.root, state.columns, state.partial)]
    while stack:
        node, columns, partial = stack.pop()
        for ch, child in node.items():
            if ch is None:
                continue
            nxt = _step(grammar, columns, partial, ch)
            if nxt is None:
                continue
            ends = child.get(None)
            if ends:
                allowed.extend(ends)
            stack.append((child, nxt[0], nxt[1]))
    mask = TokenMask(frozenset(allowed), state.eos_allowed)
    if len(grammar._mask_cache) > 50_000:
        grammar._mask_cache.clear()
    grammar._mask_cache[cache_key] = grammar._mask_cache[exact_key] = mask
    return mask


# -- construction from a registry ---------------------------------------------


def _clause_rules(op: OperationSpec) -> list[list[Symbol]]:
    """All canonical token sequences for one operation (flags expand to two)."""
    seqs: list[list[Symbol]] = [[Literal(op.name)]]
    for slot in op.slots:
        nt_values: list[list[Symbol]]
        if slot.kind == "integer":
            nt_values = [[Literal(slot.name), INT]]
        elif slot.kind == "enum_token":
            nt_values = [[f"{op.name}.{slot.name}"]]
        elif slot.kind == "free_token":
            nt_values = [[FREE]]
        else:
            nt_values = [[], [Literal(slot.name)]]
        seqs = [s + v for s in seqs for v in nt_values]
    return seqs


def _op_rules(ops: Iterable[OperationSpec]) -> dict[str, list[list[Symbol]]]:
    rules: dict[str, list[list[Symbol]]] = {}
    for op in ops:
        rules[f"op.{op.name}"] = _clause_rules(op)
        for slot in op.slots:
            if slot.kind == "enum_token":
                rules[f"{op.name}.{slot.name}"] = [[Literal(v)] for v in sorted(slot.allowed_values)]
    return rules


def build_full_grammar(registry: OperationRegistry) -> Grammar:
    """Grammar whose language is every canonical label valid under ``registry``."""
    ops = registry.clause_operations()
    rules = _op_rules(ops)
    rules["clause"] = [[f"op.{op.name}"] for op in ops]
    rules["connector"] = [[Literal(c)] for c in registry.connectors()]
    rules["query"] = [["clause"], ["query", "connector", "clause"]]
    return Grammar(rules, "query", registry)


def derive_intent_only_grammar(
    registry: OperationRegistry, restrict_to: Iterable[str] | None = None
) -> Grammar:
    """Bare operation names only, optionally limited to ``restrict_to``."""
    names = registry.names
    if restrict_to is not None:
        wanted = set(restrict_to)
        unknown = wanted - set(names)
        if unknown:
            raise GrammarError(f"unknown operations {sorted(unknown)}")
        names = [n for n in names if n in wanted]
    if not names:
        raise GrammarError("intent-only grammar needs at least one operation")
    return Grammar({"intent": [[Literal(n)] for n in names]}, "intent", registry)


def derive_intent_grammar(source: Grammar | OperationRegistry, operation: str) -> Grammar:
    """Clauses for one operation, optionally preceded by filter clauses.

    ``source`` is either a registry or a grammar built from one.
    """
    registry = source.registry if isinstance(source, Grammar) else source
    if registry is None:
        raise GrammarError("grammar carries no registry to derive from")
    if operation not in registry or registry[operation].category == "logic":
        raise GrammarError(f"unknown operation {operation!r}")
    filters = [op for op in registry.clause_operations() if op.category == "filter"]
    target = registry[operation]
    rules = _op_rules({op.name: op for op in filters + [target]}.values())
    rules["connector"] = [[Literal(c)] for c in registry.connectors()]
    rules["intent_query"] = [[f"op.{operation}"]]
    if filters:
        rules["filter_clause"] = [[f"op.{op.name}"] for op in filters]
        rules["intent_query"].append(["filter_clause", "connector", "intent_query"])
    return Grammar(rules, "intent_query", registry)


def enumerate_language(
    grammar: Grammar,
    max_tokens: int,
    int_values: Sequence[int] = (0, 1, 2),
    free_values: Sequence[str] = ("x",),
) -> set[str]:
    """All sentences of at most ``max_tokens`` tokens, with lexical classes sampled."""
    out: set[str] = set()

    def expand(form: tuple[Symbol, ...]) -> Iterator[tuple[Symbol, ...]]:
        for i, sym in enumerate(form):
            if isinstance(sym, str):
                for rhs in grammar.rules[sym]:
                    yield form[:i] + rhs + form[i + 1 :]
                return

    seen: set[tuple] = set()
    frontier = [(grammar.start,)]
    while frontier:
        form = frontier.pop()
        if len(form) > max_tokens or form in seen:
            continue
        seen.add(form)
        if all(not isinstance(s, str) for s in form):
            choices = []
            for term in form:
                if isinstance(term, Literal):
                    choices.append([term.text])
                elif isinstance(term, IntToken):
                    choices.append([str(v) for v in int_values])
                else:
                    choices.append([v for v in free_values if term.matches(v)])
            for combo in product(*choices):
                out.add(" ".join(combo))
            continue
        frontier.extend(expand(form))
    return out
