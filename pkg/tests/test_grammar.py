from itertools import product

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xqlparse.grammar import (
    FREE,
    INT,
    Grammar,
    GrammarError,
    Literal,
    PrefixRecognizer,
    allowed_continuations,
    build_full_grammar,
    derive_intent_grammar,
    derive_intent_only_grammar,
    enumerate_language,
)
from xqlparse.query_language import load_bundled_registry, main_intent, parse_label, serialize
from xqlparse.tokenizer import MockTokenizer

COXQL = load_bundled_registry("coxql")
FULL = build_full_grammar(COXQL)
TOK = MockTokenizer.for_registry(COXQL)


def _clause_oracle(op, ints=(0, 1, 2), free=("x",)):
    """Canonical clause strings for one operation, written straight from the slot specs."""
    options = []
    for slot in op.slots:
        if slot.kind == "integer":
            options.append([f"{slot.name} {v}" for v in ints])
        elif slot.kind == "enum_token":
            options.append(sorted(slot.allowed_values))
        elif slot.kind == "free_token":
            options.append(list(free))
        else:
            options.append(["", slot.name])
    return {" ".join([op.name, *[p for p in combo if p]]) for combo in product(*options)}


def _oracle_language(max_tokens):
    clauses = set().union(*(_clause_oracle(op) for op in COXQL.clause_operations()))
    out = {c for c in clauses if len(c.split()) <= max_tokens}
    frontier = set(out)
    while frontier:
        nxt = set()
        for left in frontier:
            for conn in ("and", "or"):
                for right in clauses:
                    s = f"{left} {conn} {right}"
                    if len(s.split()) <= max_tokens and s not in out:
                        nxt.add(s)
        out |= nxt
        frontier = nxt
    return out


@pytest.mark.parametrize("max_tokens", [3, 5])
def test_enumerated_language_matches_oracle(max_tokens):
    assert enumerate_language(FULL, max_tokens) == _oracle_language(max_tokens)


def test_every_enumerated_sentence_is_recognized_and_parses():
    for s in enumerate_language(FULL, 4):
        assert FULL.accepts(s), s
        assert serialize(parse_label(s, COXQL), COXQL) == s


@pytest.mark.parametrize("op", ["rationalize", "predict", "nlpattribute"])
def test_intent_grammar_is_contained_in_full_grammar(op):
    g = derive_intent_grammar(COXQL, op)
    sentences = enumerate_language(g, 7)
    assert sentences
    for s in sentences:
        assert FULL.accepts(s), s
        assert main_intent(parse_label(s, COXQL), COXQL) == op
    assert g.accepts(f"filter id 3 and {op}" + (" topk 1 lime" if op == "nlpattribute" else ""))
    other = "predict" if op != "predict" else "rationalize"
    assert not g.accepts(other)


def test_intent_grammar_from_a_grammar_object():
    assert derive_intent_grammar(FULL, "rationalize").accepts("filter id 3 and rationalize")
    with pytest.raises(GrammarError):
        derive_intent_grammar(FULL, "explainify")


def test_intent_only_grammar():
    g = derive_intent_only_grammar(COXQL, ["similar", "influence", "nlpattribute"])
    assert enumerate_language(g, 1) == {"similar", "influence", "nlpattribute"}
    assert not g.accepts("predict")
    with pytest.raises(GrammarError):
        derive_intent_only_grammar(COXQL, ["explainify"])
    with pytest.raises(GrammarError):
        derive_intent_only_grammar(COXQL, [])


def test_grammar_construction_errors():
    with pytest.raises(GrammarError):
        Grammar({"s": [["missing"]]}, "s")
    with pytest.raises(GrammarError):
        Grammar({"s": [[Literal("a")]]}, "t")
    with pytest.raises(GrammarError):
        Grammar({"s": [[]]}, "s")


def test_recognizer_basics():
    g = Grammar({"s": [[Literal("id"), INT], [Literal("q"), FREE]]}, "s")
    r = PrefixRecognizer.start(g)
    assert r.viable and not r.eos_allowed
    assert r.advance(" ").rejected
    assert r.advance("id 0").eos_allowed
    assert r.advance("id 01").rejected
    assert r.advance("id 1234567890").rejected
    assert r.advance("q and").viable and not r.advance("q and").eos_allowed
    assert r.advance("q andy").eos_allowed
    assert r.advance("id 5 ").rejected
    # states are values
    a = r.advance("id")
    assert a.advance(" 3").eos_allowed and a.consumed == "id"


def test_mask_example_after_filter_id():
    state = PrefixRecognizer.start(FULL).advance("filter id ")
    mask = allowed_continuations(state, TOK)
    texts = {TOK.vocabulary[t] for t in mask.allowed}
    assert set("0123456789") <= texts
    assert {"10", "68", "100", "12"} <= texts
    assert " " not in texts and "a" not in texts and not mask.eos_allowed


def test_mask_for_rejected_state_is_empty():
    dead = PrefixRecognizer.start(FULL).advance("zzz")
    assert dead.rejected
    mask = allowed_continuations(dead, TOK)
    assert not mask.allowed and not mask.eos_allowed


sentences = st.sampled_from(sorted(enumerate_language(FULL, 4)))


@settings(max_examples=150, deadline=None)
@given(sentences)
def test_prefixes_viable_and_eos_only_at_complete_points(sentence):
    state = PrefixRecognizer.start(FULL)
    for i, ch in enumerate(sentence):
        state = state.advance(ch)
        assert state.viable
        if state.eos_allowed:
            assert FULL.accepts(sentence[: i + 1])
    assert state.eos_allowed


@settings(max_examples=100, deadline=None)
@given(sentences)
def test_mask_contains_the_next_gold_token(sentence):
    state = PrefixRecognizer.start(FULL)
    for tid in TOK.encode(sentence):
        assert tid in allowed_continuations(state, TOK).allowed
        state = state.advance(TOK.vocabulary[tid])
    assert allowed_continuations(state, TOK).eos_allowed


@settings(max_examples=100, deadline=None)
@given(sentences, sentences)
def test_equal_keys_give_equal_masks(a, b):
    # states reached by different histories share masks only when their futures match
    sa = PrefixRecognizer.start(FULL).advance(a + " and ")
    sb = PrefixRecognizer.start(FULL).advance(b + " or ")
    assert sa.key == sb.key
    brute = lambda s: frozenset(t for t, x in TOK.vocabulary.items() if s.advance(x).viable)
    assert brute(sa) == brute(sb) == allowed_continuations(sa, TOK).allowed
