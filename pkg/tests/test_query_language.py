import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xqlparse.query_language import (
    BadSlotValue,
    Clause,
    DanglingConnector,
    ParseTree,
    RegistryError,
    TrailingTokens,
    UnknownOperation,
    canonicalize,
    compare_parses,
    load_bundled_registry,
    main_intent,
    parse_label,
    registry_load,
    registry_to_json,
    serialize,
    template_check,
)

COXQL = load_bundled_registry("coxql")


def test_bundled_registries_sizes():
    assert len(COXQL) == 31
    assert len(load_bundled_registry("compass")) == 11
    assert COXQL.connectors() == ["and", "or"]


def test_registry_round_trip_through_json():
    again = registry_load(registry_to_json(COXQL))
    assert again.names == COXQL.names
    assert [op.signature() for op in again] == [op.signature() for op in COXQL]


@pytest.mark.parametrize(
    "doc, message",
    [
        ({"operations": [{"name": "a", "category": "meta"}, {"name": "a", "category": "meta"}]}, "duplicate"),
        ({"operations": [{"name": "a", "category": "meta",
                          "slots": [{"name": "k", "kind": "enum_token", "allowed_values": []}]}]}, "empty value set"),
        ({"operations": [{"name": "a", "category": "meta", "slots": [{"name": "k", "kind": "blob"}]}]}, "slot kind"),
        ({"operations": []}, "no operations"),
    ],
)
def test_registry_load_rejects_bad_documents(doc, message):
    with pytest.raises(RegistryError, match=message):
        registry_load(json.dumps(doc))


def test_parse_filter_and_attribution():
    tree = parse_label("filter id 68 and nlpattribute topk 10 lime", COXQL)
    assert tree.operations() == ["filter", "nlpattribute"]
    assert tree.connectors == ("and",)
    assert tree.clauses[0].get("id") == 68
    assert tree.clauses[1].get("topk") == 10
    assert main_intent(tree, COXQL) == "nlpattribute"


def test_main_intent_falls_back_to_last_clause():
    tree = parse_label("filter id 3 and predictfilter positive", COXQL)
    assert main_intent(tree, COXQL) == "predictfilter"


@pytest.mark.parametrize(
    "text, error",
    [
        ("explainify", UnknownOperation),
        ("nlpattribute topk banana", BadSlotValue),
        ("filter id 3 and", DanglingConnector),
        ("and predict", DanglingConnector),
        ("predict please", TrailingTokens),
        ("mistake", BadSlotValue),
    ],
)
def test_parse_errors_are_typed(text, error):
    with pytest.raises(error):
        parse_label(text, COXQL)


def test_serialize_emits_defaults():
    assert canonicalize("nlpattribute topk 4", COXQL) == "nlpattribute topk 4 lime"
    assert canonicalize("score", COXQL) == "score accuracy"
    assert canonicalize("  filter   id 2  and  predict ", COXQL) == "filter id 2 and predict"


def test_template_check_valid_repaired_rejected():
    assert template_check("filter id 3 and rationalize", COXQL).status == "valid"

    filled = template_check("nlpattribute topk 4", COXQL)
    assert filled.status == "repaired"
    assert serialize(filled.tree, COXQL) == "nlpattribute topk 4 lime"

    dropped = template_check("filter id 3 and rationalize now", COXQL)
    assert dropped.status == "repaired"
    assert serialize(dropped.tree, COXQL) == "filter id 3 and rationalize"
    assert "now" in dropped.diagnostics[0]

    bad = template_check("nlpattribute topk banana", COXQL)
    assert bad.status == "rejected" and bad.tree is None
    assert bad.diagnostics == ["BadSlotValue(topk, 'banana')"]

    assert template_check("explainify", COXQL).diagnostics == ["UnknownOperation('explainify')"]
    assert template_check("", COXQL).diagnostics == ["EmptyParse"]


def test_template_check_on_trees():
    good = ParseTree((Clause.of("filter", id=3), Clause.of("rationalize")), ("and",))
    assert template_check(good, COXQL).status == "valid"
    partial = ParseTree((Clause.of("score"),))
    assert template_check(partial, COXQL).status == "repaired"
    wrong = ParseTree((Clause.of("score", metric="bleu"),))
    assert template_check(wrong, COXQL).status == "rejected"
    unknown_slot = ParseTree((Clause.of("predict", colour="red"),))
    assert template_check(unknown_slot, COXQL).status == "rejected"


def test_compare_parses():
    assert compare_parses("score", "score accuracy", COXQL)
    assert not compare_parses("score f1", "score accuracy", COXQL)
    assert not compare_parses(None, "predict", COXQL)
    assert not compare_parses("gibberish here", "predict", COXQL)
    with pytest.raises(UnknownOperation):
        compare_parses("predict", "gibberish", COXQL)


# -- properties ------------------------------------------------------------------


def _slot_value(slot):
    if slot.kind == "integer":
        return st.integers(min_value=0, max_value=10**6)
    if slot.kind == "enum_token":
        return st.sampled_from(sorted(slot.allowed_values))
    if slot.kind == "free_token":
        return st.from_regex(r"[a-z_][a-z0-9_]{0,8}", fullmatch=True).filter(lambda s: s not in ("and", "or"))
    return st.booleans()


@st.composite
def clauses(draw):
    op = draw(st.sampled_from(COXQL.clause_operations()))
    bindings = []
    for slot in op.slots:
        if slot.required or draw(st.booleans()):
            value = draw(_slot_value(slot))
            if slot.kind == "none" and not value:
                continue
            bindings.append((slot.name, value))
    return Clause(op.name, tuple(bindings))


@st.composite
def trees(draw):
    cs = draw(st.lists(clauses(), min_size=1, max_size=4))
    conns = draw(st.lists(st.sampled_from(["and", "or"]), min_size=len(cs) - 1, max_size=len(cs) - 1))
    return ParseTree(tuple(cs), tuple(conns))


@settings(max_examples=300, deadline=None)
@given(trees())
def test_serialize_parse_round_trip(tree):
    text = serialize(tree, COXQL)
    again = parse_label(text, COXQL)
    assert serialize(again, COXQL) == text
    assert template_check(text, COXQL).status == "valid"


@settings(max_examples=200, deadline=None)
@given(trees(), st.lists(st.sampled_from(["please", "now", "the", "x"]), min_size=1, max_size=3))
def test_trailing_junk_is_repaired_to_the_same_parse(tree, junk):
    text = serialize(tree, COXQL)
    check = template_check(text + " " + " ".join(junk), COXQL)
    assert check.status == "repaired"
    # an optional slot may absorb the first junk token; nothing else changes
    assert serialize(check.tree, COXQL).startswith(text)


@settings(max_examples=200, deadline=None)
@given(trees())
def test_main_intent_is_first_non_filter(tree):
    ops = tree.operations()
    non_filter = [o for o in ops if COXQL[o].category != "filter"]
    assert main_intent(tree, COXQL) == (non_filter[0] if non_filter else ops[-1])
