import json
import os
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xqlparse.corpus import (
    DatasetValidationError,
    MixSpec,
    TranslationRetryExhausted,
    build_multilingual_mix,
    compass_translation_prompt,
    dataset_stats,
    load_dataset,
    load_records,
    mix_size,
    save_records,
    stats_table,
    translate_record,
)
from xqlparse.evaluation import resolve_dataset
from xqlparse.lm_gateway import ScriptedBackend, translation_prompt
from xqlparse.records import CompassRecord, CoxqlRecord

REC = CompassRecord("Why is 'great movie' positive?", "rationalize", "great movie")


def _write(path, rows):
    path.write_text(json.dumps(rows, ensure_ascii=False), "utf-8")
    return path


def test_demo_bundles_load(demo_coxql, demo_compass):
    assert len(demo_coxql.split("train")) == 80
    assert len(demo_coxql.split("test", "EN")) == 20
    assert demo_coxql.languages() == ["DE", "EN", "ZH"]
    assert len(demo_compass.split("test", "EN")) == 11


def test_containment_violation_is_reported(tmp_path):
    f = _write(tmp_path / "compass.test.EN.json",
               [{"user_question": "Why is this good?", "operation_name": "rationalize", "custom_input": "bad film"}])
    with pytest.raises(DatasetValidationError) as info:
        load_dataset(tmp_path, "compass")
    report = json.loads(info.value.report())
    assert report["violations"][0]["error"].endswith("(containment rule)")
    assert report["violations"][0]["file"] == f.name


def test_missing_field_is_a_schema_error(tmp_path):
    f = _write(tmp_path / "x.json", [{"user_question": "q", "custom_input": "q"}])
    records, violations = load_records(f, "compass")
    assert records == []
    assert violations[0]["error"] == "schema error: missing field(s) operation_name, language"


def test_bad_gold_parse_and_malformed_json(tmp_path):
    f = _write(tmp_path / "x.json", [{"question": "q", "parse": "explainify", "language": "EN"}])
    _, violations = load_records(f, "coxql")
    assert "does not parse" in violations[0]["error"]
    g = tmp_path / "y.json"
    g.write_text("{not json", "utf-8")
    assert "malformed JSON" in load_records(g, "coxql")[1][0]["error"]


def test_field_remap_and_non_strict(tmp_path):
    _write(tmp_path / "coxql.train.EN.json", [{"text": "show me id 3", "label": "filter id 3 and show"},
                                              {"text": "bad", "label": "nope"}])
    bundle = load_dataset(tmp_path, "coxql", remap={"text": "question", "label": "parse"}, strict=False)
    assert bundle.split("train") == [CoxqlRecord("show me id 3", "filter id 3 and show", "EN")]


def test_load_save_is_byte_stable(tmp_path):
    src = resolve_dataset("demo") / "compass.test.ZH.json"
    records, violations = load_records(src, "compass")
    assert not violations
    out = tmp_path / "again.json"
    save_records(records, out)
    first = out.read_bytes()
    save_records(load_records(out, "compass")[0], out)
    assert out.read_bytes() == first
    # non-ASCII is written as-is, not escaped
    assert "\\u" not in first.decode("utf-8")


def test_missing_directory_content(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path, "coxql")


# -- mixes ---------------------------------------------------------------------


def _rows(lang, n):
    return [CoxqlRecord(f"{lang} {i}", "predict", lang) for i in range(n)]


def test_mix_full_and_ten_percent():
    en, zh = _rows("EN", 50), _rows("ZH", 1089)
    assert len(build_multilingual_mix(en, zh, MixSpec("ZH", 100))) == 50 + 1089
    ten = build_multilingual_mix(en, zh, MixSpec("ZH", 10, seed=3))
    assert sum(r.language == "ZH" for r in ten) == 108
    assert ten == build_multilingual_mix(en, zh, MixSpec("ZH", 10, seed=3))
    assert ten != build_multilingual_mix(en, zh, MixSpec("ZH", 10, seed=4))


def test_mix_rejects_bad_input():
    with pytest.raises(ValueError):
        MixSpec("ZH", 33)
    with pytest.raises(ValueError):
        build_multilingual_mix([], _rows("ZH", 3), MixSpec("ZH", 50))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 60), st.integers(1, 300), st.sampled_from([10, 25, 50, 75, 100]), st.integers(0, 10**6))
def test_mix_properties(n_en, n_t, p, seed):
    en, t = _rows("EN", n_en), _rows("TE", n_t)
    mix = build_multilingual_mix(en, t, MixSpec("TE", p, seed))
    assert len(mix) == n_en + (p * n_t) // 100 == n_en + mix_size(n_t, p)
    assert Counter(r for r in mix if r.language == "EN") == Counter(en)
    assert len(set(r for r in mix if r.language == "TE")) == mix_size(n_t, p)


# -- translation -------------------------------------------------------------------


def test_compass_translation_first_attempt():
    prompt = compass_translation_prompt(REC, "DE")
    good = json.dumps({"user_question": "Warum ist 'toller Film' positiv?", "operation_name": "rationalize",
                       "custom_input": "toller Film"}, ensure_ascii=False)
    outcome = translate_record(REC, "DE", ScriptedBackend.from_prompts({prompt: good}))
    assert outcome.attempts == 1
    assert outcome.record == CompassRecord("Warum ist 'toller Film' positiv?", "rationalize", "toller Film", "DE")


def test_compass_translation_retries_until_contained():
    prompt = compass_translation_prompt(REC, "DE")
    bad = json.dumps({"user_question": "Warum ist 'großartiger Film' positiv?", "custom_input": "toller Film"})
    good = json.dumps({"user_question": "Warum ist 'toller Film' positiv?", "custom_input": "toller Film"})
    backend = ScriptedBackend.from_prompts({prompt: bad, prompt + "\n\n(attempt 2)": good})
    outcome = translate_record(REC, "DE", backend)
    assert outcome.attempts == 2
    assert outcome.record.custom_input in outcome.record.user_question
    assert len(outcome.history) == 2


def test_compass_translation_gives_up():
    prompt = compass_translation_prompt(REC, "ZH")
    bad = json.dumps({"user_question": "为什么是积极的?", "custom_input": "好电影"}, ensure_ascii=False)
    fixtures = {prompt: bad, **{prompt + f"\n\n(attempt {i})": "no json" for i in range(2, 4)}}
    with pytest.raises(TranslationRetryExhausted) as info:
        translate_record(REC, "ZH", ScriptedBackend.from_prompts(fixtures), max_attempts=3)
    assert info.value.attempts == 3
    assert info.value.last_attempt.custom_input == "好电影"


def test_coxql_translation_keeps_the_gold_parse():
    rec = CoxqlRecord("Show me 10 most important samples for ID 68.", "filter id 68 and influence topk 10")
    prompt = translation_prompt(rec.question, "ZH")
    backend = ScriptedBackend.from_prompts({prompt: "显示ID 68最重要的10个样本。"})
    out = translate_record(rec, "ZH", backend).record
    assert out.parse.encode() == rec.parse.encode()
    assert (out.question, out.language) == ("显示ID 68最重要的10个样本。", "ZH")


def test_compass_translation_prompt_layout():
    prompt = compass_translation_prompt(REC, "TE")
    assert "Telugu" in prompt
    assert prompt.endswith(json.dumps({"user_question": REC.user_question, "operation_name": "rationalize",
                                       "custom_input": "great movie"}))


# -- stats ---------------------------------------------------------------------------


def test_stats_on_demo_compass(demo_compass):
    counts = dataset_stats(demo_compass)["test"]
    en = Counter({op: n for (op, lang), n in counts.items() if lang == "EN"})
    assert len(en) == 11 and sum(en.values()) == 11
    table = stats_table(counts, ["EN", "ZH", "DE"])
    assert table.splitlines()[-1] == f"| total | 11 | 3 | 3 | {sum(counts.values())} |"


def test_stats_per_language_sum_to_total(demo_coxql):
    for counts in dataset_stats(demo_coxql).values():
        per_lang = Counter()
        for (_, lang), n in counts.items():
            per_lang[lang] += n
        assert sum(per_lang.values()) == sum(counts.values())


def test_stats_of_empty_split():
    assert stats_table(Counter()) == "| operation | total |\n|---|---|\n"


@pytest.mark.skipif(not os.environ.get("XQL_COMPASS_DIR"), reason="needs XQL_COMPASS_DIR with the published Compass files")
def test_published_compass_split_sizes():
    bundle = load_dataset(os.environ["XQL_COMPASS_DIR"], "compass", languages=["EN"])
    assert (len(bundle.split("train")), len(bundle.split("test"))) == (1089, 109)
    ops = Counter(r.operation_name for r in bundle.split("test"))
    assert len(ops) == 11 and sum(ops.values()) == 109
