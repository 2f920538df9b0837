import hashlib
import json
import math
import unicodedata
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xqlparse.embeddings import (
    CachedProvider,
    MockEmbeddingProvider,
    build_centroids,
    corpus_similarity_report,
    embed,
    load_provider,
    topk_examples,
    topk_intents,
)

MOCK = MockEmbeddingProvider()


class FixedProvider:
    id = "fixed"

    def __init__(self, table):
        self.table = table
        self.calls = 0

    def embed(self, texts):
        self.calls += 1
        return np.array([self.table[t] for t in texts], dtype=float)


def _trigram_oracle(text, dim=256):
    padded = "##" + unicodedata.normalize("NFC", text).lower() + "##"
    counts = Counter(padded[i : i + 3] for i in range(len(padded) - 2))
    vec = [0.0] * dim
    for gram, c in counts.items():
        vec[int.from_bytes(hashlib.blake2b(gram.encode(), digest_size=8).digest(), "little") % dim] += c
    norm = math.sqrt(sum(v * v for v in vec))
    return [v / norm for v in vec]


def test_mock_matches_independent_trigram_hashing():
    for text in ["a", "Show me the data", "为什么模型预测这个", "Zeig mir Beispiel 3"]:
        assert np.allclose(embed([text], MOCK)[0], _trigram_oracle(text))


def test_embed_shapes_and_order():
    texts = ["a", "b", "a"]
    vecs = embed(texts, MOCK)
    assert vecs.shape == (3, 256)
    assert np.allclose(vecs[0], vecs[2])
    assert math.isclose(np.linalg.norm(vecs[0]), 1.0)
    assert embed([], MOCK).size == 0


def test_centroids_match_mean_then_normalize_oracle():
    examples = [(f"question {intent} number {i}", intent) for intent in ("cfe", "predict", "show") for i in range(5)]
    cents = build_centroids(examples, MOCK)
    assert [c.intent for c in cents] == ["cfe", "predict", "show"]
    for c in cents:
        rows = [_trigram_oracle(t) for t, i in examples if i == c.intent]
        mean = [sum(col) / len(rows) for col in zip(*rows)]
        norm = math.sqrt(sum(x * x for x in mean))
        assert np.allclose(c.vector, [x / norm for x in mean])
        assert c.support_count == 5


def test_single_and_duplicate_examples():
    one = build_centroids([("only one", "a")], MOCK)[0]
    assert np.allclose(one.vector, embed(["only one"], MOCK)[0])
    dup = build_centroids([("same", "a"), ("same", "a")], MOCK)[0]
    assert np.allclose(dup.vector, embed(["same"], MOCK)[0])
    with pytest.raises(ValueError):
        build_centroids([], MOCK)


def test_topk_intents_ranking_and_bounds():
    cents = build_centroids([("show me the data", "show"), ("what is the accuracy", "score"),
                             ("generate a counterfactual", "cfe")], MOCK)
    assert topk_intents("what is the accuracy", cents, 1, MOCK)[0][0] == "score"
    everything = topk_intents("anything", cents, 3, MOCK)
    assert sorted(i for i, _ in everything) == ["cfe", "score", "show"]
    scores = [s for _, s in everything]
    assert scores == sorted(scores, reverse=True)
    for k in (0, 4):
        with pytest.raises(ValueError):
            topk_intents("q", cents, k, MOCK)


def test_topk_intent_ties_break_by_name():
    provider = FixedProvider({"a": [1.0, 0.0], "b": [1.0, 0.0], "q": [1.0, 0.0]})
    cents = build_centroids([("b", "zeta"), ("a", "alpha")], provider)
    assert [i for i, _ in topk_intents("q", cents, 2, provider)] == ["alpha", "zeta"]


def test_topk_examples():
    pool = [("show data", "show"), ("show me data", "show"), ("predict this", "predict"), ("show data", "show")]
    hits = topk_examples("show data", pool, 10, MOCK)
    assert len(hits) == 4
    assert [h.example_ref for h in hits[:2]] == [0, 3]
    assert all(h.intent == "predict" for h in topk_examples("show data", pool, 5, MOCK, intent_filter={"predict"}))
    with pytest.raises(ValueError):
        topk_examples("x", pool, 1, MOCK, intent_filter={"cfe"})
    with pytest.raises(ValueError):
        topk_examples("x", pool, 0, MOCK)


def test_similarity_report():
    assert corpus_similarity_report([("hello", "hello"), ("a b", "a b")], MOCK) == 100.0
    ortho = FixedProvider({"x": [1.0, 0.0], "y": [0.0, 1.0]})
    assert corpus_similarity_report([("x", "y")], ortho) == 0.0
    with pytest.raises(ValueError):
        corpus_similarity_report([], MOCK)


def test_cache_persists_and_skips_known_texts(tmp_path):
    base = FixedProvider({"a": [1.0, 0.0], "b": [0.0, 2.0]})
    path = tmp_path / "cache.jsonl"
    cached = CachedProvider(base, path)
    first = cached.embed(["a", "b", "a"])
    assert base.calls == 1
    cached.embed(["b"])
    assert base.calls == 1
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert {r["provider"] for r in rows} == {"fixed"} and len(rows) == 2
    again = CachedProvider(FixedProvider({}), path)
    assert np.allclose(again.embed(["a", "b", "a"]), first)


def test_load_provider():
    assert isinstance(load_provider("mock"), MockEmbeddingProvider)
    with pytest.raises(ValueError):
        load_provider("word2vec")


texts = st.text(min_size=1, max_size=40)


@settings(max_examples=100, deadline=None)
@given(texts, texts)
def test_cosine_symmetry_and_renormalization(a, b):
    va, vb = embed([a, b], MOCK)
    assert abs(float(va @ vb) - float(vb @ va)) < 1e-9
    assert np.allclose(va / np.linalg.norm(va), va)
