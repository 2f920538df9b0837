#!/usr/bin/env python3
"""Build English + target-language training mixes and report their sizes.

Usage:
    python demos/multilingual_mix.py [--seed 17]
"""

import argparse
from collections import Counter

from xqlparse.corpus import MixSpec, build_multilingual_mix, load_dataset, mix_size
from xqlparse.embeddings import MockEmbeddingProvider, corpus_similarity_report
from xqlparse.evaluation import resolve_dataset


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--seed", type=int, default=17)
    args = parser.parse_args()

    bundle = load_dataset(resolve_dataset("demo"), "coxql")
    english = bundle.split("train", "EN")
    # the demo corpus has no ZH training split, so the ZH test rows stand in for one
    target = bundle.split("test", "ZH")
    print(f"{len(english)} EN rows, {len(target)} ZH rows")
    for p in (10, 25, 50, 75, 100):
        mix = build_multilingual_mix(english, target, MixSpec("ZH", p, args.seed))
        langs = Counter(r.language for r in mix)
        print(f"  {p:>3}%  ZH sampled {langs['ZH']:>2} (expected {mix_size(len(target), p)}), total {len(mix)}")

    provider = MockEmbeddingProvider()
    for lang in ("DE", "ZH"):
        pairs = [(a.question, b.question) for a, b in zip(bundle.split("test", "EN"), bundle.split("test", lang))]
        print(f"EN/{lang} mean cosine similarity (trigram mock): {corpus_similarity_report(pairs, provider):.2f}")


if __name__ == "__main__":
    main()
