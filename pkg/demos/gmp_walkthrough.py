#!/usr/bin/env python3
"""Walk one question through the four GMP stages on the bundled demo corpus.

The "model" here is a scripted responder that answers with the gold label,
so the output shows what each stage sees and how the grammar masks tokens.

Usage:
    python demos/gmp_walkthrough.py ["Your question"]
"""

import sys

from xqlparse.corpus import load_dataset
from xqlparse.embeddings import MockEmbeddingProvider
from xqlparse.evaluation import resolve_dataset
from xqlparse.grammar import PrefixRecognizer, allowed_continuations
from xqlparse.lm_gateway import FixtureRecorder
from xqlparse.query_language import load_bundled_registry, main_intent, parse_label
from xqlparse.strategies import ParserContext, parse_gmp

QUESTION = "Show me 10 most important samples for ID 68."


def main():
    question = sys.argv[1] if len(sys.argv) > 1 else QUESTION
    registry = load_bundled_registry("coxql")
    bundle = load_dataset(resolve_dataset("demo"), "coxql", registry)
    gold = {r.question: r.parse for split in bundle.splits.values() for r in split}

    def respond(prompt):
        q = prompt.rsplit("[Question] ", 1)[1].split("\n", 1)[0]
        parse = gold.get(q, "countdata")
        if prompt.startswith("Select the intent"):
            return main_intent(parse_label(parse, registry), registry)
        return parse

    ctx = ParserContext(registry, bundle.split("train", "EN"), MockEmbeddingProvider(), FixtureRecorder(respond))
    trace = parse_gmp(question, ctx)

    print(f"question: {question}\n")
    for stage in trace.stages:
        print(f"== {stage.name}")
        if stage.name == "centroids":
            print(f"   {len(stage.value)} intent centroids")
        elif stage.name == "candidates":
            for item in stage.value["intents"]:
                print(f"   {item['intent']:<14} {item['score']:.4f}")
        else:
            print(f"   prompt: {len(stage.prompt)} chars, ends with {stage.prompt[-40:]!r}")
            print(f"   output: {stage.raw_output!r}")
    print(f"\nfinal parse: {trace.final_parse}  failure: {trace.failure}")

    # what the fine-grained grammar allows right after "filter id "
    if trace.final_parse:
        intent = main_intent(parse_label(trace.final_parse, registry), registry)
        state = PrefixRecognizer.start(ctx.intent_grammar(intent)).advance("filter id ")
        mask = allowed_continuations(state, ctx.tokenizer.vocabulary)
        allowed = sorted(ctx.tokenizer.vocabulary[i] for i in mask.allowed)
        print(f"\nallowed after 'filter id ' under the {intent} grammar: {allowed}")


if __name__ == "__main__":
    main()
