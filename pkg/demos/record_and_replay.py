#!/usr/bin/env python3
"""Record a fixture file for the bundled demo corpus, then replay it through the CLI.

Recording uses a stand-in responder that answers with gold labels. Pointing
the recorder at a real backend's ``complete`` instead gives a fixture file
that makes later runs fully offline and byte-reproducible.

Usage:
    python demos/record_and_replay.py [output-dir]
"""

import subprocess
import sys
import tempfile
from pathlib import Path

from xqlparse.corpus import load_dataset
from xqlparse.embeddings import MockEmbeddingProvider
from xqlparse.evaluation import resolve_dataset
from xqlparse.lm_gateway import FixtureRecorder
from xqlparse.query_language import load_bundled_registry, main_intent, parse_label
from xqlparse.strategies import ParserContext, run_strategy


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="xql-demo-"))
    out.mkdir(parents=True, exist_ok=True)
    registry = load_bundled_registry("coxql")
    bundle = load_dataset(resolve_dataset("demo"), "coxql", registry)
    gold = {r.question: r.parse for r in bundle.split("test", "EN")}

    def respond(prompt):
        question = prompt.rsplit("[Question] ", 1)[1].split("\n", 1)[0]
        parse = gold[question]
        intent = main_intent(parse_label(parse, registry), registry)
        if prompt.startswith(("Select the intent", "Identify the main operation")):
            return intent
        return parse

    recorder = FixtureRecorder(respond)
    # the CLI defaults (20 shots, k=3, 10 demos) must match so the prompts line up
    ctx = ParserContext(registry, bundle.split("train", "EN"), MockEmbeddingProvider(), recorder)
    for strategy in ("gd", "mp", "mp_plus", "gmp"):
        for question in gold:
            run_strategy(strategy, question, ctx)
    fixtures = out / "fixtures.json"
    recorder.save(fixtures)
    print(f"recorded {len(recorder.fixtures)} prompts to {fixtures}\n", flush=True)

    cmd = [sys.executable, "-m", "xqlparse.cli", "eval", "--task", "parse", "--dataset", "demo",
           "--languages", "en", "--backend", f"scripted:{fixtures}", "--out", str(out / "runs")]
    print("$ xqlparse " + " ".join(cmd[3:]), flush=True)
    sys.exit(subprocess.run(cmd).returncode)


if __name__ == "__main__":
    main()
