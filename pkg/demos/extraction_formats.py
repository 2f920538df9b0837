#!/usr/bin/env python3
"""Show how one custom-input span is encoded and decoded by the four extraction formats.

Usage:
    python demos/extraction_formats.py
"""

from xqlparse.extraction import ENCODERS, ExtractionResult, extract, score_extraction
from xqlparse.records import CompassRecord

QUESTION = "Why does the model think 'the acting was wooden' is negative?"
SPAN = "the acting was wooden"


def main():
    for approach, encode in ENCODERS.items():
        target = encode(SPAN, QUESTION)
        result = extract(approach, QUESTION, target)
        print(f"{approach:<7} target:    {target}")
        print(f"{'':<7} extracted: {result.extracted!r} contained={result.contained}\n")

    # malformed model outputs become typed decode errors, not crashes
    for approach, raw in (("tanl", "no brackets at all"), ("gptner", "@@unclosed"), ("gollie", "wooden")):
        result = extract(approach, QUESTION, raw)
        print(f"{approach:<7} {raw!r:<24} -> {result.decode_error}")

    gold = [CompassRecord(QUESTION, "rationalize", SPAN)] * 2
    preds = [ExtractionResult(SPAN, "naive", SPAN, True), ExtractionResult("acting", "naive", "acting", True)]
    score = score_extraction(preds, gold)
    print(f"\nexact F1 {score.exact_f1:.2f}, character-overlap F1 {score.overlap_f1:.2f}")


if __name__ == "__main__":
    main()
