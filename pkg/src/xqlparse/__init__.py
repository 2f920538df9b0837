"""Parsing explanation requests into a typed operation language, and extracting custom inputs."""

from .corpus import (
    DatasetBundle,
    DatasetValidationError,
    MixSpec,
    TranslationRetryExhausted,
    build_multilingual_mix,
    dataset_stats,
    load_dataset,
    save_records,
    translate_record,
)
from .embeddings import (
    MockEmbeddingProvider,
    build_centroids,
    corpus_similarity_report,
    embed,
    topk_examples,
    topk_intents,
)
from .evaluation import EvalReport, RunConfig, emit_report, micro_f1
from .extraction import (
    build_extraction_prompt,
    classify_intent_fewshot,
    decode_gollie,
    decode_gptner,
    decode_naive,
    decode_tanl,
    score_extraction,
    validate_containment,
)
from .grammar import (
    Grammar,
    PrefixRecognizer,
    allowed_continuations,
    build_full_grammar,
    derive_intent_grammar,
    derive_intent_only_grammar,
)
from .lm_gateway import (
    Completion,
    FixtureRecorder,
    GenerationRequest,
    HttpBackend,
    ScriptedBackend,
    generate,
    generate_constrained,
    translate,
)
from .query_language import (
    OperationRegistry,
    ParseTree,
    compare_parses,
    load_bundled_registry,
    parse_label,
    registry_load,
    serialize,
    template_check,
)
from .records import CompassRecord, CoxqlRecord
from .strategies import ParserContext, ParsingTrace, parse_gd, parse_gmp, parse_mp, parse_mp_plus, parse_nn
from .tokenizer import MockTokenizer

__all__ = [name for name in dir() if not name.startswith("_")]
