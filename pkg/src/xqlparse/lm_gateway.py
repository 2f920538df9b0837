"""Text generation backends and the grammar-constrained decoding loop.

Two backend capability levels exist. Token-level backends (``token_level =
True``) rank candidate next tokens and the decoding loop applies the grammar
mask directly. Text-only backends just complete prompts; constrained decoding
over them keeps the longest in-grammar prefix of each completion and
re-prompts with it, for a bounded number of rounds.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

import requests

from .grammar import PrefixRecognizer, allowed_continuations
from .tokenizer import _PIECE_RE, count_tokens

log = logging.getLogger(__name__)

LANGUAGES = {"EN": "English", "DE": "German", "ZH": "Chinese", "RU": "Russian", "TE": "Telugu"}
TRANSLATION_SYSTEM_PROMPT = "You are an excellent translator."
TRANSLATION_INSTRUCTION = (
    "Please translate the following text into {language}. Provide only the translated texts: {original_input}"
)
TEXT_MODE_ROUNDS = 3
FINISH_REASONS = ("stop", "length", "eos", "constraint_exhausted")


class GenerationError(RuntimeError):
    pass


class TransportError(GenerationError):
    """Network-level failure; the only error class that is retried."""


class FixtureMiss(GenerationError):
    def __init__(self, prompt: str):
        self.prompt = prompt
        self.fingerprint = fingerprint(prompt)
        super().__init__(f"no scripted fixture for prompt {self.fingerprint} ({prompt[:60]!r}...)")


class ContextLengthExceeded(GenerationError):
    pass


class ConstraintError(GenerationError):
    """The grammar admits no vocabulary token at the first step."""


class EmptyResponse(GenerationError):
    pass


class ConfigurationError(ValueError):
    pass


class _Eos:
    def __repr__(self) -> str:
        return "EOS"


EOS = _Eos()


def fingerprint(prompt: str) -> str:
    """128-bit hex digest of the exact prompt string."""
    return hashlib.blake2b(prompt.encode("utf-8"), digest_size=16).hexdigest()


@dataclass
class GenerationRequest:
    prompt: str
    max_new_tokens: int = 64
    stop_sequences: tuple[str, ...] = ()
    temperature: float = 0.0
    constraint: PrefixRecognizer | None = None

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        self.stop_sequences = tuple(self.stop_sequences)


@dataclass
class Completion:
    text: str
    finish_reason: str
    token_count: int
    raw_backend_payload: Any = None


def _finish_text(text: str, req: GenerationRequest) -> tuple[str, str]:
    """Apply stop sequences, then the token budget."""
    cut = None
    for stop in req.stop_sequences:
        if stop:
            i = text.find(stop)
            if i != -1 and (cut is None or i < cut):
                cut = i
    if cut is not None:
        text = text[:cut]
    pieces = _PIECE_RE.findall(text)
    if len(pieces) > req.max_new_tokens:
        return "".join(pieces[: req.max_new_tokens]), "length"
    return text, ("stop" if cut is not None else "eos")


def _script_text(response: Any) -> str:
    if isinstance(response, str):
        return response
    if "text" in response:
        return response["text"]
    return "".join(response.get("steps", ()))


def _rank_from_script(response: Any, generated: str, step: int, vocabulary: Mapping[int, str]) -> list:
    """Preferred next tokens for a scripted response, best first."""
    if isinstance(response, Mapping) and "steps" in response:
        steps = response["steps"]
        if step >= len(steps):
            return [EOS]
        wanted = steps[step]
        return [tid for tid, text in vocabulary.items() if text == wanted]
    text = _script_text(response)
    if not text.startswith(generated):
        return []
    remaining = text[len(generated) :]
    if not remaining:
        return [EOS]
    hits = [(tid, tok) for tid, tok in vocabulary.items() if tok and remaining.startswith(tok)]
    hits.sort(key=lambda h: (-len(h[1]), h[0]))
    return [tid for tid, _ in hits]


class ScriptedBackend:
    """Replays fixtures keyed by prompt fingerprint. Misses are errors.

    A fixture is a full response string, ``{"text": ...}``, or
    ``{"steps": [token, ...]}`` giving the preferred token at each decoding
    step (used to script adversarial preferences).
    """

    token_level = True

    def __init__(self, fixtures: Mapping[str, Any] | None = None, name: str = "scripted"):
        self.fixtures = dict(fixtures or {})
        self.name = name

    @classmethod
    def from_prompts(cls, by_prompt: Mapping[str, Any], name: str = "scripted") -> "ScriptedBackend":
        return cls({fingerprint(p): r for p, r in by_prompt.items()}, name)

    @classmethod
    def load(cls, path: str | Path) -> "ScriptedBackend":
        path = Path(path)
        return cls(json.loads(path.read_text("utf-8")), name=f"scripted:{path.name}")

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.fixtures, indent=2, sort_keys=True, ensure_ascii=False), "utf-8")

    def _lookup(self, prompt: str) -> Any:
        try:
            return self.fixtures[fingerprint(prompt)]
        except KeyError:
            raise FixtureMiss(prompt) from None

    def complete(self, req: GenerationRequest) -> Completion:
        response = self._lookup(req.prompt)
        text, reason = _finish_text(_script_text(response), req)
        return Completion(text, reason, count_tokens(text), {"fixture": fingerprint(req.prompt)})

    def rank_next(self, prompt: str, generated: str, step: int, vocabulary: Mapping[int, str]) -> list:
        return _rank_from_script(self._lookup(prompt), generated, step, vocabulary)


class FixtureRecorder(ScriptedBackend):
    """Scripted backend that asks ``responder(prompt)`` on a miss and records the answer.

    Used to author fixture files; the recorded map replays through a plain
    :class:`ScriptedBackend`.
    """

    def __init__(self, responder: Callable[[str], Any], name: str = "scripted"):
        super().__init__({}, name)
        self.responder = responder
        self._lock = threading.Lock()

    def _lookup(self, prompt: str) -> Any:
        key = fingerprint(prompt)
        with self._lock:
            if key not in self.fixtures:
                self.fixtures[key] = self.responder(prompt)
            return self.fixtures[key]


class HttpBackend:
    """Completions-style HTTP endpoint (text-only).

    Request body: ``{"model", "prompt", "max_tokens", "temperature", "stop"}``.
    Response: ``{"choices": [{"text", "finish_reason"}], ...}``. The API key is
    read from ``XQL_API_KEY`` and sent as a bearer token.
    """

    token_level = False
    RETRYABLE_STATUS = {429, 500, 502, 503, 504}

    def __init__(
        self,
        url: str,
        model: str = "default",
        api_key_env: str = "XQL_API_KEY",
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff: float = 1.0,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.url = url
        self.model = model
        self.name = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.session = session or requests.Session()
        self._sleep = sleep

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def post(self, payload: dict) -> dict:
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                resp = self.session.post(self.url, json=payload, headers=self._headers(), timeout=self.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last = TransportError(str(exc))
            else:
                if resp.status_code == 200:
                    return resp.json()
                body = resp.text[:300]
                if resp.status_code in self.RETRYABLE_STATUS:
                    last = TransportError(f"HTTP {resp.status_code}: {body}")
                elif resp.status_code == 400 and "context" in body.lower():
                    raise ContextLengthExceeded(body)
                else:
                    raise GenerationError(f"HTTP {resp.status_code}: {body}")
            if attempt + 1 < self.max_attempts:
                delay = self.backoff * 2**attempt
                log.warning("transport error (%s), retrying in %.1fs", last, delay)
                self._sleep(delay)
        raise last  # type: ignore[misc]

    def complete(self, req: GenerationRequest) -> Completion:
        payload = {
            "model": self.model,
            "prompt": req.prompt,
            "max_tokens": req.max_new_tokens,
            "temperature": req.temperature,
        }
        if req.stop_sequences:
            payload["stop"] = list(req.stop_sequences)
        data = self.post(payload)
        try:
            choice = data["choices"][0]
            text = choice["text"]
        except (KeyError, IndexError, TypeError):
            raise GenerationError(f"malformed completion payload: {str(data)[:200]}") from None
        text, reason = _finish_text(text, req)
        if choice.get("finish_reason") == "length":
            reason = "length"
        return Completion(text, reason, count_tokens(text), data)


def generate(req: GenerationRequest, backend, tokenizer=None) -> Completion:
    if req.constraint is not None:
        if tokenizer is None:
            raise ConfigurationError("constrained generation needs a tokenizer")
        return generate_constrained(req, backend, tokenizer)
    return backend.complete(req)


def generate_constrained(req: GenerationRequest, backend, tokenizer) -> Completion:
    """Generate under ``req.constraint``; output is in-grammar whenever finish is eos/stop."""
    state = req.constraint
    if state is None or not state.viable:
        raise ConstraintError("constraint state is missing or already rejecting")
    if getattr(backend, "token_level", False):
        return _constrained_token_level(req, backend, tokenizer)
    return _constrained_text_mode(req, backend)


def _constrained_token_level(req: GenerationRequest, backend, tokenizer) -> Completion:
    vocab = tokenizer.vocabulary
    state = req.constraint
    text = ""
    chosen: list[int] = []
    for step in range(req.max_new_tokens):
        mask = allowed_continuations(state, vocab)
        if not mask.allowed and not mask.eos_allowed:
            if step == 0:
                raise ConstraintError("grammar admits no vocabulary token at step 0")
            return Completion(text, "constraint_exhausted", step, {"token_ids": chosen})
        ranking = backend.rank_next(req.prompt, text, step, vocab)
        pick = None
        for cand in ranking:
            if cand is EOS:
                if mask.eos_allowed:
                    pick = EOS
                    break
            elif cand in mask.allowed:
                pick = cand
                break
        if pick is None:
            # highest-ranked allowed option: EOS first, then vocabulary order
            pick = EOS if mask.eos_allowed else min(mask.allowed)
        if pick is EOS:
            return Completion(text, "eos", step, {"token_ids": chosen})
        chosen.append(pick)
        text += vocab[pick]
        state = state.advance(vocab[pick])
    reason = "length"
    return Completion(text, reason, len(chosen), {"token_ids": chosen})


def _constrained_text_mode(req: GenerationRequest, backend) -> Completion:
    state = req.constraint
    accepted = ""
    fallback = None
    payloads = []
    for _ in range(TEXT_MODE_ROUNDS):
        sub = GenerationRequest(req.prompt + accepted, req.max_new_tokens, req.stop_sequences, req.temperature)
        comp = backend.complete(sub)
        payloads.append(comp.raw_backend_payload)
        out = comp.text if accepted else comp.text.lstrip()
        cur = state
        taken = 0
        for ch in out:
            nxt = cur.advance(ch)
            if not nxt.viable:
                break
            cur = nxt
            taken += 1
            if cur.eos_allowed:
                fallback = accepted + out[:taken]
        accepted += out[:taken]
        state = cur
        if cur.eos_allowed:
            return Completion(accepted, "eos", count_tokens(accepted), payloads)
    if fallback is not None:
        # out of rounds: the longest complete prefix seen is still in-grammar
        return Completion(fallback, "eos", count_tokens(fallback), payloads)
    return Completion(accepted, "constraint_exhausted", count_tokens(accepted), payloads)


def translation_prompt(text: str, target_language: str) -> str:
    language = _language_name(target_language)
    task_instruction = TRANSLATION_INSTRUCTION.format(language=language, original_input=text)
    return f"{TRANSLATION_SYSTEM_PROMPT} {task_instruction}"


def _language_name(code: str) -> str:
    try:
        return LANGUAGES[code.upper()]
    except KeyError:
        raise ConfigurationError(f"unsupported language {code!r}; expected one of {sorted(LANGUAGES)}") from None


def translate(text: str, target_language: str, backend, max_new_tokens: int = 512) -> str:
    prompt = translation_prompt(text, target_language)
    comp = backend.complete(GenerationRequest(prompt, max_new_tokens=max_new_tokens))
    out = comp.text.strip()
    if not out:
        raise EmptyResponse(f"empty translation into {target_language}")
    return out


def load_backend(spec: str, model: str | None = None):
    """``scripted:<fixtures.json>`` or an HTTP URL."""
    if spec.startswith("scripted:"):
        return ScriptedBackend.load(spec.split(":", 1)[1])
    if spec.startswith(("http://", "https://")):
        return HttpBackend(spec, model=model or "default")
    raise ConfigurationError(f"unrecognised backend {spec!r}")
