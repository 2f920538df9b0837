"""Dataset row types shared across modules."""

from __future__ import annotations

from dataclasses import asdict, dataclass

LANGUAGE_CODES = ("EN", "ZH", "DE", "RU", "TE")


def normalize_language(code: str) -> str:
    up = code.strip().upper()
    if up not in LANGUAGE_CODES:
        raise ValueError(f"unsupported language {code!r}; expected one of {', '.join(LANGUAGE_CODES)}")
    return up


@dataclass(frozen=True)
class CoxqlRecord:
    question: str
    parse: str
    language: str = "EN"

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CompassRecord:
    user_question: str
    operation_name: str
    custom_input: str
    language: str = "EN"

    def to_json(self) -> dict:
        return asdict(self)


COXQL_FIELDS = ("question", "parse", "language")
COMPASS_FIELDS = ("user_question", "operation_name", "custom_input", "language")
