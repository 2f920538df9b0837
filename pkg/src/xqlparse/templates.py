"""Versioned prompt templates shipped as package data."""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

_NAME_RE = re.compile(r"(?P<name>.+)\.v(?P<version>\d+)\.txt\Z")


@lru_cache(maxsize=None)
def _index() -> dict[str, tuple[int, str]]:
    latest: dict[str, tuple[int, str]] = {}
    for entry in resources.files("xqlparse.prompts").iterdir():
        m = _NAME_RE.match(entry.name)
        if not m:
            continue
        version = int(m["version"])
        if m["name"] not in latest or latest[m["name"]][0] < version:
            latest[m["name"]] = (version, entry.name)
    return latest


def load_template(name: str, language: str | None = None) -> tuple[str, str]:
    """Return ``(text, version_tag)``; a ``<name>.<lang>`` file wins over ``<name>``."""
    index = _index()
    key = name
    if language and f"{name}.{language.lower()}" in index:
        key = f"{name}.{language.lower()}"
    if key not in index:
        raise KeyError(f"no prompt template {name!r}")
    version, filename = index[key]
    text = resources.files("xqlparse.prompts").joinpath(filename).read_text("utf-8")
    return text.rstrip("\n"), f"{key}.v{version}"


def template_versions() -> dict[str, str]:
    return {name: f"{name}.v{v}" for name, (v, _) in sorted(_index().items())}
