"""Versioned prompt assets and the section format shared with the mocks.

Prompts are ``string.Template`` text files under ``filingqa/prompts/``;
the first line of every rendered prompt is a stable marker
(``# filingqa:prompt <name> <version>``) that identifies which template
produced it. Section bodies follow ``HEADER:`` lines (optionally
``HEADER[i] (attrs):``) and run until the next header.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources
from string import Template

_HEADER = re.compile(r"^([A-Z_]+(?:\[\d+\])?)(?: \(([^)]*)\))?:\s*$")


@lru_cache(maxsize=None)
def load_template(name: str) -> Template:
    text = (resources.files("filingqa") / "prompts" / f"{name}.txt").read_text(
        encoding="utf-8"
    )
    return Template(text)


def render(name: str, **values: str) -> str:
    """Render a named template; missing placeholders raise KeyError."""
    return load_template(name).substitute(**values).rstrip("\n")


def prompt_marker(prompt: str) -> str:
    """The template marker line of a rendered prompt ('' when absent)."""
    first = prompt.split("\n", 1)[0]
    return first if first.startswith("# filingqa:prompt") else ""


def parse_sections(prompt: str) -> list[tuple[str, str, str]]:
    """Split a rendered prompt into (header, attrs, body) sections."""
    sections: list[tuple[str, str, str]] = []
    name: str | None = None
    attrs = ""
    body: list[str] = []
    for line in prompt.split("\n"):
        m = _HEADER.match(line)
        if m:
            if name is not None:
                sections.append((name, attrs, "\n".join(body).strip("\n")))
            name, attrs, body = m.group(1), m.group(2) or "", []
        elif name is not None:
            body.append(line)
    if name is not None:
        sections.append((name, attrs, "\n".join(body).strip("\n")))
    return sections


def section(prompt: str, header: str) -> str:
    """Body of the first section named ``header`` ('' when absent)."""
    for name, _, body in parse_sections(prompt):
        if name == header:
            return body
    return ""


def sections_matching(prompt: str, prefix: str) -> list[tuple[str, str, str]]:
    """All sections whose header starts with ``prefix``, in order."""
    return [s for s in parse_sections(prompt) if s[0].startswith(prefix)]
