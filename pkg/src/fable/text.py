"""Small text helpers shared by the segmenter, embedder and mock backends."""

from __future__ import annotations

import re

_TERM = re.compile(r"[0-9a-z]+")
_HEADING = re.compile(r"^(#{1,6})[ \t]+(.+?)[ \t#]*$")

STOPWORDS = frozenset(
    """a about above after again all also am an and any are as at be been before being
    between both but by can could did do does doing down during each few for from had has
    have having he her here hers him his how i if in into is it its itself just me more
    most my no nor not now of off on once only or other our out over own same she should
    so some such than that the their them then there these they this those through to too
    under until up very was we were what when where which while who whom why will with
    would you your""".split()
)


def terms(text: str) -> list[str]:
    """Lower-cased alphanumeric tokens, in order."""
    return _TERM.findall(text.lower())


def key_terms(text: str) -> set[str]:
    """Content-bearing terms of a query: non-stopwords of length >= 3."""
    return {t for t in terms(text) if len(t) >= 3 and t not in STOPWORDS}


def normalize_whitespace(text: str) -> str:
    return " ".join(text.split())


def heading(line: str):
    """``(level, title)`` if ``line`` is a markdown ATX heading, else None."""
    m = _HEADING.match(line.strip())
    if not m:
        return None
    return len(m.group(1)), m.group(2).strip()


def leading_headings(content: str) -> list[tuple[int, str]]:
    """Markdown headings at the start of ``content`` (before any body text)."""
    out = []
    for line in content.splitlines():
        if not line.strip():
            continue
        h = heading(line)
        if h is None:
            break
        out.append(h)
    return out
