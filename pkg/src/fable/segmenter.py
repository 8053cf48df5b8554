"""Split raw documents into ordered, non-overlapping chunks.

Two backends: ``structural`` (deterministic, paragraph/heading driven) and
``llm`` (the model returns character offsets; the original text is sliced,
never rewritten).  Either way every chunk is an exact slice of the
normalized document, so joining the chunks recovers the text up to
inter-chunk whitespace.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Optional

from .errors import GatewayError, IntegrityError, InvalidArgumentError
from .forest import Chunk
from .text import heading
from .tokenizer import DEFAULT_TOKENIZER, Tokenizer

log = logging.getLogger(__name__)

Span = tuple[int, int]

_SENTENCE_END = re.compile(r"[.!?][\"')\]]*\s+")
_WORD = re.compile(r"\S+")


@dataclass(frozen=True)
class SegmenterSpec:
    backend: str = "structural"
    target_chunk_tokens: int = 256
    max_chunk_tokens: int = 1024

    def __post_init__(self):
        if self.backend not in ("structural", "llm"):
            raise InvalidArgumentError(f"unknown segmenter backend {self.backend!r}")
        if not 1 <= self.target_chunk_tokens <= self.max_chunk_tokens:
            raise InvalidArgumentError("need 1 <= target_chunk_tokens <= max_chunk_tokens")


def normalize_document(text: str) -> str:
    """Unify newlines, drop trailing spaces per line and surrounding blank space."""
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    return "\n".join(line.rstrip() for line in text.split("\n")).strip()


def _strip(text: str, start: int, end: int) -> Optional[Span]:
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    return (start, end) if start < end else None


def _units(text: str) -> list[tuple[Span, bool]]:
    """Paragraph and heading units as ``((start, end), is_heading)``."""
    units: list[tuple[Span, bool]] = []
    para_start = None
    pos = 0
    for line in text.split("\n"):
        end = pos + len(line)
        if not line.strip():
            if para_start is not None:
                units.append(((para_start, pos - 1), False))
                para_start = None
        elif heading(line) is not None:
            if para_start is not None:
                units.append(((para_start, pos - 1), False))
                para_start = None
            units.append(((pos, end), True))
        elif para_start is None:
            para_start = pos
        pos = end + 1
    if para_start is not None:
        units.append(((para_start, len(text)), False))
    return [(s, h) for (a, b), h in units if (s := _strip(text, a, b)) is not None]


def _pack(text: str, pieces: list[Span], limit: int, count) -> list[Span]:
    out: list[Span] = []
    cur: Optional[Span] = None
    for a, b in pieces:
        if cur is not None and count(text[cur[0] : b]) <= limit:
            cur = (cur[0], b)
        else:
            if cur is not None:
                out.append(cur)
            cur = (a, b)
    if cur is not None:
        out.append(cur)
    return out


def split_oversize(text: str, span: Span, target: int, max_tokens: int, count) -> list[Span]:
    """Split one span into pieces of at most ``max_tokens``.

    Sentence boundaries first, then whitespace, then raw characters as a
    last resort for unbroken runs.
    """
    a, b = span
    if count(text[a:b]) <= max_tokens:
        return [span]
    cuts = [a] + [a + m.end() for m in _SENTENCE_END.finditer(text[a:b])] + [b]
    sentences = [s for i in range(len(cuts) - 1) if (s := _strip(text, cuts[i], cuts[i + 1]))]
    out: list[Span] = []
    for s in sentences:
        if count(text[s[0] : s[1]]) <= max_tokens:
            out.append(s)
            continue
        words = [(s[0] + m.start(), s[0] + m.end()) for m in _WORD.finditer(text[s[0] : s[1]])]
        for w in words:
            if count(text[w[0] : w[1]]) <= max_tokens:
                out.append(w)
            else:
                lo = w[0]
                while lo < w[1]:
                    hi = lo + 1
                    while hi < w[1] and count(text[lo : hi + 1]) <= max_tokens:
                        hi += 1
                    out.append((lo, hi))
                    lo = hi
    return _pack(text, out, target, count)


def structural_spans(
    text: str, target_tokens: int = 256, max_tokens: int = 1024, tokenizer: Tokenizer = DEFAULT_TOKENIZER
) -> list[Span]:
    """Chunk spans of an already-normalized text.

    Blank lines and markdown headings delimit units; adjacent units are
    merged greedily up to ``target_tokens`` and a heading always starts a new
    chunk (consecutive headings stay together with the body that follows).
    """
    count = tokenizer.count
    units: list[tuple[Span, bool]] = []
    for span, is_heading in _units(text):
        pieces = split_oversize(text, span, target_tokens, max_tokens, count)
        # an oversize heading keeps heading status on its first piece only
        units.extend((s, is_heading and i == 0) for i, s in enumerate(pieces))
    chunks: list[Span] = []
    cur: Optional[Span] = None
    has_body = False
    for (a, b), is_heading in units:
        if cur is None:
            cur, has_body = (a, b), not is_heading
            continue
        size = count(text[cur[0] : b])
        if is_heading:
            join = not has_body and size <= max_tokens
        elif has_body:
            join = size <= target_tokens
        else:
            join = size <= max_tokens
        if join:
            cur = (cur[0], b)
            has_body = has_body or not is_heading
        else:
            chunks.append(cur)
            cur, has_body = (a, b), not is_heading
    if cur is not None:
        chunks.append(cur)
    return chunks


def _windows(text: str, limit: int, count) -> list[Span]:
    """Blank-line aligned windows of at most ``limit`` tokens (best effort)."""
    paras = [s for s, _ in _units(text)] or [(0, len(text))]
    return _pack(text, paras, limit, count)


def _llm_spans(text: str, spec: SegmenterSpec, gateway, doc_id: str, count) -> list[Span]:
    window_limit = max(spec.max_chunk_tokens, int(gateway.spec.context_window * 0.4))
    spans: list[Span] = []
    for wa, wb in _windows(text, window_limit, count):
        window = text[wa:wb]
        reply = gateway.call(
            "segment",
            {
                "doc_id": doc_id,
                "text": window,
                "target_chunk_tokens": spec.target_chunk_tokens,
                "max_chunk_tokens": spec.max_chunk_tokens,
            },
        )
        bounds = reply.data["boundaries"]
        if any(not isinstance(x, int) for x in bounds):
            raise IntegrityError(f"{doc_id}: non-integer boundary")
        if any(not 0 < x < len(window) for x in bounds) or any(
            x >= y for x, y in zip(bounds, bounds[1:])
        ):
            raise IntegrityError(f"{doc_id}: boundaries must be strictly increasing offsets inside the text")
        cuts = [0, *bounds, len(window)]
        for i in range(len(cuts) - 1):
            s = _strip(text, wa + cuts[i], wa + cuts[i + 1])
            if s is not None:
                spans.append(s)
    return spans


def segment(
    text: str,
    doc_id: str,
    spec: SegmenterSpec = SegmenterSpec(),
    gateway=None,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
) -> list[Chunk]:
    """Chunk one document; chunk ids are ``c0001``, ``c0002``, ... in order."""
    norm = normalize_document(text)
    if not norm:
        raise InvalidArgumentError(f"{doc_id}: empty document")
    count = tokenizer.count
    spans = None
    if spec.backend == "llm":
        if gateway is None:
            raise InvalidArgumentError("llm segmenter backend needs a gateway")
        try:
            spans = _llm_spans(norm, spec, gateway, doc_id, count)
            spans = [p for s in spans for p in split_oversize(norm, s, spec.max_chunk_tokens, spec.max_chunk_tokens, count)]
        except (IntegrityError, GatewayError) as exc:
            log.warning("%s: LLM segmentation rejected (%s); using structural backend", doc_id, exc)
            spans = None
    if spans is None:
        spans = structural_spans(norm, spec.target_chunk_tokens, spec.max_chunk_tokens, tokenizer)
    return [Chunk(f"c{i:04d}", norm[a:b], doc_id) for i, (a, b) in enumerate(spans, 1)]
