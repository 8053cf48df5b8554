"""Token accounting used for chunk sizing, routing and budget control."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import ConfigurationError

KINDS = ("approx_bytes", "whitespace", "external")


def _load_external(name: str) -> Callable[[str], int]:
    # "tiktoken:<encoding>" or a Hugging Face tokenizer name/path.
    if name.startswith("tiktoken:"):
        try:
            import tiktoken
        except ImportError as exc:
            raise ConfigurationError(f"tokenizer {name!r}: tiktoken is not installed") from exc
        enc = tiktoken.get_encoding(name.split(":", 1)[1])
        return lambda text: len(enc.encode(text))
    try:
        from transformers import AutoTokenizer

        tok = AutoTokenizer.from_pretrained(name)
    except Exception as exc:
        raise ConfigurationError(f"external tokenizer {name!r} is unavailable: {exc}") from exc
    return lambda text: len(tok.encode(text, add_special_tokens=False))


@dataclass(frozen=True)
class Tokenizer:
    """Deterministic length function over text.

    ``approx_bytes`` counts ``ceil(utf8_bytes / 4)``; ``whitespace`` counts
    whitespace-separated words; ``external`` delegates to a real model
    tokenizer, resolved once when the tokenizer is constructed.
    """

    kind: str = "approx_bytes"
    name: Optional[str] = None
    counter: Optional[Callable[[str], int]] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown tokenizer kind {self.kind!r}")
        if self.kind == "external" and self.counter is None:
            if not self.name:
                raise ConfigurationError("external tokenizer needs a name or a counter")
            object.__setattr__(self, "counter", _load_external(self.name))

    def __call__(self, text: str) -> int:
        return self.count(text)

    def count(self, text: str) -> int:
        if not text:
            return 0
        if self.kind == "approx_bytes":
            return math.ceil(len(text.encode("utf-8")) / 4)
        if self.kind == "whitespace":
            return max(1, len(text.split()))
        return max(1, int(self.counter(text)))


def tokens(text: str, tokenizer: Tokenizer | None = None) -> int:
    """Count tokens in ``text`` (default: approx_bytes)."""
    return (tokenizer or DEFAULT_TOKENIZER).count(text)


DEFAULT_TOKENIZER = Tokenizer()
