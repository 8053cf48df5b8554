"""Config files: ``[section]`` headers and ``key = value`` lines.

Sections and their keys::

    [retrieval]  max_depth, hierarchy_threshold, k_doc, budget
    [tokenizer]  kind (approx_bytes|whitespace|external), name
    [segmenter]  backend (structural|llm), target_chunk_tokens, max_chunk_tokens
    [gateway]    backend (mock|http_chat), endpoint, token_env, model,
                 model.<role>, max_parallel, max_retries, timeout, backoff,
                 context_window, prompt_bundle_version
    [embedder]   backend (hash_mock|http), dimension, seed, endpoint, model, token_env
    [index]      part_size

Values are integers, floats, true/false, or strings (optionally quoted).
``#`` starts a comment.  Unknown sections or keys are errors.
"""

from __future__ import annotations

import dataclasses
import re
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigurationError, FableError
from .forest import RetrievalConfig
from .gateway import ROLES, GatewaySpec
from .pipeline import IndexSettings
from .segmenter import SegmenterSpec
from .vector_index import EmbedderSpec

_COMMENT = re.compile(r"(^|\s)#.*$")
SECTIONS = ("retrieval", "tokenizer", "segmenter", "gateway", "embedder", "index")


def _value(raw: str) -> Any:
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


def parse_config(text: str, source: str = "<config>") -> dict[str, dict[str, Any]]:
    out: dict[str, dict[str, Any]] = {}
    section: Optional[str] = None
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = _COMMENT.sub("", line).strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigurationError(f"{source}:{lineno}: unknown section [{section}]")
            out.setdefault(section, {})
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"{source}:{lineno}: expected key = value")
        if section is None:
            raise ConfigurationError(f"{source}:{lineno}: key outside of a [section]")
        key, raw = stripped.split("=", 1)
        out[section][key.strip()] = _value(raw)
    return out


def _build(cls, values: dict, section: str, source: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigurationError(f"{source}: unknown key(s) in [{section}]: {', '.join(unknown)}")
    try:
        return cls(**values)
    except FableError as exc:
        raise ConfigurationError(f"{source}: [{section}] {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{source}: [{section}] {exc}") from exc


def settings_from_dict(cfg: dict[str, dict[str, Any]], source: str = "<config>") -> IndexSettings:
    retrieval = dict(cfg.get("retrieval", {}))
    for bad in ("tokenizer", "tokenizer_name"):
        if bad in retrieval:
            raise ConfigurationError(f"{source}: set the tokenizer in [tokenizer], not [retrieval]")
    tok = dict(cfg.get("tokenizer", {}))
    unknown = sorted(set(tok) - {"kind", "name"})
    if unknown:
        raise ConfigurationError(f"{source}: unknown key(s) in [tokenizer]: {', '.join(unknown)}")
    if "kind" in tok:
        retrieval["tokenizer"] = tok["kind"]
    if "name" in tok:
        retrieval["tokenizer_name"] = tok["name"]

    gateway = dict(cfg.get("gateway", {}))
    role_models = {}
    for key in [k for k in gateway if k.startswith("model.")]:
        role = key.split(".", 1)[1]
        if role not in ROLES:
            raise ConfigurationError(f"{source}: [gateway] {key}: unknown role {role!r}")
        role_models[role] = str(gateway.pop(key))
    if role_models:
        gateway["role_models"] = role_models

    index = dict(cfg.get("index", {}))
    unknown = sorted(set(index) - {"part_size"})
    if unknown:
        raise ConfigurationError(f"{source}: unknown key(s) in [index]: {', '.join(unknown)}")
    return IndexSettings(
        retrieval=_build(RetrievalConfig, retrieval, "retrieval", source),
        segmenter=_build(SegmenterSpec, cfg.get("segmenter", {}), "segmenter", source),
        gateway=_build(GatewaySpec, gateway, "gateway", source),
        embedder=_build(EmbedderSpec, cfg.get("embedder", {}), "embedder", source),
        part_size=index.get("part_size"),
    )


def load_config(path) -> IndexSettings:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return settings_from_dict(parse_config(text, str(path)), str(path))
