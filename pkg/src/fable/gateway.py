"""Uniform boundary to language-model backends.

Four roles go through :meth:`Gateway.call`: ``segment``, ``structure``,
``select_docs`` and ``navigate_nodes``.  Every role has a prompt template
(versioned text assets under ``fable/prompts/``) and a JSON schema; replies
are parsed and validated client side, and malformed replies are retried with
a repair instruction appended to the conversation.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from importlib import resources
from string import Template
from typing import Any, Callable, Mapping, Optional, Protocol

import jsonschema

from .errors import (
    ConfigurationError,
    ContextOverflowError,
    GatewayError,
    InvalidArgumentError,
    RetriableGatewayError,
    SchemaViolationError,
)
from .tokenizer import Tokenizer

log = logging.getLogger(__name__)

ROLES = ("segment", "structure", "select_docs", "navigate_nodes")

_OUTLINE_NODE = {
    "type": "object",
    "properties": {
        "title": {"type": "string"},
        "summary": {"type": "string"},
        "children": {
            "type": "array",
            "items": {
                "anyOf": [
                    {
                        "type": "object",
                        "properties": {"chunk_id": {"type": "string"}},
                        "required": ["chunk_id"],
                    },
                    {"$ref": "#/$defs/node"},
                ]
            },
        },
    },
    "required": ["children"],
}

SCHEMAS: dict[str, dict] = {
    "segment": {
        "type": "object",
        "properties": {"boundaries": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
        "required": ["boundaries"],
    },
    "structure/outline": {"$defs": {"node": _OUTLINE_NODE}, "$ref": "#/$defs/node"},
    "structure/summarize": {
        "type": "object",
        "properties": {"title": {"type": "string"}, "summary": {"type": "string"}},
        "required": ["title", "summary"],
    },
    "select_docs": {
        "type": "object",
        "properties": {"doc_ids": {"type": "array", "items": {"type": "string"}}},
        "required": ["doc_ids"],
    },
    "navigate_nodes": {
        "type": "object",
        "properties": {
            "nodes": {
                "type": "array",
                "items": {
                    "type": "object",
                    "properties": {"doc_id": {"type": "string"}, "node_id": {"type": "string"}},
                    "required": ["doc_id", "node_id"],
                },
            }
        },
        "required": ["nodes"],
    },
}


# compiled once; jsonschema.validate would re-check the schema on every call
VALIDATORS = {key: jsonschema.Draft202012Validator(schema) for key, schema in SCHEMAS.items()}


def schema_key(role: str, payload: Mapping) -> str:
    if role == "structure":
        return f"structure/{payload.get('task', 'outline')}"
    return role


def _template_name(key: str) -> str:
    return key.replace("/", "_")


def load_template(name: str, bundle: str = "v1") -> str:
    try:
        return resources.files("fable.prompts").joinpath(bundle).joinpath(f"{name}.txt").read_text("utf-8")
    except FileNotFoundError:
        raise ConfigurationError(f"prompt bundle {bundle!r} has no template {name!r}") from None


@dataclass(frozen=True)
class GatewaySpec:
    backend: str = "mock"
    endpoint: Optional[str] = None
    token_env: str = "FABLE_LLM_TOKEN"
    model: str = "default"
    role_models: Mapping[str, str] = field(default_factory=dict)
    max_parallel: int = 4
    max_retries: int = 2
    timeout: float = 60.0
    backoff: float = 0.5
    context_window: int = 131072
    prompt_bundle_version: str = "v1"

    def __post_init__(self):
        if self.backend not in ("mock", "http_chat"):
            raise ConfigurationError(f"unknown gateway backend {self.backend!r}")
        if self.max_parallel < 1:
            raise ConfigurationError("max_parallel must be >= 1")
        if self.max_retries < 0:
            raise ConfigurationError("max_retries must be >= 0")
        unknown = set(self.role_models) - set(ROLES)
        if unknown:
            raise ConfigurationError(f"role_models has unknown roles {sorted(unknown)}")

    def model_for(self, role: str) -> str:
        return self.role_models.get(role, self.model)

    def resolved_endpoint(self) -> Optional[str]:
        return self.endpoint or os.environ.get("FABLE_LLM_ENDPOINT")

    def public_dict(self) -> dict:
        """Provenance view (no secrets, no endpoint)."""
        return {
            "backend": self.backend,
            "model": self.model,
            "role_models": dict(sorted(self.role_models.items())),
            "prompt_bundle_version": self.prompt_bundle_version,
        }


@dataclass
class GatewayReply:
    role: str
    data: Any
    retries: int = 0


class Backend(Protocol):
    def complete(self, role: str, messages: list[dict], payload: Mapping) -> str: ...


# -- HTTP chat backend ----------------------------------------------------------

Transport = Callable[[str, dict, bytes, float], "tuple[int, str]"]


def urllib_transport(url: str, headers: dict, body: bytes, timeout: float) -> tuple[int, str]:
    req = urllib.request.Request(url, data=body, headers=headers, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, resp.read().decode("utf-8", "replace")
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read().decode("utf-8", "replace")
    except (urllib.error.URLError, TimeoutError, OSError) as exc:
        raise RetriableGatewayError(f"transport error: {exc}") from exc


def _redact(headers: Mapping[str, str]) -> dict:
    return {k: ("<redacted>" if k.lower() == "authorization" else v) for k, v in headers.items()}


class HttpChatBackend:
    """JSON-over-HTTP chat-completions client (OpenAI-compatible wire format)."""

    def __init__(self, spec: GatewaySpec, transport: Optional[Transport] = None):
        self.spec = spec
        self.endpoint = spec.resolved_endpoint()
        if not self.endpoint:
            raise ConfigurationError("http_chat backend needs an endpoint (config 'endpoint' or FABLE_LLM_ENDPOINT)")
        self.transport = transport or urllib_transport

    def complete(self, role: str, messages: list[dict], payload: Mapping) -> str:
        body = {
            "model": self.spec.model_for(role),
            "messages": messages,
            "temperature": 0,
            "response_format": {"type": "json_object"},
        }
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.spec.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        raw = json.dumps(body, ensure_ascii=False).encode("utf-8")
        if os.environ.get("FABLE_GATEWAY_LOG") == "1":
            log.info("gateway request role=%s headers=%s body=%s", role, _redact(headers), raw.decode("utf-8"))
        status, text = self.transport(self.endpoint, headers, raw, self.spec.timeout)
        if os.environ.get("FABLE_GATEWAY_LOG") == "1":
            log.info("gateway response role=%s status=%s body=%s", role, status, text)
        if status == 429 or status >= 500:
            raise RetriableGatewayError(f"HTTP {status}")
        if status >= 400:
            raise GatewayError(f"HTTP {status}: {text[:200]}")
        try:
            return json.loads(text)["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise RetriableGatewayError(f"unexpected response envelope: {exc}") from exc


# -- gateway ------------------------------------------------------------------------

_FENCE = re.compile(r"^```(?:json)?\s*|\s*```$")


def _parse(text: str) -> Any:
    return json.loads(_FENCE.sub("", text.strip()))


class Gateway:
    """Shared, thread-safe entry point for all LLM roles."""

    def __init__(
        self,
        spec: Optional[GatewaySpec] = None,
        backend: Optional[Backend] = None,
        tokenizer: Optional[Tokenizer] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.spec = spec or GatewaySpec()
        if backend is None:
            if self.spec.backend == "mock":
                from .mock import MockBackend

                backend = MockBackend()
            else:
                backend = HttpChatBackend(self.spec)
        self.backend = backend
        self.tokenizer = tokenizer or Tokenizer()
        self._slots = threading.BoundedSemaphore(self.spec.max_parallel)
        self._sleep = sleep
        self._templates: dict[str, str] = {}
        self._system = load_template("system", self.spec.prompt_bundle_version)

    @property
    def prompt_bundle_version(self) -> str:
        return self.spec.prompt_bundle_version

    def _template(self, name: str) -> Template:
        if name not in self._templates:
            self._templates[name] = load_template(name, self.spec.prompt_bundle_version)
        return Template(self._templates[name])

    def render(self, role: str, payload: Mapping) -> str:
        key = schema_key(role, payload)
        return self._template(_template_name(key)).safe_substitute(
            payload=json.dumps(payload, ensure_ascii=False, sort_keys=True),
            schema=json.dumps(SCHEMAS[key], sort_keys=True),
            query=payload.get("query", ""),
            max_depth=payload.get("max_depth", ""),
        )

    def prompt_tokens(self, role: str, payload: Mapping) -> int:
        return self.tokenizer.count(self._system) + self.tokenizer.count(self.render(role, payload))

    def call(self, role: str, payload: Mapping) -> GatewayReply:
        if role not in ROLES:
            raise InvalidArgumentError(f"unknown gateway role {role!r}")
        key = schema_key(role, payload)
        if key not in SCHEMAS:
            raise InvalidArgumentError(f"role {role!r} has no task {payload.get('task')!r}")
        schema = SCHEMAS[key]
        prompt = self.render(role, payload)
        size = self.tokenizer.count(self._system) + self.tokenizer.count(prompt)
        if size > self.spec.context_window:
            raise ContextOverflowError(
                f"{role}: prompt of {size} tokens exceeds context window {self.spec.context_window}"
            )
        messages = [{"role": "system", "content": self._system}, {"role": "user", "content": prompt}]
        last_error: Optional[Exception] = None
        for attempt in range(self.spec.max_retries + 1):
            if attempt and isinstance(last_error, RetriableGatewayError):
                self._sleep(self.spec.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    text = self.backend.complete(role, list(messages), payload)
            except RetriableGatewayError as exc:
                last_error = exc
                log.warning("gateway %s attempt %d failed: %s", role, attempt + 1, exc)
                continue
            try:
                data = _parse(text)
                VALIDATORS[key].validate(data)
            except (json.JSONDecodeError, jsonschema.ValidationError) as exc:
                msg = exc.message if isinstance(exc, jsonschema.ValidationError) else str(exc)
                last_error = SchemaViolationError(f"{role}: {msg}")
                messages += [
                    {"role": "assistant", "content": text},
                    {
                        "role": "user",
                        "content": self._template("repair").safe_substitute(
                            error=msg, schema=json.dumps(schema, sort_keys=True)
                        ),
                    },
                ]
                continue
            return GatewayReply(role, data, attempt)
        if isinstance(last_error, SchemaViolationError):
            raise last_error
        raise GatewayError(f"{role}: giving up after {self.spec.max_retries + 1} attempts: {last_error}")
