from __future__ import annotations

import json
import logging
import threading
import time

import pytest

from fable.errors import (
    ConfigurationError,
    ContextOverflowError,
    GatewayError,
    InvalidArgumentError,
    SchemaViolationError,
)
from fable.gateway import ROLES, Gateway, GatewaySpec, HttpChatBackend, load_template
from fable.mock import MockBackend, MockRule, MockScript


def envelope(content) -> str:
    text = content if isinstance(content, str) else json.dumps(content)
    return json.dumps({"choices": [{"message": {"content": text}}]})


class FakeTransport:
    """Replays a list of (status, body) replies and records requests."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.requests = []

    def __call__(self, url, headers, body, timeout):
        self.requests.append((url, headers, json.loads(body)))
        return self.replies.pop(0)


def http_gateway(replies, **spec):
    spec = GatewaySpec(backend="http_chat", endpoint="http://llm.test/v1/chat", **spec)
    transport = FakeTransport(replies)
    sleeps = []
    gw = Gateway(spec, backend=HttpChatBackend(spec, transport), sleep=sleeps.append)
    return gw, transport, sleeps


def test_templates_exist_for_every_task():
    for name in ("system", "repair", "segment", "structure_outline", "structure_summarize", "select_docs", "navigate_nodes"):
        assert load_template(name).strip()
    with pytest.raises(ConfigurationError):
        load_template("segment", bundle="v999")


def test_http_success_and_role_models():
    gw, transport, _ = http_gateway(
        [(200, envelope({"doc_ids": ["a"]}))], model="base", role_models={"select_docs": "fast"}
    )
    reply = gw.call("select_docs", {"query": "q", "documents": []})
    assert reply.data == {"doc_ids": ["a"]} and reply.retries == 0
    url, headers, body = transport.requests[0]
    assert url == "http://llm.test/v1/chat"
    assert body["model"] == "fast" and body["temperature"] == 0
    assert [m["role"] for m in body["messages"]] == ["system", "user"]


def test_retriable_status_backs_off_then_succeeds():
    gw, transport, sleeps = http_gateway(
        [(503, "busy"), (429, "slow"), (200, envelope({"doc_ids": []}))], max_retries=2, backoff=0.5
    )
    reply = gw.call("select_docs", {"query": "q", "documents": []})
    assert reply.retries == 2
    assert sleeps == [0.5, 1.0]


def test_retries_exhausted():
    gw, _, _ = http_gateway([(500, "x")] * 3, max_retries=2)
    with pytest.raises(GatewayError):
        gw.call("select_docs", {"query": "q", "documents": []})


def test_client_error_is_not_retried():
    gw, transport, _ = http_gateway([(400, "bad request")], max_retries=3)
    with pytest.raises(GatewayError):
        gw.call("select_docs", {"query": "q", "documents": []})
    assert len(transport.requests) == 1


def test_schema_repair_round_trip():
    gw, transport, _ = http_gateway(
        [(200, envelope("not json at all")), (200, envelope("```json\n{\"doc_ids\": [\"b\"]}\n```"))]
    )
    reply = gw.call("select_docs", {"query": "q", "documents": []})
    assert reply.data == {"doc_ids": ["b"]} and reply.retries == 1
    second = transport.requests[1][2]["messages"]
    assert [m["role"] for m in second] == ["system", "user", "assistant", "user"]
    assert second[2]["content"] == "not json at all"


def test_schema_violation_surfaces():
    gw = Gateway(GatewaySpec(max_retries=1), backend=MockBackend(MockScript([MockRule("select_docs", {"wrong": 1})])))
    with pytest.raises(SchemaViolationError):
        gw.call("select_docs", {"query": "q", "documents": []})


def test_context_overflow_is_checked_before_sending():
    backend = MockBackend()
    gw = Gateway(GatewaySpec(context_window=50), backend=backend)
    with pytest.raises(ContextOverflowError):
        gw.call("select_docs", {"query": "q " * 400, "documents": []})
    assert not backend.calls


def test_unknown_role_and_task():
    gw = Gateway()
    with pytest.raises(InvalidArgumentError):
        gw.call("dance", {})
    with pytest.raises(InvalidArgumentError):
        gw.call("structure", {"task": "poem"})


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        GatewaySpec(backend="carrier-pigeon")
    with pytest.raises(ConfigurationError):
        GatewaySpec(role_models={"dance": "m"})
    with pytest.raises(ConfigurationError):
        GatewaySpec(max_parallel=0)
    assert set(ROLES) == {"segment", "structure", "select_docs", "navigate_nodes"}


def test_http_backend_needs_endpoint(monkeypatch):
    monkeypatch.delenv("FABLE_LLM_ENDPOINT", raising=False)
    with pytest.raises(ConfigurationError):
        Gateway(GatewaySpec(backend="http_chat"))


def test_token_is_sent_but_redacted_in_logs(monkeypatch, caplog):
    monkeypatch.setenv("FABLE_LLM_TOKEN", "sekrit-123")
    monkeypatch.setenv("FABLE_GATEWAY_LOG", "1")
    gw, transport, _ = http_gateway([(200, envelope({"doc_ids": []}))])
    with caplog.at_level(logging.INFO, logger="fable.gateway"):
        gw.call("select_docs", {"query": "q", "documents": []})
    assert transport.requests[0][1]["Authorization"] == "Bearer sekrit-123"
    assert "sekrit-123" not in caplog.text
    assert "<redacted>" in caplog.text


def test_public_dict_has_no_endpoint():
    spec = GatewaySpec(backend="http_chat", endpoint="http://secret.host")
    assert "secret.host" not in json.dumps(spec.public_dict())


def test_max_parallel_bounds_concurrency():
    active = 0
    peak = 0
    lock = threading.Lock()

    class Slow:
        def complete(self, role, messages, payload):
            nonlocal active, peak
            with lock:
                active += 1
                peak = max(peak, active)
            time.sleep(0.02)
            with lock:
                active -= 1
            return json.dumps({"doc_ids": []})

    gw = Gateway(GatewaySpec(max_parallel=2), backend=Slow())
    threads = [threading.Thread(target=gw.call, args=("select_docs", {"query": "q", "documents": []})) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak == 2


def test_mock_failure_injection():
    gw = Gateway(backend=MockBackend(MockScript(fail_roles=frozenset({"navigate_nodes"}))))
    with pytest.raises(GatewayError):
        gw.call("navigate_nodes", {"query": "q", "nodes": []})
    assert gw.call("select_docs", {"query": "q", "documents": []}).data["doc_ids"] == []
