"""Deterministic offline stand-in for the LLM backends.

The default behaviours are simple heuristics: headings drive the outline,
tf-idf keywords stand in for summaries, and selection/navigation match the
query's content terms against ToC entries.  :class:`MockScript` rules can
override any role with canned responses, and ``fail_roles`` injects hard
failures for robustness tests.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Sequence, Union

from .errors import GatewayError
from .text import STOPWORDS, key_terms, leading_headings, terms

SUMMARY_TERMS = 24
GROUP_SIZE = 4


def _content_terms(text: str) -> list[str]:
    return [t for t in terms(text) if len(t) >= 3 and t not in STOPWORDS]


def keyword_rankings(contents: Sequence[str]) -> list[list[str]]:
    """Per-text term lists ranked by tf-idf against the other texts."""
    n = len(contents)
    tfs = [Counter(_content_terms(c)) for c in contents]
    df = Counter(t for tf in tfs for t in tf)
    return [sorted(tf, key=lambda t: (-tf[t] * math.log((1 + n) / df[t]), t)) for tf in tfs]


def interleave(lists: Sequence[Sequence[str]], cap: int = SUMMARY_TERMS) -> list[str]:
    """Round-robin merge of ranked lists, dropping repeats, up to ``cap`` items."""
    out: list[str] = []
    seen = set()
    depth = max((len(x) for x in lists), default=0)
    for i in range(depth):
        for ranked in lists:
            if i < len(ranked) and ranked[i] not in seen:
                seen.add(ranked[i])
                out.append(ranked[i])
                if len(out) == cap:
                    return out
    return out


def _finish(node: dict, leaf_rank: Mapping[str, list[str]]) -> list[str]:
    """Fill summaries bottom-up; returns the node's keyword ranking."""
    ranked = []
    for child in node["children"]:
        if "chunk_id" in child:
            ranked.append(leaf_rank[child["chunk_id"]])
        else:
            ranked.append(_finish(child, leaf_rank))
    keywords = interleave(ranked)
    node["summary"] = ", ".join(keywords)
    if not node.get("title"):
        node["title"] = " ".join(keywords[:3]).title() or "Untitled"
    return keywords


def mock_outline(payload: Mapping) -> dict:
    chunks = payload["chunks"]
    max_depth = int(payload.get("max_depth", 4))
    ranks = keyword_rankings([c["content"] for c in chunks])
    leaf_rank = {c["chunk_id"]: r for c, r in zip(chunks, ranks)}
    root: dict = {"title": "", "children": []}
    allow_sections = max_depth >= 3
    allow_subsections = max_depth >= 4
    section = sub = None
    saw_heading = False
    for c in chunks:
        for level, text in leading_headings(c["content"]):
            saw_heading = True
            if level == 1 and not root["title"] and not root["children"]:
                root["title"] = text
            elif not allow_sections:
                continue
            elif level <= 2 or section is None or not allow_subsections:
                section = {"title": text, "children": []}
                root["children"].append(section)
                sub = None
            else:
                sub = {"title": text, "children": []}
                section["children"].append(sub)
        container = sub or section or root
        container["children"].append({"chunk_id": c["chunk_id"]})
    if not saw_heading and allow_sections and len(chunks) > GROUP_SIZE:
        root["children"] = []
        for k in range(0, len(chunks), GROUP_SIZE):
            group = chunks[k : k + GROUP_SIZE]
            kws = interleave([leaf_rank[c["chunk_id"]] for c in group], 2)
            root["children"].append(
                {
                    "title": f"Part {k // GROUP_SIZE + 1}: " + " ".join(kws),
                    "children": [{"chunk_id": c["chunk_id"]} for c in group],
                }
            )
    _finish(root, leaf_rank)
    return root


def mock_summarize(payload: Mapping) -> dict:
    items = payload["items"]
    titles = [it.get("title") or "" for it in items]
    ranked = [_content_terms(it.get("summary") or it.get("content") or "") for it in items]
    if len(titles) == 1:
        title = titles[0]
    else:
        title = f"{titles[0]} - {titles[-1]}"
    return {"title": title or "Overview", "summary": ", ".join(interleave(ranked))}


def mock_segment(payload: Mapping) -> dict:
    from .segmenter import structural_spans

    spans = structural_spans(
        payload["text"], payload.get("target_chunk_tokens", 256), payload.get("max_chunk_tokens", 1024)
    )
    return {"boundaries": [start for start, _ in spans[1:]]}


def _entry_terms(entry: Mapping) -> set[str]:
    return set(terms(" ".join(entry.get("toc", [])) + " " + (entry.get("summary") or "")))


def mock_select_docs(payload: Mapping) -> dict:
    wanted = key_terms(payload.get("query", ""))
    picked = []
    for doc in payload["documents"]:
        if any(wanted & _entry_terms(e) for e in doc["entries"]):
            picked.append(doc["doc_id"])
    return {"doc_ids": picked}


def mock_navigate(payload: Mapping) -> dict:
    wanted = key_terms(payload.get("query", ""))
    entries = payload["nodes"]
    parent = {(e["doc_id"], e["node_id"]): e.get("parent_id") for e in entries}
    matched = [(e["doc_id"], e["node_id"]) for e in entries if wanted & _entry_terms(e)]
    covered = set()
    # keep only the most specific matches
    for doc_id, node_id in matched:
        up = parent.get((doc_id, node_id))
        while up is not None:
            covered.add((doc_id, up))
            up = parent.get((doc_id, up))
    return {"nodes": [{"doc_id": d, "node_id": n} for d, n in matched if (d, n) not in covered]}


DEFAULTS: dict[str, Callable[[Mapping], Any]] = {
    "segment": mock_segment,
    "structure/outline": mock_outline,
    "structure/summarize": mock_summarize,
    "select_docs": mock_select_docs,
    "navigate_nodes": mock_navigate,
}


@dataclass
class MockRule:
    """Canned reply for ``role`` when ``match`` accepts the request.

    ``match`` is a regex searched in the user prompt text, a predicate over
    the structured payload, or None (always).  ``response`` is a JSON value,
    a raw string returned verbatim, or a callable of the payload.
    """

    role: str
    response: Union[Any, Callable[[Mapping], Any]]
    match: Union[None, str, Callable[[Mapping], bool]] = None

    def accepts(self, role: str, prompt: str, payload: Mapping) -> bool:
        if role != self.role:
            return False
        if self.match is None:
            return True
        if callable(self.match):
            return bool(self.match(payload))
        return re.search(self.match, prompt) is not None


@dataclass
class MockScript:
    rules: list[MockRule] = field(default_factory=list)
    fail_roles: frozenset = frozenset()
    defaults: Optional[Mapping[str, Callable[[Mapping], Any]]] = None


class MockBackend:
    """Backend answering from a :class:`MockScript`; same request, same reply."""

    def __init__(self, script: Optional[MockScript] = None):
        self.script = script or MockScript()
        self.calls: Counter = Counter()

    def complete(self, role: str, messages: list[dict], payload: Mapping) -> str:
        self.calls[role] += 1
        if role in self.script.fail_roles:
            raise GatewayError(f"injected failure for role {role!r}")
        prompt = "\n".join(m["content"] for m in messages if m["role"] == "user")
        for rule in self.script.rules:
            if rule.accepts(role, prompt, payload):
                resp = rule.response(payload) if callable(rule.response) else rule.response
                return resp if isinstance(resp, str) else json.dumps(resp, sort_keys=True)
        key = f"structure/{payload.get('task', 'outline')}" if role == "structure" else role
        handler = (self.script.defaults or {}).get(key) or DEFAULTS[key]
        return json.dumps(handler(payload), sort_keys=True, ensure_ascii=False)
