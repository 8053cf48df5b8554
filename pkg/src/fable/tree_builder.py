"""Build semantic trees from chunk sequences.

The structuring backend proposes a nested outline top-down; this module
enforces the structural constraints (:func:`validate_and_repair`), fills any
missing titles/summaries bottom-up, and merges per-part trees for documents
too long for one structuring call.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

from .errors import GatewayError, InvalidArgumentError, StructuringError
from .forest import LEAF, Chunk, RetrievalConfig, SemanticTree, TreeNode, kind_for_depth
from .tokenizer import DEFAULT_TOKENIZER, Tokenizer

log = logging.getLogger(__name__)

Summarizer = Callable[[list[dict]], dict]
PART_CONTEXT_FRACTION = 0.6
LEAF_PREVIEW_CHARS = 600


@dataclass
class _Draft:
    title: Optional[str] = None
    summary: Optional[str] = None
    children: list[Union["_Draft", str]] = field(default_factory=list)


def _text(value) -> Optional[str]:
    return value if isinstance(value, str) and value.strip() else None


def _parse(obj, active: set[int]) -> Union[_Draft, str, None]:
    if not isinstance(obj, dict) or id(obj) in active:
        return None
    if "chunk_id" in obj:
        return obj["chunk_id"] if isinstance(obj["chunk_id"], str) else None
    draft = _Draft(_text(obj.get("title")), _text(obj.get("summary")))
    kids = obj.get("children")
    if isinstance(kids, list):
        active.add(id(obj))
        for kid in kids:
            parsed = _parse(kid, active)
            if parsed is not None:
                draft.children.append(parsed)
        active.discard(id(obj))
    return draft


def _leaf_slots(node: _Draft, out: list) -> list[tuple[_Draft, int, str]]:
    """(parent, index, chunk_id) for every leaf, left to right."""
    for i, child in enumerate(node.children):
        if isinstance(child, str):
            out.append((node, i, child))
        else:
            _leaf_slots(child, out)
    return out


def _drop_unknown(node: _Draft, known: set[str]) -> int:
    dropped = 0
    kept = []
    for child in node.children:
        if isinstance(child, str):
            if child in known:
                kept.append(child)
            else:
                dropped += 1
        else:
            dropped += _drop_unknown(child, known)
            kept.append(child)
    node.children = kept
    return dropped


def _insert_missing(root: _Draft, order: list[str]) -> int:
    """Insert absent chunks after the leaf of the nearest present predecessor."""
    inserted = 0
    for idx, cid in enumerate(order):
        slots = _leaf_slots(root, [])
        present = {c: (p, i) for p, i, c in reversed(slots)}  # first occurrence wins
        if cid in present:
            continue
        prev = next((order[j] for j in range(idx - 1, -1, -1) if order[j] in present), None)
        if prev is not None:
            parent, i = present[prev]
            parent.children.insert(i + 1, cid)
        else:
            nxt = next((order[j] for j in range(idx + 1, len(order)) if order[j] in present), None)
            if nxt is not None:
                parent, i = present[nxt]
                parent.children.insert(i, cid)
            else:
                root.children.append(cid)
        inserted += 1
    return inserted


def _leaves_of(node: _Draft) -> list[str]:
    return [c for _, _, c in _leaf_slots(node, [])]


def _flatten(node: _Draft, depth: int, max_depth: int) -> int:
    """Splice internal descendants so that no leaf sits deeper than ``max_depth``."""
    spliced = 0
    if depth + 1 >= max_depth:
        flat: list[Union[_Draft, str]] = []
        for child in node.children:
            if isinstance(child, str):
                flat.append(child)
            else:
                flat.extend(_leaves_of(child))
                spliced += 1
        node.children = flat
        return spliced
    for child in node.children:
        if isinstance(child, _Draft):
            spliced += _flatten(child, depth + 1, max_depth)
    return spliced


def _dedup(node: _Draft, seen: set[str]) -> int:
    removed = 0
    kept = []
    for child in node.children:
        if isinstance(child, str):
            if child in seen:
                removed += 1
                continue
            seen.add(child)
        else:
            removed += _dedup(child, seen)
        kept.append(child)
    node.children = kept
    return removed


def _remove_chunks(node: _Draft, doomed: set[str]) -> None:
    node.children = [c for c in node.children if not (isinstance(c, str) and c in doomed)]
    for child in node.children:
        if isinstance(child, _Draft):
            _remove_chunks(child, doomed)


def _prune_empty(node: _Draft) -> None:
    kept = []
    for child in node.children:
        if isinstance(child, _Draft):
            _prune_empty(child)
            if not child.children:
                continue
        kept.append(child)
    node.children = kept


def _longest_increasing(positions: list[int]) -> set[int]:
    """Indices (into ``positions``) of one longest strictly increasing subsequence."""
    import bisect

    tails: list[int] = []
    tail_idx: list[int] = []
    prev = [-1] * len(positions)
    for i, p in enumerate(positions):
        k = bisect.bisect_left(tails, p)
        if k == len(tails):
            tails.append(p)
            tail_idx.append(i)
        else:
            tails[k] = p
            tail_idx[k] = i
        prev[i] = tail_idx[k - 1] if k else -1
    keep = set()
    i = tail_idx[-1] if tail_idx else -1
    while i != -1:
        keep.add(i)
        i = prev[i]
    return keep


def _fill_metadata(node: _Draft, chunk_map: dict[str, Chunk], summarize: Optional[Summarizer]) -> None:
    for child in node.children:
        if isinstance(child, _Draft):
            _fill_metadata(child, chunk_map, summarize)
    if node.title is not None and node.summary is not None:
        return
    generated = {"title": "", "summary": ""}
    if summarize is not None:
        items = [
            {"title": "", "content": chunk_map[c].content[:LEAF_PREVIEW_CHARS]}
            if isinstance(c, str)
            else {"title": c.title or "", "summary": c.summary or ""}
            for c in node.children
        ]
        generated = summarize(items)
    if node.title is None:
        node.title = generated.get("title") or ""
    if node.summary is None:
        node.summary = generated.get("summary") or ""


def _to_tree(root: _Draft, chunks: Sequence[Chunk], doc_id: str, max_depth: int) -> SemanticTree:
    nodes: dict[str, TreeNode] = {}
    counter = iter(range(10**9))

    def emit(item, depth: int) -> str:
        nid = f"n{next(counter):04d}"
        if isinstance(item, str):
            nodes[nid] = TreeNode(nid, LEAF, chunk_ref=item)
            return nid
        placeholder = nid
        nodes[placeholder] = None  # reserve preorder slot
        kids = tuple(emit(c, depth + 1) for c in item.children)
        nodes[placeholder] = TreeNode(
            placeholder, kind_for_depth(depth), item.title or "", item.summary or "", None, kids
        )
        return placeholder

    root_id = emit(root, 1)
    tree = SemanticTree(doc_id, nodes, root_id, max_depth, tuple(chunks))
    tree.validate()
    return tree


def repair_report(candidate, chunks: Sequence[Chunk], max_depth: int):
    """Apply the repair pipeline; returns ``(draft, counts)`` without building a tree."""
    if not isinstance(candidate, dict) or "chunk_id" in candidate:
        raise StructuringError("outline has no internal root node")
    root = _parse(candidate, set())
    assert isinstance(root, _Draft)
    order = [c.chunk_id for c in chunks]
    counts = {
        "unknown_dropped": _drop_unknown(root, set(order)),
        "missing_inserted": _insert_missing(root, order),
        "levels_spliced": _flatten(root, 1, max_depth),
        "duplicates_removed": _dedup(root, set()),
        "reordered": 0,
    }
    pos = {cid: i for i, cid in enumerate(order)}
    leaves = _leaves_of(root)
    if leaves != order:
        keep = _longest_increasing([pos[c] for c in leaves])
        doomed = {c for i, c in enumerate(leaves) if i not in keep}
        _remove_chunks(root, doomed)
        counts["reordered"] = len(doomed)
        _insert_missing(root, order)
    _prune_empty(root)
    if _leaves_of(root) != order:
        raise StructuringError("could not restore document leaf order")
    return root, counts


def validate_and_repair(
    candidate,
    chunks: Sequence[Chunk],
    doc_id: Optional[str] = None,
    max_depth: int = 4,
    summarize: Optional[Summarizer] = None,
) -> SemanticTree:
    """Turn a structuring outline into a valid :class:`SemanticTree`.

    Repairs, in order: drop references to unknown chunks; insert missing
    chunks after their nearest present predecessor; splice levels beyond
    ``max_depth``; drop repeated chunk references (first wins).  Leaves that
    are still out of document order are then moved back like missing chunks.
    Internal nodes left without children are pruned, and missing titles or
    summaries are generated bottom-up with ``summarize``.
    """
    if not chunks:
        raise InvalidArgumentError("cannot build a tree over zero chunks")
    doc_id = doc_id or chunks[0].doc_id
    root, counts = repair_report(candidate, chunks, max_depth)
    if any(counts.values()):
        log.info("%s: outline repaired %s", doc_id, {k: v for k, v in counts.items() if v})
    _fill_metadata(root, {c.chunk_id: c for c in chunks}, summarize)
    return _to_tree(root, chunks, doc_id, max_depth)


def gateway_summarizer(gateway, doc_id: str) -> Summarizer:
    def summarize(items: list[dict]) -> dict:
        try:
            return gateway.call("structure", {"task": "summarize", "doc_id": doc_id, "items": items}).data
        except GatewayError as exc:
            raise StructuringError(f"{doc_id}: summary generation failed: {exc}") from exc

    return summarize


def _check_chunks(chunks: Sequence[Chunk], doc_id: str) -> None:
    if not chunks:
        raise InvalidArgumentError(f"{doc_id}: no chunks")
    for c in chunks:
        if c.doc_id != doc_id:
            raise InvalidArgumentError(f"chunk {c.chunk_id} belongs to {c.doc_id}, not {doc_id}")


def build_tree(chunks: Sequence[Chunk], doc_id: str, config: RetrievalConfig, gateway) -> SemanticTree:
    """One structuring call over all chunks, then validation/repair."""
    _check_chunks(chunks, doc_id)
    payload = {
        "task": "outline",
        "doc_id": doc_id,
        "max_depth": config.max_depth,
        "chunks": [{"chunk_id": c.chunk_id, "content": c.content} for c in chunks],
    }
    try:
        outline = gateway.call("structure", payload).data
    except GatewayError as exc:
        raise StructuringError(f"{doc_id}: structuring call failed: {exc}") from exc
    return validate_and_repair(outline, chunks, doc_id, config.max_depth, gateway_summarizer(gateway, doc_id))


def _draft_of(tree: SemanticTree, node_id: str) -> Union[_Draft, str]:
    node = tree.nodes[node_id]
    if node.is_leaf:
        return node.chunk_ref
    return _Draft(node.title, node.summary, [_draft_of(tree, c) for c in node.children])


def merge_trees(partials: Sequence[SemanticTree], doc_id: str, gateway=None) -> SemanticTree:
    """Concatenate partial trees under one fresh root.

    Partial roots are dissolved: their children become the merged root's
    children in part order, so merging never adds a level.  The root title
    and summary are regenerated from the children's titles and summaries.
    """
    if not partials:
        raise InvalidArgumentError("merge_trees needs at least one partial tree")
    seen: set[str] = set()
    chunks: list[Chunk] = []
    for t in partials:
        if t.doc_id != doc_id:
            raise InvalidArgumentError(f"partial for {t.doc_id!r} passed to merge of {doc_id!r}")
        for c in t.chunks:
            if c.chunk_id in seen:
                raise InvalidArgumentError(f"{doc_id}: chunk {c.chunk_id} appears in more than one partial")
            seen.add(c.chunk_id)
            chunks.append(c)
    max_depth = max(t.max_depth for t in partials)
    root = _Draft()
    for t in partials:
        root.children.extend(_draft_of(t, c) for c in t.nodes[t.root_id].children)
    summarize = gateway_summarizer(gateway, doc_id) if gateway is not None else None
    _fill_metadata(root, {c.chunk_id: c for c in chunks}, summarize)
    return _to_tree(root, chunks, doc_id, max_depth)


def split_parts(
    chunks: Sequence[Chunk], token_limit: int, tokenizer: Tokenizer = DEFAULT_TOKENIZER
) -> list[list[Chunk]]:
    """Consecutive parts, each as long as possible while total tokens <= token_limit."""
    parts: list[list[Chunk]] = []
    cur: list[Chunk] = []
    used = 0
    for c in chunks:
        n = tokenizer.count(c.content)
        if cur and used + n > token_limit:
            parts.append(cur)
            cur, used = [], 0
        cur.append(c)
        used += n
    if cur:
        parts.append(cur)
    return parts


def build_progressive(
    chunks: Sequence[Chunk],
    doc_id: str,
    config: RetrievalConfig,
    gateway,
    part_size: Optional[int] = None,
) -> SemanticTree:
    """Batch-wise construction: build each part independently, then merge.

    ``part_size`` is a chunk count; by default parts are as large as fits
    60% of the structuring model's context window.
    """
    _check_chunks(chunks, doc_id)
    if part_size is not None:
        if part_size < 1:
            raise InvalidArgumentError("part_size must be >= 1")
        parts = [list(chunks[i : i + part_size]) for i in range(0, len(chunks), part_size)]
    else:
        limit = int(gateway.spec.context_window * PART_CONTEXT_FRACTION)
        parts = split_parts(chunks, limit, gateway.tokenizer)
    if len(parts) == 1:
        return build_tree(parts[0], doc_id, config, gateway)
    workers = min(len(parts), gateway.spec.max_parallel)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        partials = list(pool.map(lambda p: build_tree(p, doc_id, config, gateway), parts))
    return merge_trees(partials, doc_id, gateway)
