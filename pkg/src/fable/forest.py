"""Chunks, semantic trees and forests.

A :class:`SemanticTree` is one document's hierarchy: internal nodes carry a
ToC title and a summary of their descendants, leaves point at one original
:class:`Chunk`.  A :class:`Forest` is the collection-level index unit.  Both
are treated as immutable once built.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, Mapping, Optional, Sequence

from .errors import (
    FormatVersionError,
    InvalidArgumentError,
    InvariantError,
    InvariantViolationError,
    MalformedFileError,
    NotFoundError,
)

FORMAT_VERSION = 1

ROOT = "root"
SECTION = "section"
SUBSECTION = "subsection"
LEAF = "leaf"
NODE_KINDS = (ROOT, SECTION, SUBSECTION, LEAF)

TOKENIZER_KINDS = ("approx_bytes", "whitespace", "external")


def kind_for_depth(depth: int) -> str:
    """Kind of an *internal* node at ``depth`` (root has depth 1)."""
    if depth == 1:
        return ROOT
    if depth == 2:
        return SECTION
    return SUBSECTION


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    content: str
    doc_id: str

    def __post_init__(self):
        if not self.content:
            raise InvalidArgumentError(f"chunk {self.doc_id}/{self.chunk_id} has empty content")


@dataclass(frozen=True)
class TreeNode:
    node_id: str
    kind: str
    title: Optional[str] = None
    summary: Optional[str] = None
    chunk_ref: Optional[str] = None
    children: tuple[str, ...] = ()

    @property
    def is_leaf(self) -> bool:
        return self.kind == LEAF


@dataclass(frozen=True)
class RetrievalConfig:
    """Query-time and build-time tunables."""

    max_depth: int = 4
    hierarchy_threshold: int = 2
    k_doc: int = 5
    budget: int = 8192
    tokenizer: str = "approx_bytes"
    tokenizer_name: Optional[str] = None

    def __post_init__(self):
        if self.max_depth < 2:
            # root + one leaf is the smallest valid tree
            raise InvalidArgumentError("max_depth must be >= 2")
        if not 1 <= self.hierarchy_threshold <= self.max_depth:
            raise InvalidArgumentError("hierarchy_threshold must satisfy 1 <= L <= max_depth")
        if self.k_doc < 1:
            raise InvalidArgumentError("k_doc must be >= 1")
        if self.budget < 1:
            raise InvalidArgumentError("budget must be >= 1")
        if self.tokenizer not in TOKENIZER_KINDS:
            raise InvalidArgumentError(f"unknown tokenizer {self.tokenizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    def make_tokenizer(self):
        from .tokenizer import Tokenizer

        return Tokenizer(self.tokenizer, self.tokenizer_name)


@dataclass(frozen=True, eq=True)
class SemanticTree:
    doc_id: str
    nodes: Mapping[str, TreeNode]
    root_id: str
    max_depth: int
    chunks: tuple[Chunk, ...]

    __hash__ = None  # type: ignore[assignment]

    # -- derived structure, computed once ----------------------------------

    @cached_property
    def parent(self) -> dict[str, Optional[str]]:
        parent: dict[str, Optional[str]] = {self.root_id: None}
        stack = [self.root_id]
        while stack:
            nid = stack.pop()
            for child in self._node(nid).children:
                if child in parent:
                    raise InvariantError(f"{self.doc_id}: node {child} reached twice (cycle or shared child)")
                parent[child] = nid
                stack.append(child)
        return parent

    @cached_property
    def _depths(self) -> dict[str, int]:
        depths = {self.root_id: 1}
        for nid in self.preorder():
            for child in self.nodes[nid].children:
                depths[child] = depths[nid] + 1
        return depths

    @cached_property
    def chunk_map(self) -> dict[str, Chunk]:
        return {c.chunk_id: c for c in self.chunks}

    @cached_property
    def chunk_position(self) -> dict[str, int]:
        return {c.chunk_id: i for i, c in enumerate(self.chunks)}

    @cached_property
    def leaf_order(self) -> list[str]:
        """Leaf node ids in in-order (left to right) traversal."""
        return [nid for nid in self.preorder() if self.nodes[nid].is_leaf]

    @cached_property
    def _first_leaf_pos(self) -> dict[str, int]:
        pos: dict[str, int] = {}
        for nid in reversed(self.preorder()):
            node = self.nodes[nid]
            if node.is_leaf:
                pos[nid] = self.chunk_position.get(node.chunk_ref, -1)
            elif node.children:
                pos[nid] = pos[node.children[0]]
            else:
                pos[nid] = len(self.chunks)
        return pos

    def _node(self, node_id: str) -> TreeNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise NotFoundError(f"{self.doc_id}: unknown node {node_id!r}") from None

    def node(self, node_id: str) -> TreeNode:
        return self._node(node_id)

    def preorder(self, start: Optional[str] = None) -> list[str]:
        out = []
        seen = set()
        stack = [start if start is not None else self.root_id]
        while stack:
            nid = stack.pop()
            if nid in seen:
                raise InvariantError(f"{self.doc_id}: node {nid} reached twice (cycle or shared child)")
            seen.add(nid)
            out.append(nid)
            stack.extend(reversed(self._node(nid).children))
        return out

    def internal_nodes(self) -> list[str]:
        return [nid for nid in self.preorder() if not self.nodes[nid].is_leaf]

    # -- structural queries ------------------------------------------------

    def depth(self, node_id: str) -> int:
        self._node(node_id)
        return self._depths[node_id]

    @property
    def height(self) -> int:
        """depth(T): the largest node depth in the tree."""
        return max(self._depths.values())

    def ancestors(self, node_id: str) -> list[str]:
        self._node(node_id)
        out = []
        cur = self.parent[node_id]
        while cur is not None:
            out.append(cur)
            cur = self.parent[cur]
        out.reverse()
        return out

    def descendants(self, node_id: str) -> set[str]:
        return set(self.preorder(node_id)[1:])

    def toc_path(self, node_id: str) -> list[str]:
        node = self._node(node_id)
        if node.is_leaf:
            raise InvalidArgumentError(f"{self.doc_id}: leaf {node_id} has no title")
        return [self.nodes[a].title or "" for a in self.ancestors(node_id)] + [node.title or ""]

    def subtree_chunks(self, node_id: str) -> list[Chunk]:
        return [
            self.chunk_map[self.nodes[nid].chunk_ref]
            for nid in self.preorder(node_id)
            if self.nodes[nid].is_leaf
        ]

    def position(self, node_id: str) -> int:
        """Document position of the first chunk under ``node_id``."""
        self._node(node_id)
        return self._first_leaf_pos[node_id]

    def content(self) -> str:
        return "\n\n".join(c.content for c in self.chunks)

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        """Raise :class:`InvariantError` unless every tree invariant holds."""
        if self.root_id not in self.nodes:
            raise InvariantError(f"{self.doc_id}: root {self.root_id!r} missing")
        for nid, node in self.nodes.items():
            if nid != node.node_id:
                raise InvariantError(f"{self.doc_id}: node keyed {nid!r} has id {node.node_id!r}")
            if node.kind not in NODE_KINDS:
                raise InvariantError(f"{self.doc_id}: node {nid} has unknown kind {node.kind!r}")
            if node.is_leaf:
                if node.chunk_ref is None or node.children:
                    raise InvariantError(f"{self.doc_id}: leaf {nid} must have chunk_ref and no children")
            else:
                if node.chunk_ref is not None or node.title is None or node.summary is None:
                    raise InvariantError(f"{self.doc_id}: internal node {nid} malformed")
                if not node.children and nid != self.root_id:
                    raise InvariantError(f"{self.doc_id}: internal node {nid} has no children")
            for child in node.children:
                if child not in self.nodes:
                    raise InvariantError(f"{self.doc_id}: node {nid} has dangling child {child!r}")
        parent = self.parent
        if len(parent) != len(self.nodes):
            raise InvariantError(f"{self.doc_id}: {len(self.nodes) - len(parent)} unreachable node(s)")
        for nid in self.nodes:
            node = self.nodes[nid]
            d = self._depths[nid]
            if d > self.max_depth:
                raise InvariantError(f"{self.doc_id}: node {nid} at depth {d} exceeds D={self.max_depth}")
            if not node.is_leaf and node.kind != kind_for_depth(d):
                raise InvariantError(f"{self.doc_id}: node {nid} kind {node.kind} at depth {d}")
        if self.nodes[self.root_id].is_leaf:
            raise InvariantError(f"{self.doc_id}: root must be internal")
        ids = [c.chunk_id for c in self.chunks]
        if len(set(ids)) != len(ids):
            raise InvariantError(f"{self.doc_id}: duplicate chunk ids")
        for c in self.chunks:
            if c.doc_id != self.doc_id:
                raise InvariantError(f"{self.doc_id}: chunk {c.chunk_id} belongs to {c.doc_id}")
        refs = [self.nodes[nid].chunk_ref for nid in self.leaf_order]
        for ref in refs:
            if ref not in self.chunk_map:
                raise InvariantError(f"{self.doc_id}: dangling chunk_ref {ref!r}")
        if refs != ids:
            raise InvariantError(f"{self.doc_id}: leaves do not match document chunks in order")


def depth(tree: SemanticTree, node_id: str) -> int:
    return tree.depth(node_id)


def toc_path(tree: SemanticTree, node_id: str) -> list[str]:
    return tree.toc_path(node_id)


def subtree_chunks(tree: SemanticTree, node_id: str) -> list[Chunk]:
    return tree.subtree_chunks(node_id)


def ancestors(tree: SemanticTree, node_id: str) -> list[str]:
    return tree.ancestors(node_id)


def descendants(tree: SemanticTree, node_id: str) -> set[str]:
    return tree.descendants(node_id)


@dataclass(frozen=True)
class Forest:
    trees: Mapping[str, SemanticTree] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION
    meta: Mapping = field(default_factory=dict)

    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def from_trees(cls, trees: Sequence[SemanticTree], meta: Optional[Mapping] = None) -> "Forest":
        out: dict[str, SemanticTree] = {}
        for t in trees:
            if t.doc_id in out:
                raise InvalidArgumentError(f"duplicate doc_id {t.doc_id!r}")
            out[t.doc_id] = t
        return cls(out, FORMAT_VERSION, dict(meta or {}))

    def with_tree(self, tree: SemanticTree) -> "Forest":
        """A new forest with ``tree`` appended (document-granularity increment)."""
        if tree.doc_id in self.trees:
            raise InvalidArgumentError(f"duplicate doc_id {tree.doc_id!r}")
        return Forest({**self.trees, tree.doc_id: tree}, self.format_version, self.meta)

    @cached_property
    def chunks(self) -> dict[tuple[str, str], Chunk]:
        return {(t.doc_id, c.chunk_id): c for t in self.trees.values() for c in t.chunks}

    @property
    def doc_ids(self) -> list[str]:
        return list(self.trees)

    def __len__(self) -> int:
        return len(self.trees)

    def __iter__(self) -> Iterator[SemanticTree]:
        return iter(self.trees.values())

    def tree(self, doc_id: str) -> SemanticTree:
        try:
            return self.trees[doc_id]
        except KeyError:
            raise NotFoundError(f"unknown document {doc_id!r}") from None

    def validate(self) -> None:
        for doc_id, tree in self.trees.items():
            if doc_id != tree.doc_id:
                raise InvariantError(f"tree keyed {doc_id!r} has doc_id {tree.doc_id!r}")
            tree.validate()


# -- persistence ----------------------------------------------------------------


def _dump(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def iter_records(forest: Forest) -> Iterator[dict]:
    yield {"t": "meta", "format_version": forest.format_version, **{k: v for k, v in forest.meta.items()
                                                                  if k not in ("t", "format_version")}}
    for tree in forest:
        yield {"t": "tree", "doc_id": tree.doc_id, "root_id": tree.root_id, "max_depth": tree.max_depth}
        for c in tree.chunks:
            yield {"t": "chunk", "doc_id": tree.doc_id, "chunk_id": c.chunk_id, "content": c.content}
        for nid in tree.preorder():
            node = tree.nodes[nid]
            rec = {"t": "node", "doc_id": tree.doc_id, "node_id": nid, "kind": node.kind}
            if node.is_leaf:
                rec["chunk_ref"] = node.chunk_ref
            else:
                rec.update(title=node.title, summary=node.summary, children=list(node.children))
            yield rec


def save_forest(forest: Forest, path) -> None:
    """Write ``forest`` as UTF-8 JSON lines (meta, then tree/chunk/node records)."""
    forest.validate()
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for rec in iter_records(forest):
            fh.write(_dump(rec))
            fh.write("\n")


def _require(rec: dict, *keys: str, lineno: int):
    missing = [k for k in keys if k not in rec]
    if missing:
        raise MalformedFileError(f"line {lineno}: {rec.get('t')!r} record missing {missing}")
    return [rec[k] for k in keys]


def load_forest(path) -> Forest:
    """Read a forest written by :func:`save_forest`.

    Raises :class:`FormatVersionError`, :class:`MalformedFileError` or
    :class:`InvariantViolationError` depending on what is wrong.
    """
    path = Path(path)
    meta = None
    headers: dict[str, dict] = {}
    chunks: dict[str, list[Chunk]] = {}
    nodes: dict[str, dict[str, TreeNode]] = {}
    try:
        fh = path.open("r", encoding="utf-8")
    except OSError as exc:
        raise MalformedFileError(f"{path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedFileError(f"{path}:{lineno}: {exc}") from exc
            if not isinstance(rec, dict) or "t" not in rec:
                raise MalformedFileError(f"{path}:{lineno}: record is not a tagged object")
            tag = rec["t"]
            if meta is None:
                if tag != "meta":
                    raise MalformedFileError(f"{path}: first record must be 'meta', got {tag!r}")
                (version,) = _require(rec, "format_version", lineno=lineno)
                if version != FORMAT_VERSION:
                    raise FormatVersionError(f"{path}: format_version {version!r}, supported {FORMAT_VERSION}")
                meta = {k: v for k, v in rec.items() if k not in ("t", "format_version")}
                continue
            if tag == "tree":
                doc_id, root_id, max_depth = _require(rec, "doc_id", "root_id", "max_depth", lineno=lineno)
                if doc_id in headers:
                    raise InvariantViolationError(f"{path}:{lineno}: duplicate tree {doc_id!r}")
                headers[doc_id] = {"root_id": root_id, "max_depth": max_depth}
                chunks[doc_id] = []
                nodes[doc_id] = {}
            elif tag in ("chunk", "node"):
                doc_id = _require(rec, "doc_id", lineno=lineno)[0]
                if doc_id not in headers:
                    raise MalformedFileError(f"{path}:{lineno}: {tag} record before its tree header")
                if tag == "chunk":
                    chunk_id, content = _require(rec, "chunk_id", "content", lineno=lineno)
                    try:
                        chunks[doc_id].append(Chunk(chunk_id, content, doc_id))
                    except InvalidArgumentError as exc:
                        raise InvariantViolationError(f"{path}:{lineno}: {exc}") from exc
                else:
                    node_id, kind = _require(rec, "node_id", "kind", lineno=lineno)
                    if node_id in nodes[doc_id]:
                        raise InvariantViolationError(f"{path}:{lineno}: duplicate node {doc_id}/{node_id}")
                    nodes[doc_id][node_id] = TreeNode(
                        node_id=node_id,
                        kind=kind,
                        title=rec.get("title"),
                        summary=rec.get("summary"),
                        chunk_ref=rec.get("chunk_ref"),
                        children=tuple(rec.get("children") or ()),
                    )
            elif tag == "meta":
                raise MalformedFileError(f"{path}:{lineno}: second meta record")
            else:
                raise MalformedFileError(f"{path}:{lineno}: unknown record tag {tag!r}")
    if meta is None:
        raise MalformedFileError(f"{path}: empty file (no meta record)")
    trees = []
    for doc_id, hdr in headers.items():
        trees.append(
            SemanticTree(doc_id, nodes[doc_id], hdr["root_id"], hdr["max_depth"], tuple(chunks[doc_id]))
        )
    forest = Forest({t.doc_id: t for t in trees}, FORMAT_VERSION, meta)
    try:
        forest.validate()
    except InvariantError as exc:
        raise InvariantViolationError(f"{path}: invariant violation: {exc}") from exc
    return forest
