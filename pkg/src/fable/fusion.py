"""Node-level fusion and budget control."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import InvalidArgumentError, NotFoundError
from .forest import Chunk, Forest
from .tokenizer import DEFAULT_TOKENIZER, Tokenizer

Key = tuple[str, str]


@dataclass
class FusedNodes:
    nodes: list[Key]
    provenance: dict[Key, str]
    removed: list[Key]
    chunks: list[Chunk]


def _resolve(forest: Forest, keys: Iterable[Key]) -> list[Key]:
    out = []
    for key in keys:
        doc_id, node_id = key
        tree = forest.tree(doc_id)
        if node_id not in tree.nodes:
            raise NotFoundError(f"unknown node {doc_id}/{node_id}")
        out.append((doc_id, node_id))
    return out


def _docs_in_order(keys: Iterable[Key], exclude=()) -> list[str]:
    out: list[str] = []
    for doc_id, _ in keys:
        if doc_id not in out and doc_id not in exclude:
            out.append(doc_id)
    return out


def fuse_nodes(n_llm: Sequence[Key], n_treexp: Sequence[Key], forest: Forest) -> FusedNodes:
    """Ancestor-descendant dedup, LLM-first document partition, document-order output.

    Documents are ordered by first appearance of a surviving node in the
    LLM selection, then by first appearance in the TreeExpansion ranking.
    Each document contributes one contiguous segment.
    """
    n_llm = _resolve(forest, n_llm)
    n_treexp = _resolve(forest, n_treexp)
    union = list(dict.fromkeys([*n_llm, *n_treexp]))
    present = set(union)
    survivors, removed = [], []
    for doc_id, node_id in union:
        anc = forest.trees[doc_id].ancestors(node_id)
        (removed if any((doc_id, a) in present for a in anc) else survivors).append((doc_id, node_id))
    alive = set(survivors)
    llm_set, tx_set = set(n_llm), set(n_treexp)
    provenance = {
        k: "both" if k in llm_set and k in tx_set else ("llm" if k in llm_set else "treexp") for k in survivors
    }
    docs_llm = _docs_in_order(k for k in n_llm if k in alive)
    docs_tx = _docs_in_order((k for k in n_treexp if k in alive), exclude=docs_llm)
    ordered: list[Key] = []
    chunks: list[Chunk] = []
    seen: set[tuple[str, str]] = set()
    for doc_id in docs_llm + docs_tx:
        tree = forest.trees[doc_id]
        mine = sorted((k for k in survivors if k[0] == doc_id), key=lambda k: (tree.position(k[1]), k[1]))
        ordered.extend(mine)
        for _, node_id in mine:
            for c in tree.subtree_chunks(node_id):
                if (doc_id, c.chunk_id) not in seen:
                    seen.add((doc_id, c.chunk_id))
                    chunks.append(c)
    return FusedNodes(ordered, provenance, removed, chunks)


def node_fusion(n_llm: Sequence[Key], n_treexp: Sequence[Key], forest: Forest) -> list[Chunk]:
    return fuse_nodes(n_llm, n_treexp, forest).chunks


@dataclass
class BudgetResult:
    chunks: list[Chunk]
    spent: int
    remaining: int
    lengths: list[int] = field(default_factory=list)
    dropped: int = 0

    @property
    def empty_flag(self) -> bool:
        """True when there was input but nothing fit."""
        return not self.chunks and self.dropped > 0


def budget_control(
    chunks: Sequence[Chunk],
    budget: int,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
    skip: bool = False,
) -> BudgetResult:
    """Longest prefix whose summed token lengths fit ``budget``.

    With ``skip=True`` chunks that do not fit are skipped instead of ending
    the scan (order is still preserved).
    """
    if budget < 0:
        raise InvalidArgumentError("budget must be >= 0")
    kept: list[Chunk] = []
    lengths: list[int] = []
    spent = 0
    for i, c in enumerate(chunks):
        n = tokenizer.count(c.content)
        if spent + n <= budget:
            kept.append(c)
            lengths.append(n)
            spent += n
        elif not skip:
            break
    return BudgetResult(kept, spent, budget - spent, lengths, len(chunks) - len(kept))
