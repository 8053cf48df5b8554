"""Budget-adaptive bi-path retrieval over a semantic forest.

Document level: an LLM path (ToC entries down to the hierarchy threshold)
and a vector path (exact top-K over every node embedding) are fused.  If the
fused documents fit the budget they are returned whole; otherwise node level
runs an LLM navigation path and TreeExpansion, fuses the node sets and
truncates to the budget.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ContextOverflowError, GatewayError, InvalidArgumentError
from .forest import Chunk, Forest, RetrievalConfig
from .fusion import budget_control, fuse_nodes
from .tokenizer import Tokenizer
from .vector_index import VectorIndex, docs_of

log = logging.getLogger(__name__)

Key = tuple[str, str]

MODES = ("auto", "docs", "llm-docs", "nodes", "llm-nodes", "treexp")
SEARCH_FANOUT = 4


@dataclass
class ScoredNode:
    key: Key
    s_sim: float
    s_inh: float
    s_child: float
    s: float
    provenance: str = "treexp"

    def as_list(self) -> list:
        return [self.key[0], self.key[1], self.s_sim, self.s_inh, self.s_child, self.s]


@dataclass
class RetrievalResult:
    stage: str
    status: str
    docs: list[dict]
    chunks: list[Chunk]
    token_count: int
    audit: dict = field(default_factory=dict)

    @property
    def chunk_keys(self) -> list[tuple[str, str]]:
        return [(c.doc_id, c.chunk_id) for c in self.chunks]

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "status": self.status,
            "docs": self.docs,
            "chunks": [{"doc_id": c.doc_id, "chunk_id": c.chunk_id} for c in self.chunks],
            "token_count": self.token_count,
            "audit": self.audit,
        }


# -- document level ------------------------------------------------------------


def _sharded_call(gateway, role: str, query: str, items: list, field_name: str, extra=None) -> list:
    """Call ``role`` over ``items``; halve and retry when the prompt overflows."""
    payload = {"query": query, field_name: items, **(extra or {})}
    try:
        return [gateway.call(role, payload).data]
    except ContextOverflowError:
        if len(items) <= 1:
            raise
        mid = len(items) // 2
        return _sharded_call(gateway, role, query, items[:mid], field_name, extra) + _sharded_call(
            gateway, role, query, items[mid:], field_name, extra
        )


def doc_selection_context(forest: Forest, threshold: int) -> list[dict]:
    docs = []
    for tree in forest:
        entries = [
            {"node_id": nid, "toc": tree.toc_path(nid), "summary": tree.nodes[nid].summary}
            for nid in tree.internal_nodes()
            if tree.depth(nid) <= threshold
        ]
        docs.append({"doc_id": tree.doc_id, "entries": entries})
    return docs


def select_docs_llm(query: str, forest: Forest, threshold: int, gateway, audit: Optional[dict] = None) -> list[str]:
    """LLM picks documents from their upper ToC levels (depth <= ``threshold``)."""
    audit = audit if audit is not None else {}
    if threshold < 1:
        raise InvalidArgumentError("hierarchy threshold must be >= 1")
    picked: list[str] = []
    dropped: list[str] = []
    try:
        replies = _sharded_call(gateway, "select_docs", query, doc_selection_context(forest, threshold), "documents")
    except GatewayError as exc:
        log.warning("LLM document selection failed: %s", exc)
        audit.update(selected=[], dropped=[], warning=f"gateway failure: {exc}")
        return []
    for data in replies:
        for doc_id in data["doc_ids"]:
            if doc_id not in forest.trees:
                dropped.append(doc_id)
            elif doc_id not in picked:
                picked.append(doc_id)
    audit.update(selected=picked, dropped=dropped, warning=None)
    return picked


def select_docs_vector(
    query_vector, index: VectorIndex, k_doc: int, audit: Optional[dict] = None
) -> list[str]:
    """Top ``SEARCH_FANOUT * k_doc`` node hits grouped to their best ``k_doc`` documents."""
    if len(index) == 0:
        return []
    hits = index.topk(query_vector, SEARCH_FANOUT * k_doc)
    docs = docs_of(hits, k_doc)
    if audit is not None:
        audit.update(hits=[[d, n, s] for (d, n), s in hits], selected=docs)
    return docs


def fuse_docs(d_llm: Sequence[str], d_vector: Sequence[str]) -> list[str]:
    """LLM picks first (their order), then vector-only picks (their order)."""
    return list(dict.fromkeys([*d_llm, *d_vector]))


@dataclass
class Route:
    stage: str
    total_tokens: int
    chunks: Optional[list[Chunk]] = None


def doc_tokens(forest: Forest, doc_id: str, tokenizer: Tokenizer) -> int:
    return sum(tokenizer.count(c.content) for c in forest.tree(doc_id).chunks)


def route(d_fusion: Sequence[str], forest: Forest, budget: int, tokenizer: Tokenizer) -> Route:
    """Whole documents when they fit ``budget`` (inclusive), else node level."""
    total = sum(doc_tokens(forest, d, tokenizer) for d in d_fusion)
    if total <= budget:
        return Route("doc_level", total, [c for d in d_fusion for c in forest.tree(d).chunks])
    return Route("node_level", total)


# -- node level ------------------------------------------------------------------


def navigation_context(forest: Forest, d_fusion: Sequence[str]) -> list[dict]:
    out = []
    for doc_id in d_fusion:
        tree = forest.tree(doc_id)
        for nid in tree.internal_nodes():
            out.append(
                {
                    "doc_id": doc_id,
                    "node_id": nid,
                    "parent_id": tree.parent[nid],
                    "toc": tree.toc_path(nid),
                    "summary": tree.nodes[nid].summary,
                }
            )
    return out


def navigate_nodes_llm(
    query: str, d_fusion: Sequence[str], forest: Forest, gateway, audit: Optional[dict] = None
) -> list[Key]:
    """LLM picks internal nodes of the fused documents (single shot over the ToC)."""
    audit = audit if audit is not None else {}
    if not d_fusion:
        audit.update(selected=[], dropped=[], warning=None)
        return []
    try:
        replies = _sharded_call(gateway, "navigate_nodes", query, navigation_context(forest, d_fusion), "nodes")
    except GatewayError as exc:
        log.warning("LLM node navigation failed: %s", exc)
        audit.update(selected=[], dropped=[], warning=f"gateway failure: {exc}")
        return []
    allowed = set(d_fusion)
    picked: list[Key] = []
    dropped: list[list[str]] = []
    for data in replies:
        for item in data["nodes"]:
            key = (item["doc_id"], item["node_id"])
            tree = forest.trees.get(key[0])
            ok = key[0] in allowed and tree is not None and key[1] in tree.nodes and not tree.nodes[key[1]].is_leaf
            if not ok:
                dropped.append(list(key))
            elif key not in picked:
                picked.append(key)
    audit.update(selected=[list(k) for k in picked], dropped=dropped, warning=None)
    return picked


def score_tree(tree, cosines: dict[str, float]) -> dict[str, ScoredNode]:
    """Composite relevance for every node of one tree.

    similarity = cosine / depth; inherited = best ancestor similarity (the
    node's own similarity at the root); child = mean composite over children
    (the node's own similarity at a leaf); composite = mean of the three.
    """
    sim: dict[str, float] = {}
    inh: dict[str, float] = {}
    best_above: dict[str, float] = {}
    order = tree.preorder()
    for nid in order:
        sim[nid] = cosines[nid] / tree.depth(nid)
        parent = tree.parent[nid]
        if parent is None:
            inh[nid] = sim[nid]
        else:
            inh[nid] = best_above[parent]
        best_above[nid] = sim[nid] if parent is None else max(best_above[parent], sim[nid])
    out: dict[str, ScoredNode] = {}
    for nid in reversed(order):
        node = tree.nodes[nid]
        if node.children:
            child = math.fsum(out[c].s for c in node.children) / len(node.children)
        else:
            child = sim[nid]
        out[nid] = ScoredNode((tree.doc_id, nid), sim[nid], inh[nid], child, (sim[nid] + inh[nid] + child) / 3)
    return out


def subtree_mass(tree, tokenizer: Tokenizer) -> dict[str, int]:
    mass: dict[str, int] = {}
    for nid in reversed(tree.preorder()):
        node = tree.nodes[nid]
        if node.is_leaf:
            mass[nid] = tokenizer.count(tree.chunk_map[node.chunk_ref].content)
        else:
            mass[nid] = sum(mass[c] for c in node.children)
    return mass


@dataclass
class Expansion:
    selected: list[ScoredNode]
    scores: dict[Key, ScoredNode]
    pruned: list[Key]
    spent: int


def expand(
    query_vector,
    d_fusion: Sequence[str],
    forest: Forest,
    index: VectorIndex,
    budget: int,
    tokenizer: Tokenizer,
) -> Expansion:
    """TreeExpansion with full bookkeeping (see :func:`tree_expansion`)."""
    scores: dict[Key, ScoredNode] = {}
    mass: dict[Key, int] = {}
    for doc_id in d_fusion:
        tree = forest.tree(doc_id)
        order = tree.preorder()
        cos = index.similarities(query_vector, [(doc_id, n) for n in order])
        for nid, sn in score_tree(tree, dict(zip(order, cos.tolist()))).items():
            scores[(doc_id, nid)] = sn
        for nid, m in subtree_mass(tree, tokenizer).items():
            mass[(doc_id, nid)] = m
    ranked = sorted(scores.values(), key=lambda sn: (-sn.s, sn.key))
    taken: dict[Key, ScoredNode] = {}
    pruned: list[Key] = []
    remaining = budget
    for sn in ranked:
        if remaining <= 0:
            break
        doc_id, nid = sn.key
        tree = forest.trees[doc_id]
        if any((doc_id, a) in taken for a in tree.ancestors(nid)):
            pruned.append(sn.key)
            continue
        below = [k for k in taken if k[0] == doc_id and nid in tree.ancestors(k[1])]
        cost = mass[sn.key] - sum(mass[k] for k in below)
        if cost <= remaining:
            for k in below:
                del taken[k]
                pruned.append(k)
            taken[sn.key] = sn
            remaining -= cost
    return Expansion(list(taken.values()), scores, pruned, budget - remaining)


def tree_expansion(
    query_vector,
    d_fusion: Sequence[str],
    forest: Forest,
    index: VectorIndex,
    budget: int,
    tokenizer: Tokenizer,
) -> list[ScoredNode]:
    """Score every node of the fused trees and greedily select under ``budget``.

    Nodes are visited by composite score (ties: doc_id, node_id).  A node is
    taken when its subtree token mass fits what is left; once taken, its
    descendants leave the pool, and a later-taken ancestor absorbs (and
    refunds) descendants taken earlier.
    """
    return expand(query_vector, d_fusion, forest, index, budget, tokenizer).selected


# -- orchestration ---------------------------------------------------------------


class Retriever:
    """Algorithm entry point bound to one frozen forest + index."""

    def __init__(
        self,
        forest: Forest,
        index: VectorIndex,
        embedder,
        gateway,
        config: RetrievalConfig = RetrievalConfig(),
        tokenizer: Optional[Tokenizer] = None,
        skip_budget: bool = False,
        parallel: bool = True,
    ):
        self.forest = forest
        self.index = index.freeze()
        self.embedder = embedder
        self.gateway = gateway
        self.config = config
        self.tokenizer = tokenizer or config.make_tokenizer()
        self.skip_budget = skip_budget
        self.parallel = parallel

    def _both(self, f, g):
        if not self.parallel:
            return f(), g()
        with ThreadPoolExecutor(max_workers=2) as pool:
            a, b = pool.submit(f), pool.submit(g)
            return a.result(), b.result()

    def retrieve(
        self,
        query: str,
        mode: str = "auto",
        budget: Optional[int] = None,
        k_doc: Optional[int] = None,
        hierarchy_threshold: Optional[int] = None,
    ) -> RetrievalResult:
        if mode not in MODES:
            raise InvalidArgumentError(f"unknown mode {mode!r}; expected one of {MODES}")
        budget = self.config.budget if budget is None else budget
        k_doc = self.config.k_doc if k_doc is None else k_doc
        threshold = self.config.hierarchy_threshold if hierarchy_threshold is None else hierarchy_threshold
        if budget < 1:
            raise InvalidArgumentError("budget must be >= 1")
        forest, tok = self.forest, self.tokenizer
        use_llm = mode != "treexp"
        use_vector = mode not in ("llm-docs", "llm-nodes")
        audit: dict = {"query": query, "mode": mode, "budget": budget, "k_doc": k_doc, "hierarchy_threshold": threshold}
        qvec = np.asarray(self.embedder.embed([query])[0], dtype=np.float64)

        llm_audit: dict = {"skipped": not use_llm}
        vec_audit: dict = {"skipped": not use_vector}
        d_llm, d_vec = self._both(
            lambda: select_docs_llm(query, forest, threshold, self.gateway, llm_audit) if use_llm else [],
            lambda: select_docs_vector(qvec, self.index, k_doc, vec_audit) if use_vector else [],
        )
        d_fusion = fuse_docs(d_llm, d_vec)
        audit["doc_level"] = {"llm": llm_audit, "vector": vec_audit, "fusion": d_fusion}
        docs = [
            {"doc_id": d, "paths": [p for p, src in (("llm", d_llm), ("vector", d_vec)) if d in src]}
            for d in d_fusion
        ]
        if not d_fusion:
            audit["routing"] = None
            return RetrievalResult("doc_level", "no_candidates", [], [], 0, audit)

        decision = route(d_fusion, forest, budget, tok)
        if mode in ("docs", "llm-docs"):
            stage = "doc_level"
        elif mode == "auto":
            stage = decision.stage
        else:
            stage = "node_level"
        audit["routing"] = {"total_tokens": decision.total_tokens, "budget": budget, "decision": decision.stage,
                            "stage": stage}

        if stage == "doc_level":
            ordered = [c for d in d_fusion for c in forest.tree(d).chunks]
        else:
            nav_audit: dict = {"skipped": mode == "treexp"}
            tx_audit: dict = {"skipped": mode == "llm-nodes"}

            def run_nav():
                if mode == "treexp":
                    return []
                return navigate_nodes_llm(query, d_fusion, forest, self.gateway, nav_audit)

            def run_tx():
                if mode == "llm-nodes":
                    return None
                return expand(qvec, d_fusion, forest, self.index, budget, tok)

            n_llm, exp = self._both(run_nav, run_tx)
            n_tx = [sn.key for sn in exp.selected] if exp is not None else []
            if exp is not None:
                tx_audit.update(
                    candidates=len(exp.scores),
                    scores=[sn.as_list() for sn in sorted(exp.scores.values(), key=lambda s: (-s.s, s.key))],
                    selected=[list(k) for k in n_tx],
                    pruned=[list(k) for k in exp.pruned],
                    spent=exp.spent,
                )
            fused = fuse_nodes(n_llm, n_tx, forest)
            audit["node_level"] = {
                "llm": nav_audit,
                "treexp": tx_audit,
                "fusion": {
                    "nodes": [[d, n, fused.provenance[(d, n)]] for d, n in fused.nodes],
                    "removed": [list(k) for k in fused.removed],
                    "chunks": len(fused.chunks),
                },
            }
            ordered = fused.chunks
        res = budget_control(ordered, budget, tok, skip=self.skip_budget)
        audit["budget_control"] = {
            "input_chunks": len(ordered),
            "kept": len(res.chunks),
            "spent": res.spent,
            "remaining": res.remaining,
            "empty": res.empty_flag,
        }
        assert res.spent <= budget
        status = "empty_after_budget" if res.empty_flag else ("ok" if res.chunks else "no_content")
        return RetrievalResult(stage, status, docs, res.chunks, res.spent, audit)


def retrieve(query: str, forest: Forest, index: VectorIndex, config: RetrievalConfig, embedder, gateway,
             mode: str = "auto") -> RetrievalResult:
    return Retriever(forest, index, embedder, gateway, config).retrieve(query, mode)
