"""Tree generators and independent oracles shared by the test modules.

The oracles deliberately avoid the library's cached structure: they walk
nested shapes or raw node maps recursively and recompute everything.
"""

from __future__ import annotations

import math
import random
from functools import lru_cache

import numpy as np

from fable.forest import LEAF, Chunk, Forest, SemanticTree, TreeNode, kind_for_depth
from fable.vector_index import INTERNAL, VectorIndex
from fable.vector_index import LEAF as LEAF_G

# A shape is a tuple of child shapes; () is a leaf.  The root shape must
# have at least one child.


@lru_cache(maxsize=None)
def forests_of(n: int) -> tuple:
    """All ordered sequences of shapes with ``n`` nodes in total."""
    if n == 0:
        return ((),)
    out = []
    for first in range(1, n + 1):
        for head in shapes_of(first):
            for tail in forests_of(n - first):
                out.append((head,) + tail)
    return tuple(out)


@lru_cache(maxsize=None)
def shapes_of(n: int) -> tuple:
    """All ordered rooted shapes with exactly ``n`` nodes."""
    return tuple(forests_of(n - 1))


def all_tree_shapes(max_nodes: int) -> list[tuple]:
    """Every shape with 2..max_nodes nodes (root must have a child)."""
    return [s for n in range(2, max_nodes + 1) for s in shapes_of(n)]


def random_shape(rng: random.Random, n_nodes: int) -> tuple:
    """Random ordered shape with ``n_nodes`` >= 2 nodes (random recursive tree)."""
    children: list[list[int]] = [[] for _ in range(n_nodes)]
    for v in range(1, n_nodes):
        children[rng.randrange(v)].append(v)

    def build(v):
        return tuple(build(c) for c in children[v])

    return build(0)


def shape_size(shape: tuple) -> int:
    return 1 + sum(shape_size(c) for c in shape)


def shape_depth(shape: tuple) -> int:
    return 1 + max((shape_depth(c) for c in shape), default=0)


def tree_from_shape(shape: tuple, doc_id: str = "d", rng: random.Random | None = None, max_depth=None) -> SemanticTree:
    """SemanticTree with preorder ids n0000.. and chunks c0001.. in leaf order."""
    rng = rng or random.Random(0)
    nodes: dict[str, TreeNode] = {}
    chunks: list[Chunk] = []
    counter = [0]

    def emit(sh: tuple, depth: int) -> str:
        nid = f"n{counter[0]:04d}"
        counter[0] += 1
        if not sh and depth > 1:
            cid = f"c{len(chunks) + 1:04d}"
            words = " ".join(rng.choice(["alpha", "beta", "gamma", "delta", "omega"]) for _ in range(rng.randint(1, 60)))
            chunks.append(Chunk(cid, words, doc_id))
            nodes[nid] = TreeNode(nid, LEAF, chunk_ref=cid)
            return nid
        placeholder = TreeNode(nid, kind_for_depth(depth), f"T{nid}", f"S{nid}")
        nodes[nid] = placeholder
        kids = tuple(emit(c, depth + 1) for c in sh)
        nodes[nid] = TreeNode(nid, kind_for_depth(depth), f"T{nid}", f"S{nid}", children=kids)
        return nid

    root = emit(shape, 1)
    return SemanticTree(doc_id, nodes, root, max_depth or max(2, shape_depth(shape)), tuple(chunks))


def random_forest(rng: random.Random, n_docs: int, max_nodes: int = 15) -> Forest:
    trees = []
    for i in range(n_docs):
        shape = random_shape(rng, rng.randint(2, max_nodes))
        trees.append(tree_from_shape(shape, f"doc{i:02d}", rng))
    return Forest.from_trees(trees)


# -- raw-structure helpers (no cached properties) ---------------------------------


def naive_parent(tree: SemanticTree) -> dict:
    parent = {tree.root_id: None}
    stack = [tree.root_id]
    while stack:
        v = stack.pop()
        for c in tree.nodes[v].children:
            parent[c] = v
            stack.append(c)
    return parent


def naive_ancestors(tree: SemanticTree, v: str) -> list[str]:
    parent = naive_parent(tree)
    out = []
    while parent[v] is not None:
        v = parent[v]
        out.append(v)
    return out


def naive_depth(tree: SemanticTree, v: str) -> int:
    return 1 + len(naive_ancestors(tree, v))


def naive_chunks(tree: SemanticTree, v: str) -> list[Chunk]:
    node = tree.nodes[v]
    if node.kind == LEAF:
        return [c for c in tree.chunks if c.chunk_id == node.chunk_ref]
    return [c for child in node.children for c in naive_chunks(tree, child)]


# -- composite relevance oracle -------------------------------------------------


def oracle_scores(tree: SemanticTree, cosines: dict[str, float]) -> dict[str, tuple[float, float, float, float]]:
    """(s_sim, s_inh, s_child, s) per node by direct recursion on the definition."""

    def s_sim(v):
        return cosines[v] / naive_depth(tree, v)

    def s_inh(v):
        anc = naive_ancestors(tree, v)
        if not anc:
            return s_sim(v)
        return max(s_sim(u) for u in anc)

    def s(v):
        return (s_sim(v) + s_inh(v) + s_child(v)) / 3.0

    def s_child(v):
        kids = tree.nodes[v].children
        if not kids:
            return s_sim(v)
        return sum(s(c) for c in kids) / len(kids)

    return {v: (s_sim(v), s_inh(v), s_child(v), s(v)) for v in tree.nodes}


def oracle_greedy(forest: Forest, scores: dict, lengths, budget: int) -> list[tuple[str, str]]:
    """Replay of the greedy budget fit; returns selected keys in selection order."""

    def mass(doc, v):
        return sum(lengths(c) for c in naive_chunks(forest.trees[doc], v))

    order = sorted(scores, key=lambda k: (-scores[k][3], k[0], k[1]))
    chosen: list[tuple[str, str]] = []
    remaining = budget
    for doc, v in order:
        if remaining <= 0:
            break
        tree = forest.trees[doc]
        if any((doc, a) in chosen for a in naive_ancestors(tree, v)):
            continue
        under = [k for k in chosen if k[0] == doc and v in naive_ancestors(tree, k[1])]
        cost = mass(doc, v) - sum(mass(*k) for k in under)
        if cost <= remaining:
            chosen = [k for k in chosen if k not in under]
            chosen.append((doc, v))
            remaining -= cost
    return chosen


# -- node fusion oracle (direct transcription) -------------------------------------


def oracle_node_fusion(n_llm, n_treexp, forest: Forest) -> list[Chunk]:
    union = []
    for k in list(n_llm) + list(n_treexp):
        if k not in union:
            union.append(k)
    # 1. ancestor-descendant dedup
    kept = [k for k in union if not any((k[0], a) in union for a in naive_ancestors(forest.trees[k[0]], k[1]))]
    # 2. partition: documents of surviving LLM nodes first, then the rest
    docs = []
    for k in n_llm:
        if k in kept and k[0] not in docs:
            docs.append(k[0])
    for k in n_treexp:
        if k in kept and k[0] not in docs:
            docs.append(k[0])
    out: list[Chunk] = []
    for d in docs:
        tree = forest.trees[d]
        ids = [c.chunk_id for c in tree.chunks]
        # 3. position sort by first chunk index
        mine = sorted((k for k in kept if k[0] == d), key=lambda k: (ids.index(naive_chunks(tree, k[1])[0].chunk_id), k[1]))
        # 4. chunk extraction
        for _, v in mine:
            for c in naive_chunks(tree, v):
                if c not in out:
                    out.append(c)
    return out


# -- budget and top-k oracles ----------------------------------------------------------


def oracle_prefix_len(lengths: list[int], budget: int) -> int:
    """Largest k with sum(lengths[:k]) <= budget, via cumulative sums."""
    cums = np.concatenate([[0], np.cumsum(np.asarray(lengths, dtype=np.int64))])
    return int(np.nonzero(cums <= budget)[0].max())


def oracle_topk(keys, vectors: np.ndarray, query: np.ndarray, k: int):
    scored = []
    q = np.asarray(query, dtype=np.float64)
    for key, vec in zip(keys, vectors):
        v = np.asarray(vec, dtype=np.float64)
        scored.append((math.fsum(v * q), key))
    scored.sort(key=lambda t: (-t[0], t[1][0], t[1][1]))
    return scored[:k]


def oracle_metrics(rows):
    """Spreadsheet-style recall / EIR: rows of (output keys, gold keys, lengths)."""
    recalls, eirs = [], []
    for out, gold, lengths in rows:
        hit = [g for g in set(gold) if g in set(out)]
        recalls.append(len(hit) / len(set(gold)) if gold else 0.0)
        total = 0
        good = 0
        for k in out:
            total += lengths[k]
            if k in set(gold):
                good += lengths[k]
        eirs.append(good / total if total else 0.0)
    return sum(recalls) / len(recalls), sum(eirs) / len(eirs)


def random_node_index(forest: Forest, seed: int = 0, dim: int = 16):
    """VectorIndex with one random unit vector per node of ``forest``."""
    rng = np.random.default_rng(seed)
    index = VectorIndex(dim)
    for tree in forest:
        for v in tree.preorder():
            vec = rng.normal(size=dim)
            index.add((tree.doc_id, v), vec / np.linalg.norm(vec), LEAF_G if tree.nodes[v].is_leaf else INTERNAL)
    return index.freeze()


def random_unit(rng: np.random.Generator, dim: int = 16) -> np.ndarray:
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def quantized_unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Unit vector with entries 0 or +/-1/sqrt(m), m a power of four: dot products are exact."""
    m = int(rng.choice([4, 16, 64]))
    m = min(m, dim)
    v = np.zeros(dim)
    pos = rng.choice(dim, size=m, replace=False)
    v[pos] = rng.choice([-1.0, 1.0], size=m) / np.sqrt(m)
    return v


def random_index(seed: int, n: int, dim: int = 64):
    """Frozen index of ``n`` unit vectors with many exact ties; returns (index, keys, vectors)."""
    rng = np.random.default_rng(seed)
    index = VectorIndex(dim)
    vecs = []
    keys = []
    for i in range(n):
        r = rng.random()
        if vecs and r < 0.2:
            v = vecs[int(rng.integers(len(vecs)))]  # exact duplicate: forced tie
        elif r < 0.6:
            v = quantized_unit(rng, dim)
        else:
            v = rng.normal(size=dim)
            v /= np.linalg.norm(v)
        key = (f"doc{int(rng.integers(0, max(1, n // 7) + 1)):03d}", f"n{i:05d}")
        index.add(key, v, LEAF_G if rng.random() < 0.5 else INTERNAL)
        vecs.append(np.asarray(v, dtype=np.float32).astype(np.float64))  # exactly what the index stores
        keys.append(key)
    return index.freeze(), keys, np.array(vecs)
