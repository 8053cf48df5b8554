"""Multi-granularity embedding index with exact cosine top-K.

Internal nodes are embedded from their ToC path plus summary, leaves from
their chunk content.  Search is brute force and exact; ties are broken by
``(doc_id, node_id)`` ascending so results are reproducible.

Vector store file layout (all integers little-endian)::

    header   magic b"FBLV" | version u32 | dimension u32 | count u64 | key_width u32
    keys     count x [granularity u8 | doc_len u16 | node_len u16 | key bytes padded to key_width]
    vectors  count x dimension x float32

``granularity`` is 0 for internal nodes and 1 for leaves; key bytes are the
UTF-8 doc_id immediately followed by the UTF-8 node_id.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    FormatVersionError,
    InvalidArgumentError,
    MalformedFileError,
    NotFoundError,
    RetriableGatewayError,
)
from .forest import Chunk, Forest, SemanticTree
from .text import STOPWORDS, terms

INTERNAL = "internal"
LEAF = "leaf"
GRANULARITIES = (INTERNAL, LEAF)

TOC_JOIN = " > "
TOC_SUMMARY_SEP = "\n\n"

MAGIC = b"FBLV"
STORE_VERSION = 1
_HEADER = struct.Struct("<4sIIQI")
_KEY_PREFIX = struct.Struct("<BHH")

Key = tuple[str, str]


@dataclass(frozen=True)
class EmbedderSpec:
    backend: str = "hash_mock"
    dimension: int = 1024
    seed: int = 0
    endpoint: Optional[str] = None
    model: str = "default"
    token_env: str = "FABLE_EMBED_TOKEN"

    def __post_init__(self):
        if self.backend not in ("hash_mock", "http"):
            raise ConfigurationError(f"unknown embedder backend {self.backend!r}")
        if self.dimension < 8:
            raise ConfigurationError("embedding dimension must be >= 8")

    def public_dict(self) -> dict:
        return {"backend": self.backend, "dimension": self.dimension, "seed": self.seed, "model": self.model}


def _normalize(mat: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.einsum("ij,ij->i", mat, mat))
    if np.any(norms == 0):
        raise InvalidArgumentError("cannot normalize a zero embedding")
    return mat / norms[:, None]


class HashEmbedder:
    """Bag of words under a seeded random sign projection.

    Every term owns a pseudo-random +/-1 vector of length ``dimension``
    (derived from a keyed SHAKE-256 digest of the term); a text embeds as
    the count-weighted sum of its non-stopword terms, unit-normalized.
    Distinct terms are nearly orthogonal, so shared terms raise cosine.
    """

    def __init__(self, dimension: int = 1024, seed: int = 0):
        self.dimension = dimension
        self._key = seed.to_bytes(8, "little", signed=True)
        self._cache: dict[str, np.ndarray] = {}

    def term_vector(self, term: str) -> np.ndarray:
        vec = self._cache.get(term)
        if vec is None:
            digest = hashlib.shake_256(self._key + term.encode("utf-8")).digest((self.dimension + 7) // 8)
            bits = np.unpackbits(np.frombuffer(digest, dtype=np.uint8), bitorder="little")[: self.dimension]
            vec = bits.astype(np.float64) * 2.0 - 1.0
            self._cache[term] = vec
        return vec

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dimension))
        for row, text in enumerate(texts):
            toks = [t for t in terms(text) if t not in STOPWORDS] or terms(text) or [text]
            for tok, n in sorted(Counter(toks).items()):
                out[row] += n * self.term_vector(tok)
            if not out[row].any():
                out[row] = self.term_vector("\x00" + text)
        return _normalize(out)


class HttpEmbedder:
    """OpenAI-compatible ``/embeddings`` client."""

    def __init__(self, spec: EmbedderSpec, transport: Optional[Callable] = None, batch_size: int = 64):
        from .gateway import urllib_transport

        self.spec = spec
        self.dimension = spec.dimension
        self.endpoint = spec.endpoint or os.environ.get("FABLE_EMBED_ENDPOINT")
        if not self.endpoint:
            raise ConfigurationError("http embedder needs an endpoint (config or FABLE_EMBED_ENDPOINT)")
        self.transport = transport or urllib_transport
        self.batch_size = batch_size

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        rows = []
        for i in range(0, len(texts), self.batch_size):
            batch = list(texts[i : i + self.batch_size])
            headers = {"Content-Type": "application/json"}
            token = os.environ.get(self.spec.token_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
            body = json.dumps({"model": self.spec.model, "input": batch}).encode("utf-8")
            status, text = self.transport(self.endpoint, headers, body, 60.0)
            if status != 200:
                raise RetriableGatewayError(f"embedding endpoint returned HTTP {status}")
            data = sorted(json.loads(text)["data"], key=lambda d: d["index"])
            rows.extend(d["embedding"] for d in data)
        mat = np.asarray(rows, dtype=np.float64).reshape(len(texts), -1)
        if mat.shape[1] != self.dimension:
            raise ConfigurationError(f"endpoint returned dimension {mat.shape[1]}, expected {self.dimension}")
        return _normalize(mat)


def make_embedder(spec: EmbedderSpec, transport: Optional[Callable] = None):
    if spec.backend == "hash_mock":
        return HashEmbedder(spec.dimension, spec.seed)
    return HttpEmbedder(spec, transport)


@dataclass(frozen=True)
class NodeEmbedding:
    key: Key
    vector: np.ndarray
    granularity: str


def internal_text(tree: SemanticTree, node_id: str) -> str:
    return TOC_JOIN.join(tree.toc_path(node_id)) + TOC_SUMMARY_SEP + (tree.nodes[node_id].summary or "")


def embed_internal(tree: SemanticTree, node_id: str, embedder) -> NodeEmbedding:
    vec = embedder.embed([internal_text(tree, node_id)])[0]
    return NodeEmbedding((tree.doc_id, node_id), vec, INTERNAL)


def embed_leaf(chunk: Chunk, embedder, node_id: Optional[str] = None) -> NodeEmbedding:
    vec = embedder.embed([chunk.content])[0]
    return NodeEmbedding((chunk.doc_id, node_id or chunk.chunk_id), vec, LEAF)


class VectorIndex:
    """Append-only during build; call :meth:`freeze` (implicit on first query)."""

    def __init__(self, dimension: int):
        if dimension < 1:
            raise InvalidArgumentError("dimension must be positive")
        self.dimension = dimension
        self._keys: list[Key] = []
        self._gran: list[int] = []
        self._rows: list[np.ndarray] = []
        self._pos: dict[Key, int] = {}
        self._frozen: Optional[tuple] = None

    def __len__(self) -> int:
        return len(self._keys)

    @property
    def keys(self) -> list[Key]:
        return list(self._keys)

    def add(self, key: Key, vector, granularity: str) -> None:
        if granularity not in GRANULARITIES:
            raise InvalidArgumentError(f"unknown granularity {granularity!r}")
        key = (str(key[0]), str(key[1]))
        if key in self._pos:
            raise InvalidArgumentError(f"duplicate key {key}")
        vec = np.asarray(vector, dtype=np.float32).reshape(-1)
        if vec.shape[0] != self.dimension:
            raise InvalidArgumentError(f"vector of dimension {vec.shape[0]}, index has {self.dimension}")
        if abs(float(np.linalg.norm(vec.astype(np.float64))) - 1.0) > 1e-6:
            raise InvalidArgumentError(f"vector for {key} is not unit-normalized")
        self._pos[key] = len(self._keys)
        self._keys.append(key)
        self._gran.append(GRANULARITIES.index(granularity))
        self._rows.append(vec)
        self._frozen = None

    def add_embedding(self, emb: NodeEmbedding) -> None:
        self.add(emb.key, emb.vector, emb.granularity)

    def freeze(self) -> "VectorIndex":
        if self._frozen is None:
            n = len(self._keys)
            mat32 = np.vstack(self._rows) if n else np.zeros((0, self.dimension), np.float32)
            docs = np.array([k[0] for k in self._keys], dtype=object)
            order = sorted(range(n), key=lambda i: self._keys[i])
            key_rank = np.empty(n, dtype=np.int64)
            key_rank[order] = np.arange(n)
            self._frozen = (mat32, mat32.astype(np.float64), np.array(self._gran, dtype=np.int8), docs, key_rank)
        return self

    @property
    def matrix(self) -> np.ndarray:
        return self.freeze()._frozen[0]

    def vector(self, key: Key) -> np.ndarray:
        try:
            return self.matrix[self._pos[key]].astype(np.float64)
        except KeyError:
            raise NotFoundError(f"no embedding for {key}") from None

    def granularity(self, key: Key) -> str:
        return GRANULARITIES[self._gran[self._pos[key]]]

    def similarities(self, query_vector, keys: Sequence[Key]) -> np.ndarray:
        """Cosine between the (unit) query and each listed key."""
        self.freeze()
        q = np.asarray(query_vector, dtype=np.float64)
        try:
            idx = np.fromiter((self._pos[k] for k in keys), dtype=np.int64, count=len(keys))
        except KeyError as exc:
            raise NotFoundError(f"no embedding for {exc.args[0]}") from None
        return np.einsum("ij,j->i", self._frozen[1][idx], q)

    def topk(
        self,
        query_vector,
        k: int,
        granularity: Optional[str] = None,
        doc_ids: Optional[Iterable[str]] = None,
    ) -> list[tuple[Key, float]]:
        """Exact top-``k`` by cosine within the scope; ties by (doc_id, node_id)."""
        if k < 1:
            raise InvalidArgumentError("k must be >= 1")
        self.freeze()
        _, mat64, gran, docs, key_rank = self._frozen
        q = np.asarray(query_vector, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.dimension:
            raise InvalidArgumentError("query dimension mismatch")
        mask = np.ones(len(self._keys), dtype=bool)
        if granularity is not None:
            if granularity not in GRANULARITIES:
                raise InvalidArgumentError(f"unknown granularity {granularity!r}")
            mask &= gran == GRANULARITIES.index(granularity)
        if doc_ids is not None:
            wanted = set(doc_ids)
            mask &= np.fromiter((d in wanted for d in docs), dtype=bool, count=len(docs))
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            return []
        scores = np.einsum("ij,j->i", mat64[idx], q)
        if k < idx.size:
            # keep everything tied with the k-th score so tie-breaks stay exact
            kth = np.partition(scores, idx.size - k)[idx.size - k]
            keep = scores >= kth
            idx, scores = idx[keep], scores[keep]
        order = np.lexsort((key_rank[idx], -scores))[:k]
        return [(self._keys[i], float(s)) for i, s in zip(idx[order], scores[order])]

    # -- persistence -----------------------------------------------------------

    def save(self, path) -> None:
        mat = self.matrix
        encoded = [(k[0].encode("utf-8"), k[1].encode("utf-8")) for k in self._keys]
        width = max((len(d) + len(n) for d, n in encoded), default=0)
        with Path(path).open("wb") as fh:
            fh.write(_HEADER.pack(MAGIC, STORE_VERSION, self.dimension, len(self._keys), width))
            for (d, n), g in zip(encoded, self._gran):
                fh.write(_KEY_PREFIX.pack(g, len(d), len(n)))
                fh.write((d + n).ljust(width, b"\x00"))
            fh.write(mat.astype("<f4", copy=False).tobytes())

    @classmethod
    def load(cls, path) -> "VectorIndex":
        data = Path(path).read_bytes()
        if len(data) < _HEADER.size:
            raise MalformedFileError(f"{path}: truncated header")
        magic, version, dim, count, width = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise MalformedFileError(f"{path}: bad magic {magic!r}")
        if version != STORE_VERSION:
            raise FormatVersionError(f"{path}: vector store version {version}, supported {STORE_VERSION}")
        rec = _KEY_PREFIX.size + width
        expected = _HEADER.size + count * rec + count * dim * 4
        if len(data) != expected:
            raise MalformedFileError(f"{path}: size {len(data)} bytes, expected {expected}")
        index = cls(dim)
        off = _HEADER.size
        keys = []
        for _ in range(count):
            g, dl, nl = _KEY_PREFIX.unpack_from(data, off)
            raw = data[off + _KEY_PREFIX.size : off + rec]
            if g >= len(GRANULARITIES) or dl + nl > width:
                raise MalformedFileError(f"{path}: corrupt key record at byte {off}")
            keys.append(((raw[:dl].decode("utf-8"), raw[dl : dl + nl].decode("utf-8")), GRANULARITIES[g]))
            off += rec
        mat = np.frombuffer(data, dtype="<f4", count=count * dim, offset=off).reshape(count, dim)
        for (key, g), row in zip(keys, mat):
            index.add(key, row.astype(np.float32), g)
        return index


def docs_of(hits: Sequence[tuple[Key, float]], k_doc: int) -> list[str]:
    """Distinct documents in order of their best hit, truncated to ``k_doc``."""
    out: list[str] = []
    for (doc_id, _), _ in hits:
        if doc_id not in out:
            out.append(doc_id)
            if len(out) == k_doc:
                break
    return out


def build_index(forest: Forest, embedder, batch_size: int = 256) -> VectorIndex:
    """Embed every node of every tree (internal: ToC path + summary; leaf: content)."""
    index = VectorIndex(embedder.dimension)
    items: list[tuple[Key, str, str]] = []
    for tree in forest:
        for nid in tree.preorder():
            node = tree.nodes[nid]
            if node.is_leaf:
                items.append(((tree.doc_id, nid), tree.chunk_map[node.chunk_ref].content, LEAF))
            else:
                items.append(((tree.doc_id, nid), internal_text(tree, nid), INTERNAL))
    for i in range(0, len(items), batch_size):
        batch = items[i : i + batch_size]
        vecs = embedder.embed([text for _, text, _ in batch])
        for (key, _, gran), vec in zip(batch, vecs):
            index.add(key, vec, gran)
    return index.freeze()
