"""Corpus to index: segment, build trees, embed, persist."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional

from .errors import ConfigurationError, FableError, MalformedFileError, NotFoundError
from .forest import FORMAT_VERSION, Forest, RetrievalConfig, SemanticTree, load_forest, save_forest
from .gateway import Gateway, GatewaySpec
from .segmenter import SegmenterSpec, segment
from .tree_builder import build_progressive
from .vector_index import EmbedderSpec, VectorIndex, build_index, make_embedder

log = logging.getLogger(__name__)

FOREST_FILE = "forest.jsonl"
VECTORS_FILE = "vectors.fvs"
META_FILE = "meta.json"
CORPUS_SUFFIXES = (".txt", ".md")


def read_corpus(corpus_dir) -> dict[str, str]:
    """``{doc_id: text}`` for every .txt/.md file, doc_id = file stem, sorted."""
    root = Path(corpus_dir)
    if not root.is_dir():
        raise NotFoundError(f"corpus directory {root} does not exist")
    docs: dict[str, str] = {}
    for path in sorted(p for p in root.iterdir() if p.is_file() and p.suffix in CORPUS_SUFFIXES):
        if path.stem in docs:
            raise ConfigurationError(f"{path}: duplicate document id {path.stem!r}")
        try:
            docs[path.stem] = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise FableError(f"{path}: unreadable ({exc})") from exc
    return docs


@dataclass
class IndexSettings:
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    segmenter: SegmenterSpec = field(default_factory=SegmenterSpec)
    gateway: GatewaySpec = field(default_factory=GatewaySpec)
    embedder: EmbedderSpec = field(default_factory=EmbedderSpec)
    part_size: Optional[int] = None


@dataclass
class IndexResult:
    forest: Forest
    index: VectorIndex
    failures: dict[str, str]
    meta: dict


def tree_stats(tree: SemanticTree) -> dict:
    internal = tree.internal_nodes()
    return {
        "doc_id": tree.doc_id,
        "depth": tree.height,
        "nodes": len(tree.nodes),
        "internal": len(internal),
        "leaves": len(tree.nodes) - len(internal),
        "chunks": len(tree.chunks),
    }


def build_forest(
    documents: Mapping[str, str],
    settings: IndexSettings,
    gateway: Gateway,
    workers: int = 1,
) -> tuple[list[SemanticTree], dict[str, str]]:
    """Per-document trees (in doc_id order) plus ``{doc_id: error}`` for failures."""
    tokenizer = settings.retrieval.make_tokenizer()

    def one(item):
        doc_id, text = item
        try:
            chunks = segment(text, doc_id, settings.segmenter, gateway, tokenizer)
            return build_progressive(chunks, doc_id, settings.retrieval, gateway, settings.part_size), None
        except FableError as exc:
            return None, f"{type(exc).__name__}: {exc}"

    items = sorted(documents.items())
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(it) for it in items]
    trees, failures = [], {}
    for (doc_id, _), (tree, err) in zip(items, results):
        if err is None:
            trees.append(tree)
        else:
            failures[doc_id] = err
    return trees, failures


def index_documents(
    documents: Mapping[str, str],
    settings: IndexSettings = IndexSettings(),
    gateway: Optional[Gateway] = None,
    embedder=None,
    workers: int = 1,
) -> IndexResult:
    if gateway is None:
        gateway = Gateway(settings.gateway, tokenizer=settings.retrieval.make_tokenizer())
    embedder = embedder or make_embedder(settings.embedder)
    trees, failures = build_forest(documents, settings, gateway, workers)
    meta = {
        "format_version": FORMAT_VERSION,
        "retrieval": settings.retrieval.to_dict(),
        "segmenter": asdict(settings.segmenter),
        "gateway": settings.gateway.public_dict(),
        "embedder": settings.embedder.public_dict(),
        "prompt_bundle_version": gateway.prompt_bundle_version,
        "part_size": settings.part_size,
    }
    forest = Forest.from_trees(trees, meta=meta)
    index = build_index(forest, embedder)
    meta = dict(meta, documents=len(trees), vectors=len(index), failed=sorted(failures))
    return IndexResult(forest, index, failures, meta)


def save_index(result: IndexResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_forest(result.forest, out / FOREST_FILE)
    result.index.save(out / VECTORS_FILE)
    (out / META_FILE).write_text(json.dumps(result.meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


@dataclass
class LoadedIndex:
    forest: Forest
    index: VectorIndex
    meta: dict

    def retrieval_config(self, **overrides) -> RetrievalConfig:
        base = dict(self.meta.get("retrieval", {}))
        base.update({k: v for k, v in overrides.items() if v is not None})
        return RetrievalConfig(**base)

    def embedder_spec(self, **overrides) -> EmbedderSpec:
        base = dict(self.meta.get("embedder", {}))
        base.update({k: v for k, v in overrides.items() if v is not None})
        return EmbedderSpec(**base)


def load_index(index_dir) -> LoadedIndex:
    root = Path(index_dir)
    for name in (FOREST_FILE, VECTORS_FILE, META_FILE):
        if not (root / name).is_file():
            raise NotFoundError(f"{root}: missing index artifact {name}")
    try:
        meta = json.loads((root / META_FILE).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedFileError(f"{root / META_FILE}: {exc}") from exc
    forest = load_forest(root / FOREST_FILE)
    index = VectorIndex.load(root / VECTORS_FILE)
    return LoadedIndex(forest, index, meta)
