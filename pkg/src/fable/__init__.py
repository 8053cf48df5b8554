"""Hierarchical document forests with budget-adaptive bi-path retrieval."""

from .errors import FableError
from .forest import Chunk, Forest, RetrievalConfig, SemanticTree, TreeNode, load_forest, save_forest
from .fusion import budget_control, node_fusion
from .gateway import Gateway, GatewaySpec
from .pipeline import IndexSettings, index_documents, load_index, save_index
from .retrieval import MODES, RetrievalResult, Retriever, retrieve, tree_expansion
from .segmenter import SegmenterSpec, segment
from .tokenizer import Tokenizer
from .tree_builder import build_progressive, build_tree, merge_trees, validate_and_repair
from .vector_index import EmbedderSpec, HashEmbedder, VectorIndex, build_index

__version__ = "0.1.0"

__all__ = [
    "Chunk",
    "EmbedderSpec",
    "FableError",
    "Forest",
    "Gateway",
    "GatewaySpec",
    "HashEmbedder",
    "IndexSettings",
    "MODES",
    "RetrievalConfig",
    "RetrievalResult",
    "Retriever",
    "SegmenterSpec",
    "SemanticTree",
    "Tokenizer",
    "TreeNode",
    "VectorIndex",
    "budget_control",
    "build_index",
    "build_progressive",
    "build_tree",
    "index_documents",
    "load_forest",
    "load_index",
    "merge_trees",
    "node_fusion",
    "retrieve",
    "save_forest",
    "save_index",
    "segment",
    "tree_expansion",
    "validate_and_repair",
]
