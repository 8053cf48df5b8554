"""
Scoring a tree and filling a token budget
=========================================

Every node gets a composite score: its own similarity damped by depth, the
best similarity among its ancestors, and the mean score of its children.
Nodes are then taken greedily by score while their subtree still fits the
remaining budget.
"""

import numpy as np

from fable import Forest, Gateway, RetrievalConfig, build_tree, segment
from fable.segmenter import SegmenterSpec
from fable.retrieval import expand, score_tree
from fable.tokenizer import Tokenizer
from fable.vector_index import EmbedderSpec, build_index, make_embedder

text = "\n\n".join(
    [
        "# Field guide",
        "## Owls",
        "Barn owls hunt at night over open fields and hear mice under snow.",
        "Tawny owls call with the familiar hooting duet in old woodland.",
        "## Herons",
        "Grey herons stand still in shallow water waiting for fish.",
        "Herons nest in tall trees in noisy colonies called heronries.",
    ]
)
chunks = segment(text, "guide", SegmenterSpec(target_chunk_tokens=16, max_chunk_tokens=64))
tree = build_tree(chunks, "guide", RetrievalConfig(), Gateway())
forest = Forest.from_trees([tree])

embedder = make_embedder(EmbedderSpec(dimension=256))
index = build_index(forest, embedder)
query = embedder.embed(["where do owls hunt at night"])[0]

# Composite scores per node, highest first.
order = tree.preorder()
cos = dict(zip(order, index.similarities(query, [("guide", n) for n in order]).tolist()))
scores = score_tree(tree, cos)
for sn in sorted(scores.values(), key=lambda s: -s.s):
    print(f"{sn.key[1]}  sim={sn.s_sim:+.3f} inh={sn.s_inh:+.3f} child={sn.s_child:+.3f} -> {sn.s:+.3f}")

# Greedy selection under a few budgets: an ancestor absorbs descendants taken earlier.
tok = Tokenizer()
for budget in (10, 30, 1000):
    exp = expand(query, ["guide"], forest, index, budget, tok)
    picked = [sn.key[1] for sn in exp.selected]
    print(f"budget {budget:5d}: selected {picked} spending {exp.spent} tokens")

assert np.isfinite([s.s for s in scores.values()]).all()
