"""
Building a semantic tree from a markdown document
=================================================

A document is cut into chunks, the chunks are organized into a tree of
sections, and every internal node gets a title and a summary.  The mock
gateway does the structuring offline, so this runs without any model.
"""

from fable import Gateway, RetrievalConfig, build_tree, segment

text = """# Garden notes

Spring planting starts once the soil is workable.

## Tomatoes

Tomatoes want full sun and deep watering. Stake them early.

Prune the suckers below the first flower cluster.

## Beans

Beans fix nitrogen. Sow them directly after the last frost.

### Pole beans

Pole beans need a trellis at least two meters tall.
"""

# Chunks are exact, in-order slices of the normalized text.
chunks = segment(text, "garden")
for c in chunks:
    print(c.chunk_id, repr(c.content[:50]))

# The tree keeps leaves in document order and stays within max_depth.
tree = build_tree(chunks, "garden", RetrievalConfig(max_depth=4), Gateway())
tree.validate()

for nid in tree.preorder():
    node = tree.nodes[nid]
    pad = "  " * (tree.depth(nid) - 1)
    if node.is_leaf:
        print(f"{pad}- {node.chunk_ref}")
    else:
        print(f"{pad}{node.kind}: {node.title}  [{node.summary[:40]}]")

print("height", tree.height, "nodes", len(tree.nodes))
