"""
Whole documents or individual nodes, depending on the budget
============================================================

A small synthetic corpus with planted evidence shows the two retrieval
stages.  When the candidate documents fit the budget they come back whole;
otherwise retrieval descends to nodes and trims the result to the budget.
"""

from fable import Gateway, Retriever
from fable.evaluation import evaluate, to_tsv
from fable.pipeline import index_documents
from fable.synth import SynthConfig, generate
from fable.vector_index import EmbedderSpec, make_embedder

corpus = generate(SynthConfig(docs=8, queries=20, tokens_per_doc=3000, seed=1))
built = index_documents(corpus.documents)
retriever = Retriever(built.forest, built.index, make_embedder(EmbedderSpec()), Gateway())

query = corpus.queries[0]
print("query:", query["query"])
print("gold:", [(g["doc_id"], g["chunk_id"]) for g in query["gold"]])

for budget in (256, 2048, 100_000):
    res = retriever.retrieve(query["query"], budget=budget)
    routing = res.audit["routing"]
    print(f"budget {budget:6d}: stage={res.stage:10s} candidates={routing['total_tokens']} tokens, "
          f"returned {len(res.chunks)} chunks / {res.token_count} tokens")

# The LLM path and the vector path can be switched off independently.
rows = evaluate(retriever, corpus.queries, ["nodes", "treexp", "llm-nodes"], [512, 2048])
print(to_tsv(rows))
