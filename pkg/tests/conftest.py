from __future__ import annotations

import pytest

from fable.gateway import Gateway
from fable.pipeline import index_documents
from fable.retrieval import Retriever
from fable.synth import SynthConfig, generate
from fable.vector_index import EmbedderSpec, make_embedder

# Filled by test_acceptance.py, printed at the end of the run.
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def small_corpus():
    return generate(SynthConfig(docs=6, queries=12, tokens_per_doc=2500, seed=7))


@pytest.fixture(scope="session")
def small_index(small_corpus):
    return index_documents(small_corpus.documents)


@pytest.fixture
def small_retriever(small_index):
    return Retriever(small_index.forest, small_index.index, make_embedder(EmbedderSpec()), Gateway())
