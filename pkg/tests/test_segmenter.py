from __future__ import annotations

import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fable.errors import InvalidArgumentError
from fable.gateway import Gateway, GatewaySpec
from fable.mock import MockBackend, MockRule, MockScript
from fable.segmenter import SegmenterSpec, normalize_document, segment
from fable.tokenizer import Tokenizer

TOK = Tokenizer()


def squash(text: str) -> str:
    return re.sub(r"\s+", "", text)


def assert_exact_slices(text: str, chunks) -> None:
    """Chunks are in-order, non-overlapping slices of the normalized text."""
    norm = normalize_document(text)
    pos = 0
    for c in chunks:
        at = norm.find(c.content, pos)
        assert at >= 0, f"{c.chunk_id} is not an in-order slice"
        assert norm[pos:at].strip() == "", "text was dropped between chunks"
        pos = at + len(c.content)
    assert norm[pos:].strip() == ""
    assert squash("".join(c.content for c in chunks)) == squash(norm)


def test_one_paragraph_is_one_chunk():
    text = "A single short paragraph.  Nothing else here."
    chunks = segment(text, "d")
    assert [c.content for c in chunks] == [text]
    assert chunks[0].chunk_id == "c0001"


def test_paragraph_boundaries_respected():
    paras = [f"Paragraph {i} " + "word " * 30 for i in range(6)]
    text = "\n\n".join(p.strip() for p in paras)
    chunks = segment(text, "d", SegmenterSpec(target_chunk_tokens=60, max_chunk_tokens=200))
    assert len(chunks) <= len(paras)
    for c in chunks:
        # every chunk is a whole number of paragraphs
        assert all(p.strip() in text for p in c.content.split("\n\n"))
        assert c.content.count("Paragraph") == len(c.content.split("\n\n"))


def test_headings_start_new_chunks():
    text = "# Title\n\nintro text\n\n## Part A\n\nbody a\n\n## Part B\n\nbody b"
    chunks = segment(text, "d", SegmenterSpec(target_chunk_tokens=500))
    assert [c.content.splitlines()[0] for c in chunks] == ["# Title", "## Part A", "## Part B"]


def test_ten_section_fixture_reassembles():
    sections = []
    for i in range(10):
        body = "\n\n".join(f"Sentence {i}.{j} about topic {i}. " * (j + 3) for j in range(4))
        sections.append(f"## Section {i}\n\n{body}")
    text = "# Fixture\r\n\r\n" + "\n\n".join(sections) + "\n\n\n"
    chunks = segment(text, "d")
    assert_exact_slices(text, chunks)
    assert [c.chunk_id for c in chunks] == [f"c{i:04d}" for i in range(1, len(chunks) + 1)]


def test_oversize_units_split_under_cap():
    sentence = "This sentence is reasonably long but not huge. "
    text = sentence * 400 + "\n\n" + "x" * 9000
    spec = SegmenterSpec(target_chunk_tokens=64, max_chunk_tokens=128)
    chunks = segment(text, "d", spec)
    assert all(TOK.count(c.content) <= 128 for c in chunks)
    assert_exact_slices(text, chunks)


def test_empty_document_rejected():
    with pytest.raises(InvalidArgumentError):
        segment("  \n\n \t ", "d")


def test_spec_validation():
    with pytest.raises(InvalidArgumentError):
        SegmenterSpec(target_chunk_tokens=300, max_chunk_tokens=200)
    with pytest.raises(InvalidArgumentError):
        SegmenterSpec(backend="magic")


texts = st.lists(
    st.one_of(
        st.text(alphabet="abc xyz.!?\n", min_size=1, max_size=300),
        st.sampled_from(["# Head", "## Sub head", "", "\n", "word. " * 50]),
    ),
    min_size=1,
    max_size=12,
).map("\n\n".join)


@settings(max_examples=150, deadline=None)
@given(texts, st.integers(1, 80), st.integers(0, 200))
def test_structural_coverage_order_and_cap(text, target, extra):
    if not normalize_document(text):
        return
    spec = SegmenterSpec(target_chunk_tokens=target, max_chunk_tokens=target + extra)
    chunks = segment(text, "d", spec)
    assert_exact_slices(text, chunks)
    assert all(TOK.count(c.content) <= spec.max_chunk_tokens for c in chunks)
    assert segment(text, "d", spec) == chunks


# -- LLM backend ------------------------------------------------------------------------


def llm_gateway(response):
    script = MockScript(rules=[MockRule("segment", response)])
    return Gateway(GatewaySpec(), backend=MockBackend(script))


def test_llm_backend_slices_at_offsets():
    text = "alpha beta gamma. delta epsilon. zeta eta theta."
    cut1, cut2 = text.index("delta"), text.index("zeta")
    gw = llm_gateway({"boundaries": [cut1, cut2]})
    chunks = segment(text, "d", SegmenterSpec(backend="llm"), gateway=gw)
    assert [c.content for c in chunks] == ["alpha beta gamma.", "delta epsilon.", "zeta eta theta."]


def test_llm_backend_bad_offsets_fall_back(caplog):
    text = "first paragraph\n\nsecond paragraph"
    gw = llm_gateway({"boundaries": [10, 5]})
    with caplog.at_level("WARNING"):
        chunks = segment(text, "d", SegmenterSpec(backend="llm"), gateway=gw)
    assert chunks == segment(text, "d")
    assert "structural" in caplog.text


def test_llm_backend_default_mock_covers_text():
    text = "# T\n\n" + "\n\n".join("para %d " % i + "w " * 80 for i in range(8))
    gw = Gateway()
    chunks = segment(text, "d", SegmenterSpec(backend="llm", target_chunk_tokens=64, max_chunk_tokens=128), gateway=gw)
    assert_exact_slices(text, chunks)
