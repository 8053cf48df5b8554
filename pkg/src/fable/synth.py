"""Seeded synthetic corpora with planted evidence, for desk-scale evaluation.

Documents are markdown (title, sections, subsections, paragraphs) written
in pseudo-words drawn from a per-document vocabulary.  Each query gets a
unique marker token planted in one sentence of 1..N distinct documents; the
chunks containing the marker are the query's gold evidence.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .segmenter import SegmenterSpec, segment
from .text import STOPWORDS, terms
from .tokenizer import DEFAULT_TOKENIZER

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
# Function words only: the marker is the one content term a query carries.
QUERY_TEMPLATES = (
    "What about {m}?",
    "Where is {m}?",
    "What do we have on {m}?",
)


@dataclass(frozen=True)
class SynthConfig:
    docs: int = 50
    queries: int = 100
    evidence_per_query: int = 3
    tokens_per_doc: int = 10240
    sections: int = 5
    subsections: int = 3
    vocab_size: int = 160
    seed: int = 0

    def __post_init__(self):
        if self.docs < 1:
            raise ValueError("docs must be >= 1")
        if not 1 <= self.evidence_per_query:
            raise ValueError("evidence_per_query must be >= 1")


@dataclass
class SynthCorpus:
    config: SynthConfig
    documents: dict[str, str]
    queries: list[dict] = field(default_factory=list)
    segmenter: SegmenterSpec = SegmenterSpec()

    def manifest(self) -> dict:
        return {
            "generator": "fable.synth",
            "config": asdict(self.config),
            "segmenter": asdict(self.segmenter),
            "documents": len(self.documents),
            "queries": len(self.queries),
        }


def _word_pool(rng: random.Random, size: int) -> list[str]:
    words: set[str] = set()
    while len(words) < size:
        w = "".join(rng.choice(_CONSONANTS) + rng.choice(_VOWELS) for _ in range(rng.randint(2, 4)))
        if w not in STOPWORDS:
            words.add(w)
    return sorted(words)


def _sentence(rng: random.Random, vocab: list[str]) -> str:
    words = [rng.choice(vocab) for _ in range(rng.randint(6, 12))]
    return " ".join(words).capitalize() + "."


def _paragraph(rng: random.Random, vocab: list[str]) -> list[str]:
    return [_sentence(rng, vocab) for _ in range(rng.randint(4, 7))]


def _title(rng: random.Random, vocab: list[str], n: int) -> str:
    return " ".join(w.capitalize() for w in rng.sample(vocab, n))


def generate(config: SynthConfig = SynthConfig()) -> SynthCorpus:
    rng = random.Random(config.seed)
    pool = _word_pool(rng, max(2000, config.vocab_size * 4))
    target_bytes = config.tokens_per_doc * 4
    # structure[d] = (title, [(section title, [(sub title, [paragraph sentences...])])])
    structure = []
    for _ in range(config.docs):
        vocab = rng.sample(pool, config.vocab_size)
        sections = [
            (_title(rng, vocab, 2), [(_title(rng, vocab, 2), []) for _ in range(config.subsections)])
            for _ in range(config.sections)
        ]
        slots = [sub[1] for _, subs in sections for sub in subs]
        size, i = 0, 0
        while size < target_bytes:
            para = _paragraph(rng, vocab)
            slots[i % len(slots)].append(para)
            size += sum(len(s) + 1 for s in para) + 2
            i += 1
        structure.append((_title(rng, vocab, 3), sections, vocab))

    doc_ids = [f"doc_{i + 1:04d}" for i in range(config.docs)]
    queries = []
    used_markers: set[str] = set()
    for q in range(config.queries):
        marker = f"mk{q:04d}{rng.randrange(10000):04d}"
        while marker in used_markers:
            marker = f"mk{q:04d}{rng.randrange(10000):04d}"
        used_markers.add(marker)
        n_ev = rng.randint(1, min(config.evidence_per_query, config.docs))
        planted = sorted(rng.sample(range(config.docs), n_ev))
        for d in planted:
            _, sections, vocab = structure[d]
            paras = [p for _, subs in sections for _, ps in subs for p in ps]
            para = rng.choice(paras)
            a, b, c, e = (rng.choice(vocab) for _ in range(4))
            para.insert(rng.randint(0, len(para)), f"{a.capitalize()} {b} {marker} {c} {e}.")
        template = QUERY_TEMPLATES[q % len(QUERY_TEMPLATES)]
        queries.append(
            {
                "query_id": f"q{q + 1:04d}",
                "query": template.format(m=marker),
                "markers": [marker],
                "planted_docs": [doc_ids[d] for d in planted],
            }
        )

    documents = {}
    for doc_id, (title, sections, _) in zip(doc_ids, structure):
        lines = [f"# {title}", ""]
        for sec_title, subs in sections:
            lines += [f"## {sec_title}", ""]
            for sub_title, paras in subs:
                lines += [f"### {sub_title}", ""]
                for para in paras:
                    lines += [" ".join(para), ""]
        documents[doc_id] = "\n".join(lines)

    corpus = SynthCorpus(config, documents, [])
    chunks = {d: segment(text, d, corpus.segmenter, tokenizer=DEFAULT_TOKENIZER) for d, text in documents.items()}
    for q in queries:
        gold = []
        for doc_id in q["planted_docs"]:
            for c in chunks[doc_id]:
                if any(m in terms(c.content) for m in q["markers"]):
                    gold.append({"doc_id": doc_id, "chunk_id": c.chunk_id})
        corpus.queries.append({k: q[k] for k in ("query_id", "query", "markers")} | {"gold": gold})
    return corpus


def write_corpus(corpus: SynthCorpus, out_dir) -> Path:
    out = Path(out_dir)
    (out / "corpus").mkdir(parents=True, exist_ok=True)
    for doc_id, text in corpus.documents.items():
        (out / "corpus" / f"{doc_id}.md").write_text(text + "\n", encoding="utf-8")
    with (out / "queries.jsonl").open("w", encoding="utf-8", newline="\n") as fh:
        for q in corpus.queries:
            fh.write(json.dumps(q, sort_keys=True) + "\n")
    (out / "manifest.json").write_text(json.dumps(corpus.manifest(), indent=2, sort_keys=True) + "\n")
    return out
