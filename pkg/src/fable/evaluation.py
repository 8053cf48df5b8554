"""Recall / EIR evaluation against gold (doc_id, chunk_id) labels."""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import IntegrityError, InvalidArgumentError, MalformedFileError
from .forest import Forest
from .retrieval import MODES, Retriever
from .tokenizer import DEFAULT_TOKENIZER, Tokenizer

Key = tuple[str, str]
DEFAULT_BUDGETS = (1024, 2048, 4096, 8192)
METRIC_COLUMNS = ("mode", "budget", "queries", "recall", "eir", "tokens")


class GoldMismatchError(IntegrityError):
    """Gold labels reference chunks the index does not contain."""


def load_queries(path) -> list[dict]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                rec["query"], rec["gold"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise MalformedFileError(f"{path}:{lineno}: bad query record ({exc})") from exc
            out.append(rec)
    return out


def gold_keys(query: dict) -> list[Key]:
    return [(g["doc_id"], g["chunk_id"]) for g in query["gold"]]


def check_gold(queries: Iterable[dict], forest: Forest) -> None:
    known = forest.chunks
    bad = [(q.get("query_id", "?"), k) for q in queries for k in gold_keys(q) if k not in known]
    if bad:
        qid, (d, c) = bad[0]
        raise GoldMismatchError(f"corpus/gold mismatch: {len(bad)} gold chunk(s) unknown, first {qid}: {d}/{c}")


def recall(output: Sequence[Key], gold: Sequence[Key]) -> float:
    gold_set = set(gold)
    if not gold_set:
        return 0.0
    return len(gold_set & set(output)) / len(gold_set)


def eir(output: Sequence[Key], gold: Sequence[Key], lengths: dict[Key, int]) -> float:
    """Share of output tokens that belong to gold chunks (0.0 for empty output)."""
    total = sum(lengths[k] for k in output)
    if total == 0:
        return 0.0
    gold_set = set(gold)
    return sum(lengths[k] for k in output if k in gold_set) / total


@dataclass
class QueryOutcome:
    query_id: str
    recall: float
    eir: float
    tokens: int
    latency_ms: float


@dataclass
class MetricRow:
    mode: str
    budget: int
    queries: int
    recall: float
    eir: float
    tokens: float
    latency_ms: float

    def metrics(self) -> dict:
        return {c: getattr(self, c) for c in METRIC_COLUMNS}


def evaluate(
    retriever: Retriever,
    queries: Sequence[dict],
    modes: Sequence[str] = ("auto",),
    budgets: Sequence[int] = (8192,),
    k_doc: Optional[int] = None,
    hierarchy_threshold: Optional[int] = None,
    workers: int = 1,
    tokenizer: Optional[Tokenizer] = None,
) -> list[MetricRow]:
    """One macro-averaged row per (mode, budget), in the order given."""
    for m in modes:
        if m not in MODES:
            raise InvalidArgumentError(f"unknown mode {m!r}")
    for b in budgets:
        if b < 1:
            raise InvalidArgumentError("budgets must be >= 1")
    if not queries:
        raise InvalidArgumentError("no queries to evaluate")
    check_gold(queries, retriever.forest)
    tok = tokenizer or retriever.tokenizer or DEFAULT_TOKENIZER
    lengths = {k: tok.count(c.content) for k, c in retriever.forest.chunks.items()}

    rows = []
    for mode in modes:
        for budget in budgets:

            def one(q: dict) -> QueryOutcome:
                t0 = time.perf_counter()
                res = retriever.retrieve(q["query"], mode, budget, k_doc, hierarchy_threshold)
                ms = (time.perf_counter() - t0) * 1000.0
                out, gold = res.chunk_keys, gold_keys(q)
                return QueryOutcome(q.get("query_id", ""), recall(out, gold), eir(out, gold, lengths), res.token_count, ms)

            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    outcomes = list(pool.map(one, queries))
            else:
                outcomes = [one(q) for q in queries]
            n = len(outcomes)
            rows.append(
                MetricRow(
                    mode,
                    budget,
                    n,
                    sum(o.recall for o in outcomes) / n,
                    sum(o.eir for o in outcomes) / n,
                    sum(o.tokens for o in outcomes) / n,
                    sum(o.latency_ms for o in outcomes) / n,
                )
            )
    return rows


def _fmt(value) -> str:
    return f"{value:.6f}" if isinstance(value, float) else str(value)


def to_tsv(rows: Sequence[MetricRow], latency: bool = False) -> str:
    cols = METRIC_COLUMNS + (("latency_ms",) if latency else ())
    lines = ["\t".join(cols)]
    for r in rows:
        lines.append("\t".join(_fmt(getattr(r, c)) for c in cols))
    return "\n".join(lines) + "\n"


def to_json(rows: Sequence[MetricRow]) -> str:
    return json.dumps([r.metrics() for r in rows], indent=2, sort_keys=True) + "\n"


def write_tables(rows: Sequence[MetricRow], out_dir) -> Path:
    """metrics.tsv and metrics.json are deterministic; wall-clock latency goes to timing.tsv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.tsv").write_text(to_tsv(rows), encoding="utf-8")
    (out / "metrics.json").write_text(to_json(rows), encoding="utf-8")
    timing = ["mode\tbudget\tlatency_ms"] + [f"{r.mode}\t{r.budget}\t{r.latency_ms:.3f}" for r in rows]
    (out / "timing.tsv").write_text("\n".join(timing) + "\n", encoding="utf-8")
    return out
