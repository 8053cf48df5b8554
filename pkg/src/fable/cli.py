"""Command line: ``fable index|query|synth|eval``.

Exit codes: 0 ok, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import parse_config, settings_from_dict
from .errors import ConfigurationError, FableError, InvalidArgumentError
from .evaluation import DEFAULT_BUDGETS, evaluate, load_queries, to_json, to_tsv, write_tables
from .gateway import Gateway, GatewaySpec
from .mock import MockBackend, MockScript
from .pipeline import IndexSettings, index_documents, load_index, read_corpus, save_index, tree_stats
from .retrieval import MODES, Retriever
from .synth import SynthConfig, generate, write_corpus
from .vector_index import make_embedder

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
LLM_ROLES = frozenset({"select_docs", "navigate_nodes"})


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _int_list(text: str) -> list[int]:
    return [_positive_int(t.strip()) for t in text.split(",") if t.strip()]


def _mode_list(text: str) -> list[str]:
    modes = [t.strip() for t in text.split(",") if t.strip()]
    for m in modes:
        if m not in MODES:
            raise argparse.ArgumentTypeError(f"unknown mode {m!r} (choose from {', '.join(MODES)})")
    return modes


def _read_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path)


def _dir_is_populated(path: Path) -> bool:
    return path.exists() and (not path.is_dir() or any(path.iterdir()))


# -- index ------------------------------------------------------------------------


def cmd_index(args) -> int:
    raw = _read_config(args.config)
    for section, key, value in (
        ("retrieval", "max_depth", args.max_depth),
        ("segmenter", "backend", args.segmenter),
        ("segmenter", "target_chunk_tokens", args.target_chunk_tokens),
        ("gateway", "backend", args.llm),
        ("embedder", "backend", args.embedder),
        ("embedder", "dimension", args.dimension),
        ("embedder", "seed", args.seed),
        ("index", "part_size", args.part_size),
    ):
        if value is not None:
            raw.setdefault(section, {})[key] = value
    settings = settings_from_dict(raw, args.config or "<flags>")
    out = Path(args.out_dir)
    if _dir_is_populated(out) and not args.force:
        raise UsageError(f"{out} already exists and is not empty; pass --force to overwrite")
    docs = read_corpus(args.corpus_dir)
    if not docs:
        raise UsageError(f"no documents found in {args.corpus_dir} (expected .txt or .md files)")
    result = index_documents(docs, settings, workers=args.workers)
    for tree in result.forest:
        s = tree_stats(tree)
        print(f"{s['doc_id']}\tdepth={s['depth']}\tnodes={s['nodes']}\tinternal={s['internal']}\tleaves={s['leaves']}")
    for doc_id, err in sorted(result.failures.items()):
        print(f"FAILED {doc_id}: {err}", file=sys.stderr)
    if result.failures and not args.skip_failed:
        print(f"{len(result.failures)} document(s) could not be indexed; rerun with --skip-failed to skip them",
              file=sys.stderr)
        return EXIT_FAILURE
    if not len(result.forest):
        print("no document could be indexed", file=sys.stderr)
        return EXIT_FAILURE
    save_index(result, out)
    print(f"indexed {len(result.forest)} document(s), {len(result.index)} vectors -> {out}", file=sys.stderr)
    return EXIT_OK


# -- query / eval -------------------------------------------------------------------


def _retriever(args, raw: dict) -> Retriever:
    loaded = load_index(args.index_dir)
    overrides = {k: v for k, v in raw.get("retrieval", {}).items() if k != "max_depth"}
    overrides.update(k_doc=args.k_doc, hierarchy_threshold=args.hierarchy_threshold)
    try:
        config = loaded.retrieval_config(**overrides)
    except FableError as exc:
        raise UsageError(str(exc)) from exc
    if raw.get("gateway"):
        gw_spec = settings_from_dict({"gateway": raw["gateway"]}).gateway
    else:
        g = loaded.meta.get("gateway", {})
        gw_spec = GatewaySpec(
            backend=g.get("backend", "mock"),
            model=g.get("model", "default"),
            role_models=g.get("role_models", {}),
            prompt_bundle_version=g.get("prompt_bundle_version", "v1"),
        )
    backend = None
    if args.inject_llm_failure:
        if gw_spec.backend != "mock":
            raise UsageError("--inject-llm-failure only applies to the mock backend")
        backend = MockBackend(MockScript(fail_roles=LLM_ROLES))
    gateway = Gateway(gw_spec, backend=backend, tokenizer=config.make_tokenizer())
    emb_overrides = {k: v for k, v in raw.get("embedder", {}).items() if k in ("endpoint", "token_env")}
    embedder = make_embedder(loaded.embedder_spec(**emb_overrides))
    return Retriever(loaded.forest, loaded.index, embedder, gateway, config)


def cmd_query(args) -> int:
    raw = _read_config(args.config)
    retriever = _retriever(args, raw)
    budget = args.budget if args.budget is not None else retriever.config.budget
    result = retriever.retrieve(args.query, args.mode, budget)
    if args.json:
        json.dump(result.to_dict(), sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    else:
        for c in result.chunks:
            print(f"=== {c.doc_id}/{c.chunk_id} ({retriever.tokenizer.count(c.content)} tokens)")
            print(c.content)
            print()
    print(f"stage={result.stage} status={result.status} chunks={len(result.chunks)} "
          f"tokens={result.token_count}/{budget}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    raw = _read_config(args.config)
    retriever = _retriever(args, raw)
    if args.budgets:
        budgets = args.budgets
    elif args.budget is not None:
        budgets = [args.budget]
    else:
        budgets = list(DEFAULT_BUDGETS)
    queries = load_queries(args.queries)
    rows = evaluate(retriever, queries, args.modes, budgets, workers=args.workers)
    if args.json:
        sys.stdout.write(to_json(rows))
    else:
        sys.stdout.write(to_tsv(rows, latency=True))
    if args.out:
        write_tables(rows, args.out)
    return EXIT_OK


# -- synth ----------------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out_dir)
    if _dir_is_populated(out) and not args.force:
        raise UsageError(f"{out} already exists and is not empty; pass --force to overwrite")
    corpus = generate(
        SynthConfig(
            docs=args.docs,
            queries=args.queries,
            evidence_per_query=args.evidence_per_query,
            tokens_per_doc=args.tokens_per_doc,
            seed=args.seed,
        )
    )
    write_corpus(corpus, out)
    gold = sum(len(q["gold"]) for q in corpus.queries)
    print(f"wrote {len(corpus.documents)} documents, {len(corpus.queries)} queries, {gold} gold chunks -> {out}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------


def _retrieval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k-doc", type=_positive_int, help="documents kept by the vector path")
    p.add_argument("--hierarchy-threshold", type=_positive_int,
                   help="deepest level shown to the LLM for document selection")
    p.add_argument("--config", help="config file (key = value with [sections])")
    p.add_argument("--inject-llm-failure", action="store_true",
                   help="make every LLM retrieval call fail (mock backend only)")
    p.add_argument("--json", action="store_true", help="machine-readable output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fable", description="Forest-based bi-path retrieval under a token budget.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build an index from a directory of .txt/.md files")
    p.add_argument("corpus_dir")
    p.add_argument("out_dir")
    p.add_argument("--config")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    p.add_argument("--skip-failed", action="store_true", help="skip documents that cannot be structured")
    p.add_argument("--max-depth", type=_positive_int)
    p.add_argument("--segmenter", choices=("structural", "llm"))
    p.add_argument("--target-chunk-tokens", type=_positive_int)
    p.add_argument("--llm", choices=("mock", "http_chat"), help="gateway backend")
    p.add_argument("--embedder", choices=("hash_mock", "http"))
    p.add_argument("--dimension", type=_positive_int, help="embedding dimension")
    p.add_argument("--seed", type=int, help="hash embedder seed")
    p.add_argument("--part-size", type=_positive_int, help="chunks per progressive-construction part")
    p.add_argument("--workers", type=_positive_int, default=1, help="documents built in parallel")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("query", help="retrieve evidence for one query")
    p.add_argument("index_dir")
    p.add_argument("query")
    p.add_argument("--budget", type=_positive_int, help="token budget")
    p.add_argument("--mode", choices=MODES, default="auto")
    _retrieval_flags(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("synth", help="generate a seeded synthetic corpus with gold labels")
    p.add_argument("out_dir")
    p.add_argument("--docs", type=_positive_int, default=50)
    p.add_argument("--queries", type=_positive_int, default=100)
    p.add_argument("--evidence-per-query", type=_positive_int, default=3)
    p.add_argument("--tokens-per-doc", type=_positive_int, default=10240)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="Recall / EIR per mode and budget")
    p.add_argument("index_dir")
    p.add_argument("queries", help="queries.jsonl with gold labels")
    p.add_argument("--modes", type=_mode_list, default=["auto"], help="comma-separated modes")
    p.add_argument("--budget", type=_positive_int)
    p.add_argument("--budgets", type=_int_list, help="comma-separated budgets (default 1024,2048,4096,8192)")
    p.add_argument("--out", help="directory for metrics.tsv / metrics.json / timing.tsv")
    p.add_argument("--workers", type=_positive_int, default=1, help="queries evaluated in parallel")
    _retrieval_flags(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigurationError, InvalidArgumentError) as exc:
        print(f"fable {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FableError as exc:
        print(f"fable {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
