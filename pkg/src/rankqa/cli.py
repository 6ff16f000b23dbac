"""Command line entry point: index, search, run, eval, sweep.

Exit status is 0 on success, 1 for configuration/usage errors and 2 for
failures at run time.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import corpus
from .errors import ConfigError, EndpointUnreachable, RankQAError
from .evaluation import (EmbeddingTable, evaluate_qa, evaluate_run, read_predictions, render_qa_table,
                         render_ranking_table)
from .fullranker import build_index, format_run_lines, load_index, read_run, save_index, search
from .pipeline import (PipelineConfig, build_pipeline, iter_passages, load_config, load_resources, run_batch,
                       run_sweep)

log = logging.getLogger("rankqa")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rankqa", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="flat YAML pipeline configuration")
        return p

    p = add("index", "build and save a BM25 index")
    p.add_argument("--collection", help="pid<TAB>text collection")
    p.add_argument("--cord-metadata")
    p.add_argument("--cord-fulltext")
    p.add_argument("--out", help="index file to write")
    p.add_argument("--chunk-window", type=int)
    p.add_argument("--chunk-overlap", type=int)
    p.add_argument("--workers", type=int)

    p = add("search", "rank passages for a single query")
    p.add_argument("query")
    p.add_argument("--index")
    p.add_argument("--top-n", type=int, default=10)
    p.add_argument("--trec", action="store_true", help="print TREC run lines")

    p = add("run", "end-to-end batch over a query set")
    p.add_argument("--queries")
    p.add_argument("--qrels")
    p.add_argument("--answers")
    p.add_argument("--embeddings")
    p.add_argument("--out")
    p.add_argument("--rerank-size", type=int)
    p.add_argument("--workers", type=int)

    p = add("eval", "metrics from run/prediction files")
    p.add_argument("--run")
    p.add_argument("--queries", help="all searched queries; ones missing from the run count as misses")
    p.add_argument("--qrels")
    p.add_argument("--predictions")
    p.add_argument("--answers")
    p.add_argument("--embeddings")
    p.add_argument("--n-values", type=_int_list)
    p.add_argument("--out", help="write the report here instead of stdout")

    p = add("sweep", "repeat run across rerank sizes")
    p.add_argument("--sizes", type=_int_list, required=True)
    p.add_argument("--queries")
    p.add_argument("--qrels")
    p.add_argument("--answers")
    p.add_argument("--embeddings")
    p.add_argument("--out")
    return parser


def _config(args, **overrides) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    changes = {k: v for k, v in overrides.items() if v is not None}
    try:
        return config.replace(**changes)
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from None


def _require(value, field: str):
    if not value:
        raise ConfigError(field, "required (set it in --config or on the command line)")
    return value


def _table(path):
    return EmbeddingTable.load(path) if path else None


def cmd_index(args) -> None:
    chunk = args.chunk_window is not None or args.chunk_overlap is not None or None
    config = _config(
        args, collection=args.collection, cord_metadata=args.cord_metadata,
        cord_fulltext_dir=args.cord_fulltext, index=args.out, chunk_window=args.chunk_window,
        chunk_overlap=args.chunk_overlap, chunk_documents=chunk, workers=args.workers,
    )
    out = _require(config.index, "index")
    index = build_index(iter_passages(config), config.index_params, workers=config.workers)
    save_index(index, out)
    print(f"indexed {index.doc_count} passages, {len(index.postings)} terms -> {out}")


def cmd_search(args) -> None:
    config = _config(args, index=args.index)
    index = load_index(_require(config.index, "index"))
    ranked = search(index, args.query, args.top_n, "query")
    if args.trec:
        for line in format_run_lines(ranked, config.run_tag):
            print(line)
        return
    for rank, (pid, score) in enumerate(ranked.entries, start=1):
        print(f"{rank}\t{pid}\t{score:.6f}")


def _inputs(config):
    queries = list(corpus.read_queries(_require(config.queries, "queries")))
    qrels = corpus.read_qrels(config.qrels) if config.qrels else None
    answers = corpus.read_answers(config.answers) if config.answers else None
    return queries, qrels, answers


def cmd_run(args) -> None:
    config = _config(
        args, queries=args.queries, qrels=args.qrels, answers=args.answers, embeddings=args.embeddings,
        output_dir=args.out, rerank_size=args.rerank_size, workers=args.workers,
    )
    queries, qrels, answers = _inputs(config)
    table = _table(config.embeddings)
    pipeline = build_pipeline(config)
    result = run_batch(pipeline, queries, qrels, answers, config.output_dir, table)
    rep = result.report
    row = {"rerank_size": config.rerank_size, "time_per_query_s": rep.time_per_query_s,
           "full_rank": rep.full_rank, "rerank": rep.rerank, "qa": rep.qa}
    print(render_ranking_table([row], config.n_values), end="")
    print(render_qa_table([row]), end="")
    print(f"{rep.queries} queries, {rep.failed} failed; outputs in {config.output_dir}")
    if rep.failed:
        log.warning("%d queries failed; see report.json", rep.failed)


def cmd_eval(args) -> None:
    config = _config(args, queries=args.queries, qrels=args.qrels, answers=args.answers,
                     embeddings=args.embeddings, n_values=args.n_values)
    if not args.run and not args.predictions:
        raise ConfigError("run", "give --run and/or --predictions")
    report = {}
    if args.run:
        qrels = corpus.read_qrels(_require(config.qrels, "qrels"))
        # queries with no hits leave no lines in a run file; the query list brings them back as misses
        query_ids = [q.query_id for q in corpus.read_queries(config.queries)] if config.queries else None
        report["ranking"] = evaluate_run(read_run(args.run), qrels, config.n_values, query_ids).to_dict()
    if args.predictions:
        answers = corpus.read_answers(_require(config.answers, "answers"))
        report["qa"] = evaluate_qa(read_predictions(args.predictions), answers, _table(config.embeddings)).to_dict()
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_sweep(args) -> None:
    config = _config(args, queries=args.queries, qrels=args.qrels, answers=args.answers,
                     embeddings=args.embeddings, output_dir=args.out)
    queries, qrels, answers = _inputs(config)
    rows = run_sweep(config, args.sizes, queries, qrels, answers, config.output_dir,
                     _table(config.embeddings), load_resources(config))
    text = render_ranking_table(rows, config.n_values) + "\n" + render_qa_table(rows)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.txt").write_text(text, encoding="utf-8")
    doc = [
        {"rerank_size": r["rerank_size"], "time_per_query_s": r["time_per_query_s"], "failed": r["failed"],
         "full_rank": r["full_rank"].aggregate, "rerank": r["rerank"].aggregate, "qa": r["qa"].aggregate}
        for r in rows
    ]
    (out / "sweep.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    print(text, end="")


COMMANDS = {"index": cmd_index, "search": cmd_search, "run": cmd_run, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except UsageError as exc:
        print(f"rankqa: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"rankqa: config error: {exc}", file=sys.stderr)
        return 1
    except (RankQAError, OSError) as exc:
        print(f"rankqa: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
