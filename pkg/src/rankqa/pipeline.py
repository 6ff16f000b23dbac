"""Query -> full-rank -> rerank -> answer, carried on a MultiPack per query."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import yaml

from . import corpus
from .answer import (AnswerPrediction, BaselineExtractor, Extractor, RemoteExtractor, answer_top_k,
                     format_prediction_line)
from .corpus import Passage, Query, split_passage_id
from .datapack import DataPack, MultiPack
from .errors import ConfigError, RankQAError
from .evaluation import EmbeddingTable, EvalReport, evaluate_qa, evaluate_run, qa_metrics, \
    reciprocal_rank_at_n, recall_at_n
from .fullranker import (TOKEN_PATTERN, IndexParams, InvertedIndex, RankedList, Stage, build_index, format_run_lines,
                         load_index, save_index, search)
from .remote import check_reachable
from .reranker import BM25Scorer, LexicalScorer, RemoteScorer, RerankConfig, Scorer, rerank

log = logging.getLogger(__name__)

BUILTIN = "builtin"


@dataclass(frozen=True)
class PipelineConfig:
    collection: str | None = None
    cord_metadata: str | None = None
    cord_fulltext_dir: str | None = None
    chunk_documents: bool = False
    chunk_window: int = 60
    chunk_overlap: int = 15
    index: str | None = None
    k1: float = 1.2
    b: float = 0.75
    stopwords: bool = False
    stem: bool = False
    full_rank_top_n: int = 1000
    rerank_size: int = 100
    batch_size: int = 32
    qa_top_k: int = 1
    scorer: str = BUILTIN
    extractor: str = BUILTIN
    timeout: float = 10.0
    max_in_flight: int = 4
    n_values: tuple[int, ...] = (10, 100)
    output_dir: str = "out"
    run_tag: str = "rankqa"
    workers: int = 1
    queries: str | None = None
    qrels: str | None = None
    answers: str | None = None
    embeddings: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            _check_type(f.name, getattr(self, f.name), f.type)
        if self.chunk_window <= self.chunk_overlap or self.chunk_overlap < 0:
            raise ConfigError("chunk_window", "must be greater than chunk_overlap >= 0")
        if self.rerank_size < 1:
            raise ConfigError("rerank_size", "must be >= 1")
        if self.full_rank_top_n < self.rerank_size:
            raise ConfigError("rerank_size", f"{self.rerank_size} exceeds full_rank_top_n={self.full_rank_top_n}")
        for name in ("batch_size", "qa_top_k", "max_in_flight", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if not self.n_values or any(n < 1 for n in self.n_values):
            raise ConfigError("n_values", "must be a non-empty list of positive integers")
        if self.timeout <= 0:
            raise ConfigError("timeout", "must be positive")
        for name in ("scorer", "extractor"):
            value = getattr(self, name)
            allowed = (BUILTIN, "bm25") if name == "scorer" else (BUILTIN,)
            if value not in allowed and not value.startswith(("http://", "https://")):
                raise ConfigError(name, f"must be one of {allowed} or an http(s) URL, got {value!r}")
        try:
            IndexParams(self.k1, self.b)
        except ValueError as exc:
            raise ConfigError("k1", str(exc)) from None

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, data: Mapping) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(str(key), "unknown configuration key")
        values = dict(data)
        if isinstance(values.get("n_values"), list):
            values["n_values"] = tuple(values["n_values"])
        return cls(**values)

    def to_mapping(self) -> dict:
        out = dataclasses.asdict(self)
        out["n_values"] = list(self.n_values)
        return out

    @property
    def index_params(self) -> IndexParams:
        return IndexParams(self.k1, self.b, self.stopwords, self.stem)


_TYPES = {
    "str": str, "int": int, "float": (int, float), "bool": bool,
    "str | None": (str, type(None)), "tuple[int, ...]": tuple,
}


def _check_type(name: str, value, annotation) -> None:
    expected = _TYPES[annotation]
    if isinstance(value, bool) and annotation in ("int", "float"):
        raise ConfigError(name, f"expected {annotation}, got a boolean")
    if not isinstance(value, expected):
        raise ConfigError(name, f"expected {annotation}, got {type(value).__name__}")
    if annotation == "tuple[int, ...]" and not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
        raise ConfigError(name, "expected a list of integers")


def load_config(path) -> PipelineConfig:
    """Read a flat YAML mapping; unknown keys are rejected."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"invalid YAML in {path}: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a mapping")
    for key, value in data.items():
        if isinstance(value, dict):
            raise ConfigError(str(key), "nested sections are not allowed; use flat keys")
    return PipelineConfig.from_mapping(data)


# ---------------------------------------------------------------- resources


def iter_passages(config: PipelineConfig) -> Iterable[Passage]:
    """Passages as configured: CORD documents are always chunked, a TSV collection only on request."""
    if config.cord_metadata or config.cord_fulltext_dir:
        if not (config.cord_metadata and config.cord_fulltext_dir):
            raise ConfigError("cord_metadata", "cord_metadata and cord_fulltext_dir go together")
        docs = corpus.read_cord_corpus(config.cord_metadata, config.cord_fulltext_dir)
        return corpus.chunk_documents(docs, config.chunk_window, config.chunk_overlap)
    if not config.collection:
        raise ConfigError("collection", "no corpus configured")
    if config.chunk_documents:
        docs = corpus.read_documents(config.collection)
        return corpus.chunk_documents(docs, config.chunk_window, config.chunk_overlap)
    return corpus.read_passage_collection(config.collection)


@dataclass
class Resources:
    index: InvertedIndex
    texts: dict[str, str]

    def passage(self, passage_id: str) -> Passage:
        doc_id, chunk = split_passage_id(passage_id)
        return Passage(passage_id, doc_id, chunk, self.texts.get(passage_id, ""))


def load_resources(config: PipelineConfig, build: bool = False) -> Resources:
    """Load (or build) the index and the passage texts the later stages need."""
    texts = {}

    def remember(stream):
        for p in stream:
            texts[p.passage_id] = p.text
            yield p

    if config.index and Path(config.index).exists() and not build:
        index = load_index(config.index)
        for _ in remember(iter_passages(config)):
            pass
    elif config.index and not build:
        raise ConfigError("index", f"{config.index} does not exist (build it with the 'index' command)")
    else:
        index = build_index(remember(iter_passages(config)), config.index_params, workers=config.workers)
        if config.index:
            save_index(index, config.index)
    missing = sum(1 for pid in index.id_table if pid not in texts)
    if missing:
        log.warning("%d indexed passages have no text in the configured corpus", missing)
    return Resources(index, texts)


# ---------------------------------------------------------------- processors


class StageError(RankQAError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


def passage_pack_name(passage_id: str) -> str:
    return f"passage_{passage_id}"


def _passage_packs(mp: MultiPack) -> list[DataPack]:
    return [p for name, p in mp.packs.items() if name.startswith("passage_")]


def ranked_list(mp: MultiPack, stage: Stage) -> RankedList:
    """Rebuild a stage's ranking from the metadata written on passage packs."""
    prefix = "fullrank" if stage is Stage.FULL_RANK else "rerank"
    rows = []
    for pack in _passage_packs(mp):
        if f"{prefix}_rank" in pack.metadata:
            rows.append((int(pack.metadata[f"{prefix}_rank"]), pack.metadata["passage_id"],
                         float(pack.metadata[f"{prefix}_score"])))
    rows.sort()
    return RankedList(mp["query"].metadata.get("query_id", ""), stage, [(pid, s) for _, pid, s in rows])


def answer_of(mp: MultiPack) -> AnswerPrediction | None:
    name = mp["query"].metadata.get("answer_pack")
    if not name:
        return None
    pack = mp[name]
    span = pack.get_spans("AnswerSpan")[0]
    sentence = pack.get_spans("AnswerSentence")[0]
    return AnswerPrediction(
        query_id=mp["query"].metadata.get("query_id", ""),
        passage_id=pack.metadata["passage_id"],
        span_begin=span.begin,
        span_end=span.end,
        span_text=pack.text[span.begin:span.end],
        sentence_begin=sentence.begin,
        sentence_end=sentence.end,
        sentence_text=pack.text[sentence.begin:sentence.end],
        confidence=float(span.attributes["confidence"]),
    )


class Processor:
    name = "processor"

    def process(self, mp: MultiPack) -> MultiPack:
        raise NotImplementedError


class QueryProcessor(Processor):
    """Marks the query span and its index terms on the query pack."""

    name = "query"

    def __init__(self, params: IndexParams):
        self.params = params

    def process(self, mp):
        pack = mp["query"]
        pack.add_span("Query", 0, len(pack.text))
        for m in TOKEN_PATTERN.finditer(pack.text):
            pack.add_span("Token", m.start(), m.end())
        pack.metadata["query_terms"] = " ".join(self.params.analyze(pack.text))
        return mp


class FullRankProcessor(Processor):
    name = "full_rank"

    def __init__(self, resources: Resources, top_n: int):
        self.resources = resources
        self.top_n = top_n

    def process(self, mp):
        qpack = mp["query"]
        ranked = search(self.resources.index, qpack.text, self.top_n, qpack.metadata.get("query_id", ""))
        if not ranked.entries:
            qpack.metadata["results"] = "empty"
            return mp
        qpack.metadata["results"] = str(len(ranked.entries))
        query_span = qpack.get_spans("Query")[0].id
        for rank, (pid, score) in enumerate(ranked.entries, start=1):
            pack = DataPack(self.resources.texts.get(pid, ""), metadata={
                "passage_id": pid,
                "fullrank_rank": str(rank),
                "fullrank_score": repr(score),
            })
            span = pack.add_span("Passage", 0, len(pack.text))
            name = passage_pack_name(pid)
            mp.add_pack(name, pack)
            mp.add_cross_link("Retrieved", ("query", query_span), (name, span))
        return mp


class RerankProcessor(Processor):
    name = "rerank"

    def __init__(self, scorer: Scorer, config: RerankConfig):
        self.scorer = scorer
        self.config = config

    def process(self, mp):
        candidates = ranked_list(mp, Stage.FULL_RANK)
        if not candidates.entries:
            return mp
        texts = {p.metadata["passage_id"]: p.text for p in _passage_packs(mp)}
        reranked = rerank(self.scorer, mp["query"].text, candidates, self.config, texts)
        for rank, (pid, score) in enumerate(reranked.entries, start=1):
            meta = mp[passage_pack_name(pid)].metadata
            meta["rerank_rank"] = str(rank)
            meta["rerank_score"] = repr(score)
        return mp


class AnswerProcessor(Processor):
    name = "answer"

    def __init__(self, extractor: Extractor, resources: Resources, top_k: int = 1):
        self.extractor = extractor
        self.resources = resources
        self.top_k = top_k

    def process(self, mp):
        reranked = ranked_list(mp, Stage.RERANK)
        if not reranked.entries:
            return mp
        qpack = mp["query"]
        passages = [self.resources.passage(pid) for pid in reranked.passage_ids[:self.top_k]]
        passages = [p for p in passages if p.text] or passages[:1]
        pred = answer_top_k(self.extractor, qpack.text, passages, qpack.metadata.get("query_id", ""))
        name = passage_pack_name(pred.passage_id)
        pack = mp[name]
        span = pack.add_span("AnswerSpan", pred.span_begin, pred.span_end, {"confidence": pred.confidence})
        sentence = pack.add_span("AnswerSentence", pred.sentence_begin, pred.sentence_end)
        pack.add_link("Encloses", sentence, span)
        qpack.metadata["answer_pack"] = name
        mp.add_cross_link("Answer", ("query", qpack.get_spans("Query")[0].id), (name, sentence))
        return mp


class EvaluationProcessor(Processor):
    """Writes per-query metrics into the query pack metadata as ``metric:<name>``."""

    name = "evaluate"

    def __init__(self, qrels: Mapping[str, set[str]] | None, answers: Mapping[str, Sequence[str]] | None,
                 n_values: Sequence[int], table: EmbeddingTable | None = None):
        self.qrels = qrels or {}
        self.answers = answers or {}
        self.n_values = n_values
        self.table = table

    def process(self, mp):
        qpack = mp["query"]
        qid = qpack.metadata.get("query_id", "")
        relevant = self.qrels.get(qid)
        if relevant:
            for stage, prefix in ((Stage.FULL_RANK, "full_rank"), (Stage.RERANK, "rerank")):
                ids = ranked_list(mp, stage).passage_ids
                for n in self.n_values:
                    qpack.metadata[f"metric:{prefix}:mrr@{n}"] = repr(reciprocal_rank_at_n(ids, relevant, n))
                    qpack.metadata[f"metric:{prefix}:recall@{n}"] = repr(recall_at_n(ids, relevant, n))
        refs = self.answers.get(qid)
        pred = answer_of(mp)
        if refs:
            for key, value in qa_metrics(pred.sentence_text if pred else "", refs, self.table).items():
                qpack.metadata[f"metric:qa:{key}"] = repr(value)
        return mp


# ---------------------------------------------------------------- pipeline


def make_scorer(config: PipelineConfig, index: InvertedIndex) -> Scorer:
    if config.scorer == BUILTIN:
        return LexicalScorer(index)
    if config.scorer == "bm25":
        return BM25Scorer(index)
    return RemoteScorer(config.scorer, config.timeout, config.max_in_flight)


def make_extractor(config: PipelineConfig, index: InvertedIndex) -> Extractor:
    if config.extractor == BUILTIN:
        return BaselineExtractor(index)
    return RemoteExtractor(config.extractor, config.timeout, config.max_in_flight)


class Pipeline:
    def __init__(self, config: PipelineConfig, resources: Resources, processors: list[Processor]):
        self.config = config
        self.resources = resources
        self.processors = processors

    @property
    def stage_names(self) -> list[str]:
        return [p.name for p in self.processors]

    def run_query(self, query: Query) -> tuple[MultiPack, dict[str, float]]:
        mp = MultiPack()
        mp.add_pack("query", DataPack(query.text, metadata={"query_id": query.query_id}))
        timings = {}
        for proc in self.processors:
            started = time.perf_counter()
            try:
                proc.process(mp)
            except Exception as exc:
                raise StageError(proc.name, exc) from exc
            timings[proc.name] = time.perf_counter() - started
        return mp, timings

    def process_query(self, query: Query) -> MultiPack:
        return self.run_query(query)[0]


def build_pipeline(config: PipelineConfig, resources: Resources | None = None, *,
                   scorer: Scorer | None = None, extractor: Extractor | None = None,
                   qrels=None, answers=None, table: EmbeddingTable | None = None) -> Pipeline:
    """Assemble [query, full_rank, rerank, answer] and an evaluator when judgments are given.

    Remote endpoints are probed with a TCP connect so a dead service fails
    here rather than on the first query.
    """
    if scorer is None and config.scorer.startswith(("http://", "https://")):
        check_reachable(config.scorer, config.timeout)
    if extractor is None and config.extractor.startswith(("http://", "https://")):
        check_reachable(config.extractor, config.timeout)
    if resources is None:
        resources = load_resources(config)
    scorer = scorer or make_scorer(config, resources.index)
    extractor = extractor or make_extractor(config, resources.index)
    processors = [
        QueryProcessor(resources.index.params),
        FullRankProcessor(resources, config.full_rank_top_n),
        RerankProcessor(scorer, RerankConfig(config.rerank_size, config.batch_size)),
        AnswerProcessor(extractor, resources, config.qa_top_k),
    ]
    if qrels is not None or answers is not None:
        processors.append(EvaluationProcessor(qrels, answers, config.n_values, table))
    return Pipeline(config, resources, processors)


def process_query(pipeline: Pipeline, query: Query) -> MultiPack:
    return pipeline.process_query(query)


@dataclass
class QueryOutcome:
    query_id: str
    full_rank: RankedList | None = None
    rerank: RankedList | None = None
    answer: AnswerPrediction | None = None
    timings: dict[str, float] = field(default_factory=dict)
    seconds: float = 0.0
    error: str | None = None


@dataclass
class BatchReport:
    full_rank: EvalReport
    rerank: EvalReport
    qa: EvalReport
    time_per_query_s: float
    stage_time_s: dict[str, float]
    queries: int
    failed: int
    failures: list[dict]
    config: dict

    def to_dict(self) -> dict:
        return {
            "full_rank": self.full_rank.to_dict(),
            "rerank": self.rerank.to_dict(),
            "qa": self.qa.to_dict(),
            "time_per_query_s": self.time_per_query_s,
            "stage_time_s": self.stage_time_s,
            "queries": self.queries,
            "failed": self.failed,
            "failures": self.failures,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


@dataclass
class BatchResult:
    full_rank_run: Path | None
    rerank_run: Path | None
    predictions: Path | None
    report: BatchReport
    outcomes: list[QueryOutcome]


def _outcome(pipeline: Pipeline, query: Query) -> QueryOutcome:
    started = time.perf_counter()
    try:
        mp, timings = pipeline.run_query(query)
    except StageError as exc:
        log.warning("query %s failed in %s: %s", query.query_id, exc.stage, exc.cause)
        return QueryOutcome(query.query_id, seconds=time.perf_counter() - started, error=str(exc))
    return QueryOutcome(
        query.query_id,
        full_rank=ranked_list(mp, Stage.FULL_RANK),
        rerank=ranked_list(mp, Stage.RERANK),
        answer=answer_of(mp),
        timings=timings,
        seconds=time.perf_counter() - started,
    )


def _write_lines(path: Path, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")


def run_batch(pipeline: Pipeline, queries: Sequence[Query], qrels: Mapping[str, set[str]] | None = None,
              answers: Mapping[str, Sequence[str]] | None = None, out_dir=None,
              table: EmbeddingTable | None = None, workers: int | None = None) -> BatchResult:
    """Run every query, write run/prediction files and evaluate.

    Queries are independent; a failing query is logged, counted and left out
    of the outputs. Files keep the input query order whatever the worker count.
    """
    workers = workers or pipeline.config.workers
    queries = list(queries)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda q: _outcome(pipeline, q), queries))
    else:
        outcomes = [_outcome(pipeline, q) for q in queries]

    ok = [o for o in outcomes if o.error is None]
    n_values = pipeline.config.n_values
    full_run = {o.query_id: o.full_rank for o in ok}
    rerank_run = {o.query_id: o.rerank for o in ok}
    predictions = {o.query_id: (o.answer.sentence_text if o.answer else "") for o in ok}
    config_echo = {"n_values": list(n_values), "rerank_size": pipeline.config.rerank_size,
                   "full_rank_top_n": pipeline.config.full_rank_top_n}
    fr_report = evaluate_run(full_run, qrels or {}, n_values)
    rr_report = evaluate_run(rerank_run, qrels or {}, n_values)
    qa_report = evaluate_qa(predictions, answers or {}, table)
    for rep in (fr_report, rr_report):
        rep.config.update(config_echo)
    qa_report.config.update(config_echo)
    stage_names = pipeline.stage_names
    report = BatchReport(
        full_rank=fr_report,
        rerank=rr_report,
        qa=qa_report,
        time_per_query_s=(sum(o.seconds for o in ok) / len(ok)) if ok else 0.0,
        stage_time_s={s: (sum(o.timings.get(s, 0.0) for o in ok) / len(ok)) if ok else 0.0 for s in stage_names},
        queries=len(outcomes),
        failed=len(outcomes) - len(ok),
        failures=[{"query_id": o.query_id, "error": o.error} for o in outcomes if o.error],
        config=pipeline.config.to_mapping(),
    )

    paths = [None, None, None]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        tag = pipeline.config.run_tag
        paths = [out / "fullrank.run", out / "rerank.run", out / "predictions.tsv"]
        _write_lines(paths[0], (line for o in ok for line in format_run_lines(o.full_rank, tag)))
        _write_lines(paths[1], (line for o in ok for line in format_run_lines(o.rerank, tag)))
        _write_lines(paths[2], (format_prediction_line(o.answer, o.query_id) for o in ok))
        (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    return BatchResult(paths[0], paths[1], paths[2], report, outcomes)


def run_sweep(config: PipelineConfig, sizes: Sequence[int], queries: Sequence[Query],
              qrels=None, answers=None, out_dir=None, table: EmbeddingTable | None = None,
              resources: Resources | None = None, scorer: Scorer | None = None,
              extractor: Extractor | None = None) -> list[dict]:
    """``run_batch`` once per rerank size; rows feed the table renderers."""
    if not sizes:
        raise ConfigError("sizes", "no rerank sizes given")
    for size in sizes:
        if size < 1 or size > config.full_rank_top_n:
            raise ConfigError("sizes", f"rerank size {size} must be in 1..full_rank_top_n={config.full_rank_top_n}")
    resources = resources or load_resources(config)
    rows = []
    for size in sizes:
        cfg = config.replace(rerank_size=size)
        pipe = build_pipeline(cfg, resources, scorer=scorer, extractor=extractor)
        sub = Path(out_dir) / f"rerank_{size}" if out_dir is not None else None
        result = run_batch(pipe, queries, qrels, answers, sub, table)
        rows.append({
            "rerank_size": size,
            "time_per_query_s": result.report.time_per_query_s,
            "full_rank": result.report.full_rank,
            "rerank": result.report.rerank,
            "qa": result.report.qa,
            "failed": result.report.failed,
        })
    return rows
