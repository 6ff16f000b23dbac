"""Second-stage re-scoring of the full-ranker's head.

Only the first ``rerank_size`` candidates are re-scored. Candidates beyond
that window keep their full-rank order and are appended after the re-scored
block with sentinel scores strictly below it, so downstream recall still
counts them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

from .errors import ProtocolError, RankQAError
from .fullranker import InvertedIndex, RankedList, Stage, bm25_score, ranking_key
from .remote import JsonClient, as_number


class ScorerFailure(RankQAError):
    def __init__(self, batch_index: int, cause: BaseException):
        super().__init__(f"scorer failed on batch {batch_index}: {cause}")
        self.batch_index = batch_index
        self.cause = cause


class Scorer(Protocol):
    def score_batch(self, query: str, passages: Sequence[tuple[str, str]]) -> list[float]:
        """One score per (passage_id, text), in input order."""
        ...


@dataclass(frozen=True)
class RerankConfig:
    rerank_size: int
    batch_size: int = 32

    def __post_init__(self):
        if self.rerank_size < 1:
            raise ValueError(f"rerank_size must be >= 1, got {self.rerank_size}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


def expected_calls(rerank_size: int, n_candidates: int, batch_size: int) -> int:
    return math.ceil(min(rerank_size, n_candidates) / batch_size)


def _below(score: float, offset: int) -> float:
    value = score - offset
    if value >= score:
        value = math.nextafter(score, -math.inf)
    return value


def rerank(scorer: Scorer, query: str, candidates: RankedList, config: RerankConfig,
           texts: dict[str, str] | None = None) -> RankedList:
    """Re-score the head of ``candidates`` and return a ReRank list.

    ``texts`` maps passage id to passage text; ids missing from it are sent with
    empty text. The scorer is called once per batch of at most
    ``config.batch_size`` passages. Any scorer exception aborts the whole call
    with ScorerFailure and nothing is reordered.
    """
    texts = texts or {}
    head = candidates.entries[:config.rerank_size]
    tail = candidates.entries[config.rerank_size:]
    rescored: list[tuple[str, float]] = []
    for batch_index, start in enumerate(range(0, len(head), config.batch_size)):
        batch = [(pid, texts.get(pid, "")) for pid, _ in head[start:start + config.batch_size]]
        try:
            scores = list(scorer.score_batch(query, batch))
            if len(scores) != len(batch):
                raise ProtocolError(f"scorer returned {len(scores)} scores for {len(batch)} passages")
            scores = [as_number(s, "score") for s in scores]
        except Exception as exc:
            raise ScorerFailure(batch_index, exc) from exc
        rescored.extend((pid, s) for (pid, _), s in zip(batch, scores))
    rescored.sort(key=ranking_key)
    entries = list(rescored)
    if tail:
        floor = rescored[-1][1]
        previous = floor
        for offset, (pid, _) in enumerate(tail, start=1):
            value = min(_below(floor, offset), math.nextafter(previous, -math.inf))
            entries.append((pid, value))
            previous = value
    return RankedList(candidates.query_id, Stage.RERANK, entries)


class LexicalScorer:
    """Sum of idf over distinct query terms found in the passage, / sqrt(passage length).

    idf and tokenization come from ``index``. Deterministic and thread safe.
    """

    def __init__(self, index: InvertedIndex):
        self.index = index

    def score(self, query_terms: set[str], text: str) -> float:
        terms = self.index.params.analyze(text)
        if not terms:
            return 0.0
        present = query_terms.intersection(terms)
        # sorted so the float sum does not depend on set iteration order
        return math.fsum(self.index.idf(t) for t in sorted(present)) / math.sqrt(len(terms))

    def score_batch(self, query: str, passages: Sequence[tuple[str, str]]) -> list[float]:
        query_terms = set(self.index.params.analyze(query))
        return [self.score(query_terms, text) for _, text in passages]


def lexical_score_batch(index: InvertedIndex, query: str, passages: Sequence[tuple[str, str]]) -> list[float]:
    return LexicalScorer(index).score_batch(query, passages)


class BM25Scorer:
    """Re-scores with the index's own BM25; reproduces the full-rank order."""

    def __init__(self, index: InvertedIndex):
        self.index = index

    def score_batch(self, query: str, passages: Sequence[tuple[str, str]]) -> list[float]:
        terms = self.index.params.analyze(query)
        return [bm25_score(self.index, terms, self.index.ordinal_of[pid]) for pid, _ in passages]


class RemoteScorer:
    """Client for ``POST {endpoint}/v1/score``."""

    def __init__(self, endpoint: str, timeout: float = 10.0, max_in_flight: int = 4):
        self.client = JsonClient(endpoint, timeout, max_in_flight)

    @property
    def endpoint(self) -> str:
        return self.client.endpoint

    def score_batch(self, query: str, passages: Sequence[tuple[str, str]]) -> list[float]:
        doc = self.client.post("/v1/score", {
            "query": query,
            "candidates": [{"id": pid, "text": text} for pid, text in passages],
        })
        scores = doc.get("scores")
        if not isinstance(scores, list):
            raise ProtocolError("response has no 'scores' list")
        if len(scores) != len(passages):
            raise ProtocolError(f"got {len(scores)} scores for {len(passages)} candidates")
        return [as_number(s, "score") for s in scores]


def remote_score_batch(endpoint: str, query: str, passages: Sequence[tuple[str, str]],
                       timeout: float = 10.0) -> list[float]:
    return RemoteScorer(endpoint, timeout).score_batch(query, passages)
