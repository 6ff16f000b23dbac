"""Answer extraction over the top re-ranked passage(s), widened to full sentences."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

from .corpus import Passage
from .errors import ProtocolError, RankQAError
from .fullranker import InvertedIndex, tokenize
from .remote import JsonClient, as_number


class ExtractorFailure(RankQAError):
    pass


class EmptyContext(RankQAError):
    pass


class Extractor(Protocol):
    def extract(self, query: str, context: str) -> tuple[int, int, float]:
        ...


@dataclass(frozen=True)
class AnswerPrediction:
    query_id: str
    passage_id: str
    span_begin: int
    span_end: int
    span_text: str
    sentence_begin: int
    sentence_end: int
    sentence_text: str
    confidence: float


# Titles that end in a period but rarely end a sentence.
ABBREVIATIONS = frozenset({
    "dr", "mr", "mrs", "ms", "prof", "sr", "jr", "st", "mt", "no", "vs", "etc",
    "fig", "figs", "al", "approx", "dept", "inc", "ltd", "co", "corp", "gen", "gov",
})


def _is_abbreviation(text: str, dot: int) -> bool:
    start = dot
    while start > 0 and text[start - 1].isalpha():
        start -= 1
    word = text[start:dot]
    if not word or (start > 0 and not (text[start - 1].isspace() or text[start - 1] in "(\"'")):
        return False
    if len(word) == 1 and word.isupper():
        return True
    return word.lower() in ABBREVIATIONS


def segment_sentences(text: str) -> list[tuple[int, int]]:
    """Sentence intervals ``[begin, end)`` in character offsets.

    A sentence ends after '.', '!' or '?' when the next characters are
    whitespace followed by an uppercase letter or digit, or only whitespace up
    to the end of the text. A period after a single capital letter ("J.") or a
    title such as "Dr." does not end a sentence. Intervals are trimmed of
    surrounding whitespace and together cover every non-whitespace character.
    """
    bounds = []
    n = len(text)
    start = 0
    i = 0
    while i < n:
        ch = text[i]
        if ch in ".!?":
            j = i + 1
            while j < n and text[j].isspace():
                j += 1
            if j == n:
                break
            if j > i + 1 and (text[j].isupper() or text[j].isdigit()):
                if not (ch == "." and _is_abbreviation(text, i)):
                    bounds.append((start, i + 1))
                    start = j
                    i = j
                    continue
        i += 1
    bounds.append((start, n))
    out = []
    for b, e in bounds:
        while b < e and text[b].isspace():
            b += 1
        while e > b and text[e - 1].isspace():
            e -= 1
        if b < e:
            out.append((b, e))
    return out


def expand_to_sentences(context: str, begin: int, end: int,
                        sentences: list[tuple[int, int]] | None = None) -> tuple[int, int]:
    """Smallest run of whole sentences covering ``[begin, end)``.

    A span touching several sentences yields their union. A span that falls
    only on inter-sentence whitespace takes its neighbouring sentences.
    """
    if sentences is None:
        sentences = segment_sentences(context)
    if not sentences:
        return begin, end
    if begin == end:
        touched = [s for s in sentences if s[0] <= begin <= s[1]][:1]
    else:
        touched = [s for s in sentences if s[0] < end and s[1] > begin]
    if not touched:
        before = [s for s in sentences if s[1] <= begin]
        after = [s for s in sentences if s[0] >= end]
        touched = before[-1:] + after[:1]
    lo = min(touched[0][0], begin)
    hi = max(touched[-1][1], end)
    return lo, hi


def answer_question(extractor: Extractor, query: str, passage: Passage, query_id: str = "") -> AnswerPrediction:
    context = passage.text
    if not context:
        raise EmptyContext(f"passage {passage.passage_id!r} has no text")
    try:
        begin, end, confidence = extractor.extract(query, context)
        begin, end = int(begin), int(end)
        confidence = float(confidence)
    except Exception as exc:
        raise ExtractorFailure(f"extractor failed on passage {passage.passage_id!r}: {exc}") from exc
    if not 0 <= begin <= end <= len(context):
        raise ExtractorFailure(f"extractor returned span [{begin}, {end}) outside context of length {len(context)}")
    s_begin, s_end = expand_to_sentences(context, begin, end)
    return AnswerPrediction(
        query_id=query_id,
        passage_id=passage.passage_id,
        span_begin=begin,
        span_end=end,
        span_text=context[begin:end],
        sentence_begin=s_begin,
        sentence_end=s_end,
        sentence_text=context[s_begin:s_end],
        confidence=confidence,
    )


def answer_top_k(extractor: Extractor, query: str, passages: Sequence[Passage], query_id: str = "") -> AnswerPrediction:
    """Answer from each passage and keep the most confident; ties go to the higher-ranked passage."""
    if not passages:
        raise EmptyContext("no passages to answer from")
    best = None
    for passage in passages:
        pred = answer_question(extractor, query, passage, query_id)
        if best is None or pred.confidence > best.confidence:
            best = pred
    return best


def baseline_extract(query: str, context: str, idf: Callable[[str], float],
                     analyze: Callable[[str], list[str]] = tokenize) -> tuple[int, int, float]:
    """Pick the sentence with the highest idf-weighted query overlap.

    Sentence score is the summed idf of distinct query terms it contains,
    divided by sqrt(sentence token count); the winning score is returned as
    the confidence. Ties go to the earliest sentence.
    """
    sentences = segment_sentences(context)
    if not sentences:
        return 0, 0, 0.0
    query_terms = set(analyze(query))
    best, best_score = sentences[0], -1.0
    for begin, end in sentences:
        terms = analyze(context[begin:end])
        if terms:
            present = sorted(query_terms.intersection(terms))
            score = math.fsum(idf(t) for t in present) / math.sqrt(len(terms))
        else:
            score = 0.0
        if score > best_score:
            best, best_score = (begin, end), score
    return best[0], best[1], best_score


class BaselineExtractor:
    def __init__(self, index: InvertedIndex):
        self.index = index

    def extract(self, query: str, context: str) -> tuple[int, int, float]:
        return baseline_extract(query, context, self.index.idf, self.index.params.analyze)


class RemoteExtractor:
    """Client for ``POST {endpoint}/v1/extract``."""

    def __init__(self, endpoint: str, timeout: float = 10.0, max_in_flight: int = 4):
        self.client = JsonClient(endpoint, timeout, max_in_flight)

    @property
    def endpoint(self) -> str:
        return self.client.endpoint

    def extract(self, query: str, context: str) -> tuple[int, int, float]:
        doc = self.client.post("/v1/extract", {"query": query, "context": context})
        for key in ("begin", "end", "score"):
            if key not in doc:
                raise ProtocolError(f"response missing {key!r}")
        begin, end = doc["begin"], doc["end"]
        if any(isinstance(v, bool) or not isinstance(v, int) for v in (begin, end)):
            raise ProtocolError(f"offsets must be integers, got begin={begin!r} end={end!r}")
        if not 0 <= begin <= end <= len(context):
            raise ProtocolError(f"invalid span [{begin}, {end}) for context of length {len(context)}")
        return begin, end, as_number(doc["score"], "score")


def remote_extract(endpoint: str, query: str, context: str, timeout: float = 10.0) -> tuple[int, int, float]:
    return RemoteExtractor(endpoint, timeout).extract(query, context)


def format_prediction_line(pred: AnswerPrediction | None, query_id: str) -> str:
    """``qid<TAB>passage_id<TAB>sentence_text``; tabs and newlines become spaces."""
    if pred is None:
        return f"{query_id}\t\t"
    sentence = " ".join(pred.sentence_text.split())
    return f"{query_id}\t{pred.passage_id}\t{sentence}"
