"""Ranking and QA metrics, report assembly and table rendering."""

from __future__ import annotations

import json
import math
import string
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import MalformedLine, open_text
from .errors import RankQAError
from .fullranker import RankedList

BLEU_EPSILON = 1e-9
QA_METRICS = ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "precision", "recall", "f1")


class NoJudgments(RankQAError):
    pass


class DimensionMismatch(RankQAError):
    pass


# ---------------------------------------------------------------- ranking


def reciprocal_rank_at_n(ranking: Sequence[str], relevant: set[str], n: int) -> float:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    for pos, pid in enumerate(ranking[:n], start=1):
        if pid in relevant:
            return 1.0 / pos
    return 0.0


def recall_at_n(ranking: Sequence[str], relevant: set[str], n: int) -> float:
    if not relevant:
        raise NoJudgments("recall is undefined without relevant passages")
    return len(set(ranking[:n]) & relevant) / len(relevant)


# ---------------------------------------------------------------- text QA

_ARTICLES = {"a", "an", "the"}


def _is_punct(ch: str) -> bool:
    return ch in string.punctuation or unicodedata.category(ch).startswith("P")


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation and the articles a/an/the, collapse whitespace."""
    text = "".join(ch for ch in text.lower() if not _is_punct(ch))
    return " ".join(t for t in text.split() if t not in _ARTICLES)


def qa_tokens(text: str) -> list[str]:
    return normalize_answer(text).split()


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(prediction: str, references: Sequence[str], max_n: int = 4) -> float:
    """Sentence BLEU with uniform weights over orders 1..max_n.

    Clipping uses the max count of each n-gram over all references, the
    brevity penalty uses the reference length closest to the prediction
    (shorter wins ties), and an order with zero matches contributes
    ``BLEU_EPSILON`` instead of zero. Orders longer than the prediction itself
    have no n-grams at all and are left out of the mean.
    """
    if not 1 <= max_n <= 4:
        raise ValueError(f"max_n must be in 1..4, got {max_n}")
    pred = qa_tokens(prediction)
    refs = [qa_tokens(r) for r in references]
    if not pred or not refs:
        return 0.0
    orders = min(max_n, len(pred))
    log_sum = 0.0
    for n in range(1, orders + 1):
        pred_counts = _ngrams(pred, n)
        max_ref: Counter = Counter()
        for ref in refs:
            max_ref |= _ngrams(ref, n)
        matched = sum(min(c, max_ref[g]) for g, c in pred_counts.items())
        total = len(pred) - n + 1
        log_sum += math.log(matched / total if matched else BLEU_EPSILON)
    ref_len = min((len(r) for r in refs), key=lambda r: (abs(r - len(pred)), r))
    bp = min(1.0, math.exp(1 - ref_len / len(pred)))
    return bp * math.exp(log_sum / orders)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(prediction: str, references: Sequence[str]) -> float:
    """LCS-based F-measure (beta = 1), max over references."""
    pred = qa_tokens(prediction)
    best = 0.0
    for ref in references:
        ref = qa_tokens(ref)
        if not pred or not ref:
            continue
        lcs = lcs_length(pred, ref)
        if lcs == 0:
            continue
        p, r = lcs / len(pred), lcs / len(ref)
        best = max(best, 2 * p * r / (p + r))
    return best


def token_prf(prediction: str, references: Sequence[str]) -> tuple[float, float, float]:
    """Bag-of-tokens precision, recall and F1 against the best-F1 reference."""
    pred = Counter(qa_tokens(prediction))
    best = (0.0, 0.0, 0.0)
    for ref in references:
        ref = Counter(qa_tokens(ref))
        matched = sum((pred & ref).values())
        if matched == 0:
            continue
        p = matched / sum(pred.values())
        r = matched / sum(ref.values())
        f1 = 2 * p * r / (p + r)
        if f1 > best[2]:
            best = (p, r, f1)
    return best


class EmbeddingTable:
    """Word vectors keyed by lowercased word.

    File format: one ``word v1 ... vd`` line per entry, space separated. A
    leading ``count dim`` header line (word2vec text format) is skipped.
    """

    def __init__(self, vectors: Mapping[str, Sequence[float]]):
        self.vectors: dict[str, np.ndarray] = {}
        self.dim = None
        for word, vec in vectors.items():
            vec = np.asarray(vec, dtype=np.float64)
            if vec.ndim != 1:
                raise DimensionMismatch(f"vector for {word!r} is not one-dimensional")
            if self.dim is None:
                self.dim = len(vec)
            elif len(vec) != self.dim:
                raise DimensionMismatch(f"vector for {word!r} has dimension {len(vec)}, expected {self.dim}")
            self.vectors.setdefault(word.lower(), vec)

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        vectors = {}
        dim = None
        with open_text(path) as fh:
            for line_no, line in enumerate(fh, start=1):
                fields = line.rstrip("\r\n").split(" ")
                if not line.strip():
                    continue
                if line_no == 1 and len(fields) == 2 and all(f.isdigit() for f in fields):
                    continue
                try:
                    vec = [float(v) for v in fields[1:]]
                except ValueError:
                    raise DimensionMismatch(f"{path}:{line_no}: non-numeric vector component") from None
                if not vec:
                    raise DimensionMismatch(f"{path}:{line_no}: entry has no vector")
                if dim is None:
                    dim = len(vec)
                elif len(vec) != dim:
                    raise DimensionMismatch(f"{path}:{line_no}: dimension {len(vec)}, expected {dim}")
                vectors.setdefault(fields[0].lower(), vec)
        return cls(vectors)

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def mean_vector(self, tokens: Iterable[str]) -> np.ndarray | None:
        found = [self.vectors[t.lower()] for t in tokens if t.lower() in self.vectors]
        if not found:
            return None
        return np.mean(found, axis=0)


def semantic_similarity(prediction: str, reference: str, table: EmbeddingTable) -> float:
    """Cosine between mean in-vocabulary word vectors; 0.0 if either side has none."""
    a = table.mean_vector(qa_tokens(prediction))
    b = table.mean_vector(qa_tokens(reference))
    if a is None or b is None:
        return 0.0
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


# ---------------------------------------------------------------- reports


@dataclass
class EvalReport:
    per_query: dict[str, dict[str, float]] = field(default_factory=dict)
    aggregate: dict[str, float] = field(default_factory=dict)
    evaluated: int = 0
    skipped: int = 0
    config: dict = field(default_factory=dict)

    @classmethod
    def from_per_query(cls, per_query: dict[str, dict[str, float]], skipped: int = 0,
                       config: dict | None = None, metrics: Sequence[str] = ()) -> "EvalReport":
        names = list(metrics)
        for values in per_query.values():
            names += [m for m in values if m not in names]
        aggregate = {
            m: (math.fsum(v[m] for v in per_query.values()) / len(per_query)) if per_query else 0.0
            for m in names
        }
        return cls(per_query, aggregate, len(per_query), skipped, dict(config or {}))

    def to_dict(self) -> dict:
        return {
            "aggregate": self.aggregate,
            "counts": {"evaluated": self.evaluated, "skipped": self.skipped},
            "config": self.config,
            "per_query": self.per_query,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        return cls(doc["per_query"], doc["aggregate"], doc["counts"]["evaluated"],
                   doc["counts"]["skipped"], doc.get("config", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"


def _ids(ranking) -> list[str]:
    if isinstance(ranking, RankedList):
        return ranking.passage_ids
    return list(ranking)


def evaluate_run(run: Mapping[str, Sequence[str] | RankedList], qrels: Mapping[str, set[str]],
                 n_values: Sequence[int] = (10, 100), query_ids: Sequence[str] | None = None) -> EvalReport:
    """Per-query RR@n and Recall@n; run queries without judgments are skipped.

    ``query_ids`` lists every query that was searched. A TREC run file has no
    lines for a query that retrieved nothing, so passing the full list makes
    such queries count as empty rankings instead of vanishing.
    """
    per_query = {}
    skipped = 0
    metrics = [f"mrr@{n}" for n in n_values] + [f"recall@{n}" for n in n_values]
    if query_ids is not None:
        full = {qid: run.get(qid, []) for qid in query_ids}
        full.update((qid, ranking) for qid, ranking in run.items() if qid not in full)
        run = full
    for qid, ranking in run.items():
        relevant = qrels.get(qid)
        if not relevant:
            skipped += 1
            continue
        ids = _ids(ranking)
        values = {}
        for n in n_values:
            values[f"mrr@{n}"] = reciprocal_rank_at_n(ids, relevant, n)
        for n in n_values:
            values[f"recall@{n}"] = recall_at_n(ids, relevant, n)
        per_query[qid] = values
    return EvalReport.from_per_query(per_query, skipped, {"n_values": list(n_values)}, metrics)


def qa_metrics(prediction: str, references: Sequence[str], table: EmbeddingTable | None = None) -> dict[str, float]:
    values = {f"bleu{n}": bleu_n(prediction, references, n) for n in range(1, 5)}
    values["rouge_l"] = rouge_l(prediction, references)
    values["precision"], values["recall"], values["f1"] = token_prf(prediction, references)
    if table is not None:
        values["semantic_sim"] = max(semantic_similarity(prediction, r, table) for r in references)
    return values


def evaluate_qa(predictions: Mapping[str, str], answers: Mapping[str, Sequence[str]],
                table: EmbeddingTable | None = None) -> EvalReport:
    """QA metrics per predicted query; queries without references are skipped.

    ``semantic_sim`` is only reported when an embedding table is given.
    """
    per_query = {}
    skipped = 0
    for qid, text in predictions.items():
        refs = answers.get(qid)
        if not refs:
            skipped += 1
            continue
        per_query[qid] = qa_metrics(text, refs, table)
    metrics = list(QA_METRICS) + (["semantic_sim"] if table is not None else [])
    config = {"bleu_smoothing": f"epsilon={BLEU_EPSILON:g}", "rouge_beta": 1}
    return EvalReport.from_per_query(per_query, skipped, config, metrics)


def read_predictions(path) -> dict[str, str]:
    """``qid<TAB>passage_id<TAB>sentence`` lines to qid -> sentence."""
    out = {}
    with open_text(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise MalformedLine(path, line_no, f"expected 3 tab-separated fields, got {len(fields)}")
            out[fields[0]] = fields[2]
    return out


# ---------------------------------------------------------------- tables


def render_table(headers: Sequence[str], rows: Sequence[Sequence], title: str | None = None) -> str:
    """Fixed-width text table; floats are shown with two decimals."""
    cells = [[f"{v:.2f}" if isinstance(v, float) else str(v) for v in row] for row in rows]
    widths = [max([len(h)] + [len(r[i]) for r in cells]) for i, h in enumerate(headers)]
    rule = "+" + "+".join("-" * (w + 2) for w in widths) + "+"

    def line(values):
        return "| " + " | ".join(v.rjust(w) for v, w in zip(values, widths)) + " |"

    out = []
    if title:
        out.append(title)
    out += [rule, line(headers), rule]
    out += [line(r) for r in cells]
    out.append(rule)
    return "\n".join(out) + "\n"


def render_ranking_table(rows: Sequence[dict], n_values: Sequence[int] = (10, 100)) -> str:
    """Rows carry rerank_size, time_per_query_s and full_rank/rerank EvalReports."""
    metric_names = [f"mrr@{n}" for n in n_values] + [f"recall@{n}" for n in n_values]
    headers = ["rerank size", "time/query (s)"]
    headers += [f"FR {m}" for m in metric_names] + [f"RR {m}" for m in metric_names]
    body = []
    for row in rows:
        values = [row["rerank_size"], f"{row['time_per_query_s']:.4f}"]
        values += [float(row["full_rank"].aggregate.get(m, 0.0)) for m in metric_names]
        values += [float(row["rerank"].aggregate.get(m, 0.0)) for m in metric_names]
        body.append(values)
    return render_table(headers, body, "Full-ranking and re-ranking")


def render_qa_table(rows: Sequence[dict]) -> str:
    metrics = list(QA_METRICS)
    if any("semantic_sim" in row["qa"].aggregate for row in rows):
        metrics.append("semantic_sim")
    headers = ["rerank size"] + metrics
    body = [[row["rerank_size"]] + [float(row["qa"].aggregate.get(m, 0.0)) for m in metrics] for row in rows]
    return render_table(headers, body, "QA")
