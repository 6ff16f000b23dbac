"""Brute-force BM25 written straight from the formula, for checking the index.

Nothing here touches the inverted index: every passage is re-tokenized and
scored against every query term by direct counting.
"""

import math
import random
import re

from rankqa.corpus import Passage

VOCAB = ("cat dog mat sat on the a virus covid cell heart valve lounge pass airport word "
         "sadness french greek model theory atresia birth type disease").split()


def oracle_tokens(text):
    return re.findall(r"[^\W_]+", text.lower())


def oracle_scores(docs, query, k1=1.2, b=0.75):
    """docs: {pid: text}. Returns {pid: score} for every passage."""
    toks = {pid: oracle_tokens(text) for pid, text in docs.items()}
    n = len(docs)
    avgdl = sum(len(t) for t in toks.values()) / n if n else 0.0
    scores = {}
    for pid, words in toks.items():
        total = 0.0
        for q in oracle_tokens(query):
            tf = words.count(q)
            if tf == 0:
                continue
            df = sum(1 for other in toks.values() if q in other)
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            total += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(words) / avgdl))
        scores[pid] = total
    return scores


def oracle_search(docs, query, top_n, k1=1.2, b=0.75):
    """Score everything, keep passages sharing a term with the query, sort."""
    qterms = set(oracle_tokens(query))
    scores = oracle_scores(docs, query, k1, b)
    hits = [(pid, s) for pid, s in scores.items() if qterms & set(oracle_tokens(docs[pid]))]
    hits.sort(key=lambda e: (-e[1], e[0]))
    return hits[:top_n]


def random_corpus(rng: random.Random, max_passages=200, max_queries=30):
    n = rng.randint(1, max_passages)
    vocab = rng.sample(VOCAB, rng.randint(3, len(VOCAB)))
    docs = {}
    for i in range(n):
        words = [rng.choice(vocab) for _ in range(rng.randint(0, 40))]
        words = [w.upper() if rng.random() < 0.05 else w for w in words]
        docs[f"p{rng.randrange(10**6):06d}-{i}"] = " ".join(words) + rng.choice(["", ".", "!"])
    queries = []
    for _ in range(rng.randint(1, max_queries)):
        terms = [rng.choice(vocab + ["zebra", "qq"]) for _ in range(rng.randint(1, 6))]
        queries.append(" ".join(terms))
    return docs, queries


def as_passages(docs):
    return [Passage(pid, pid, 0, text) for pid, text in docs.items()]
