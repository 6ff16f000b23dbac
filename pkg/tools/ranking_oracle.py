"""Freeze a TREC run + qrels fixture and its expected MRR@N / Recall@N report.

Standalone linear-scan evaluator; does not import rankqa.

    python tools/ranking_oracle.py  # rewrites tests/fixtures/eval/
"""

import json
import random
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "eval"
N_VALUES = [1, 5, 10, 100]


def scan(ranking, relevant, n):
    first = None
    hits = 0
    position = 0
    for pid in ranking:
        position += 1
        if position > n:
            break
        if pid in relevant:
            hits += 1
            if first is None:
                first = position
    rr = 0.0 if first is None else 1.0 / first
    return rr, hits / len(relevant)


def main(seed=7, n_queries=20, n_passages=300):
    rng = random.Random(seed)
    run_lines, qrel_lines = [], []
    per_query = {}
    run = {}
    for q in range(n_queries):
        qid = str(1000 + q)
        depth = rng.randint(0, 120)
        ranking = rng.sample([f"p{i}" for i in range(n_passages)], depth)
        relevant = set(rng.sample([f"p{i}" for i in range(n_passages)], rng.randint(1, 3)))
        if ranking and rng.random() < 0.6:
            ranking[rng.randrange(min(len(ranking), 15))] = sorted(relevant)[0]
            ranking = list(dict.fromkeys(ranking))
        for rank, pid in enumerate(ranking, start=1):
            run_lines.append(f"{qid} Q0 {pid} {rank} {100.0 - rank:.6f} oracle")
        for pid in sorted(relevant):
            qrel_lines.append(f"{qid} 0 {pid} 1")
        # a judged-irrelevant line that readers must drop
        qrel_lines.append(f"{qid} 0 p{n_passages + q} 0")
        run[qid] = ranking
        values = {}
        for n in N_VALUES:
            values[f"mrr@{n}"] = scan(ranking, relevant, n)[0]
        for n in N_VALUES:
            values[f"recall@{n}"] = scan(ranking, relevant, n)[1]
        per_query[qid] = values
    # a run query with no judgments is skipped
    run_lines.append("9999 Q0 p1 1 1.000000 oracle")

    evaluated = [qid for qid in run if per_query[qid] is not None]
    aggregate = {}
    for name in per_query[evaluated[0]]:
        total = 0.0
        for qid in evaluated:
            total += per_query[qid][name]
        aggregate[name] = total / len(evaluated)

    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / "run.txt").write_text("\n".join(run_lines) + "\n", encoding="utf-8")
    (OUT / "qrels.txt").write_text("\n".join(qrel_lines) + "\n", encoding="utf-8")
    expected = {
        "n_values": N_VALUES,
        "evaluated": len(evaluated),
        "skipped": 1,
        "aggregate": aggregate,
        "per_query": per_query,
    }
    (OUT / "expected_report.json").write_text(json.dumps(expected, indent=1) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
