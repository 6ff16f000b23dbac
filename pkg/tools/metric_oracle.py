"""Freeze expected QA-metric values for the test fixtures.

Deliberately standalone: nothing here imports rankqa. Counting is done with
plain lists and full DP tables so it shares no code path with the library.

    python tools/metric_oracle.py  # rewrites tests/fixtures/qa_metric_pairs.json
"""

import json
import math
import random
import string
import sys
import unicodedata
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "qa_metric_pairs.json"
EPS = 1e-9

WORDS = """the a an cat dog sat on mat virus covid 19 cell protein transmission child mother
infection main cause of is was in priority pass airport lounge access program french word
meaning sadness heart valve missing birth genome strain nucleotides length size kb""".split()
PUNCT = [",", ".", "!", "?", ";", "(", ")", "-", "'s"]


def normalize(text):
    lowered = text.lower()
    kept = []
    for ch in lowered:
        if ch in string.punctuation:
            continue
        if unicodedata.category(ch)[0] == "P":
            continue
        kept.append(ch)
    words = "".join(kept).split()
    return [w for w in words if w not in ("a", "an", "the")]


def ngram_list(tokens, n):
    return [" ".join(tokens[i:i + n]) for i in range(0, len(tokens) - n + 1)]


def bleu(pred_text, ref_texts, max_n):
    pred = normalize(pred_text)
    refs = [normalize(r) for r in ref_texts]
    if len(pred) == 0:
        return 0.0
    usable = max_n if max_n <= len(pred) else len(pred)
    logs = []
    for n in range(1, usable + 1):
        cand = ngram_list(pred, n)
        matched = 0
        for g in set(cand):
            ceiling = 0
            for r in refs:
                ceiling = max(ceiling, ngram_list(r, n).count(g))
            matched += min(cand.count(g), ceiling)
        p = matched / len(cand)
        logs.append(math.log(p) if matched > 0 else math.log(EPS))
    best = None
    for r in refs:
        key = (abs(len(r) - len(pred)), len(r))
        if best is None or key < best[0]:
            best = (key, len(r))
    r_len = best[1]
    bp = 1.0 if len(pred) > r_len else math.exp(1 - r_len / len(pred))
    return bp * math.exp(sum(logs) / len(logs))


def lcs_table(x, y):
    table = [[0] * (len(y) + 1) for _ in range(len(x) + 1)]
    for i in range(1, len(x) + 1):
        for j in range(1, len(y) + 1):
            if x[i - 1] == y[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[len(x)][len(y)]


def rouge_l(pred_text, ref_texts):
    pred = normalize(pred_text)
    scores = [0.0]
    for ref_text in ref_texts:
        ref = normalize(ref_text)
        if not pred or not ref:
            continue
        l = lcs_table(pred, ref)
        if l == 0:
            continue
        p = l / len(pred)
        r = l / len(ref)
        scores.append(2 * p * r / (p + r))
    return max(scores)


def prf(pred_text, ref_texts):
    pred = normalize(pred_text)
    best = (0.0, 0.0, 0.0)
    for ref_text in ref_texts:
        ref = normalize(ref_text)
        remaining = list(ref)
        matched = 0
        for tok in pred:
            if tok in remaining:
                remaining.remove(tok)
                matched += 1
        if matched == 0:
            continue
        p = matched / len(pred)
        r = matched / len(ref)
        f = 2 * p * r / (p + r)
        if f > best[2]:
            best = (p, r, f)
    return best


def random_text(rng, lo, hi):
    out = []
    for _ in range(rng.randint(lo, hi)):
        word = rng.choice(WORDS)
        if rng.random() < 0.15:
            word = word.capitalize()
        if rng.random() < 0.1:
            word += rng.choice(PUNCT)
        out.append(word)
    return " ".join(out)


def perturb(rng, text):
    words = text.split()
    out = []
    for w in words:
        roll = rng.random()
        if roll < 0.15:
            continue
        if roll < 0.3:
            out.append(rng.choice(WORDS))
        else:
            out.append(w)
        if rng.random() < 0.1:
            out.append(rng.choice(WORDS))
    return " ".join(out)


def make_pairs(seed=20240521, count=60):
    rng = random.Random(seed)
    pairs = []
    for i in range(count):
        ref = random_text(rng, 1, 18)
        kind = i % 4
        if kind == 0:
            pred = random_text(rng, 0, 18)
        elif kind in (1, 2):
            pred = perturb(rng, ref)
        else:
            pred = ref.upper()
        refs = [ref]
        if i % 5 == 0:
            refs.append(perturb(rng, ref) or random_text(rng, 1, 5))
        pairs.append((pred, refs))
    # hand-picked edge cases
    pairs += [
        ("", ["the cat sat"]),
        ("the cat sat", [""]),
        ("a b c", ["a b d"]),
        ("the cat sat", ["the cat ran"]),
        ("a b b", ["b c"]),
        ("The cat", ["the cat."]),
        ("x", ["x"]),
        ("x y", ["x y z w v"]),
    ]
    return pairs


def main():
    rows = []
    for pred, refs in make_pairs():
        p, r, f = prf(pred, refs)
        rows.append({
            "prediction": pred,
            "references": refs,
            "bleu1": bleu(pred, refs, 1),
            "bleu2": bleu(pred, refs, 2),
            "bleu3": bleu(pred, refs, 3),
            "bleu4": bleu(pred, refs, 4),
            "rouge_l": rouge_l(pred, refs),
            "precision": p,
            "recall": r,
            "f1": f,
        })
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(rows, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {len(rows)} pairs to {OUT}", file=sys.stderr)


if __name__ == "__main__":
    main()
