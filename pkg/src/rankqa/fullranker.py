"""In-memory inverted index with Okapi BM25 scoring.

score(D, Q) = sum over q in Q of
    idf(q) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * |D| / avgdl))
with idf(q) = ln(1 + (N - df + 0.5) / (df + 0.5)), which is never negative.
Repeated query terms contribute once per occurrence.
"""

from __future__ import annotations

import enum
import math
import re
import struct
import sys
from array import array
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import islice
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .corpus import Passage
from .errors import RankQAError

MAGIC = b"RKQAIDX1"
FORMAT_VERSION = 1

TOKEN_PATTERN = re.compile(r"[^\W_]+")

# A short English stopword list; only used when IndexParams.stopwords is set.
STOPWORDS = frozenset("""
a about an and are as at be but by for from has have he her his how i if in into is it
its of on or she so that the their them then there these they this to was were what when
where which who why will with you your
""".split())


class DuplicatePassageId(RankQAError):
    pass


class UnknownOrdinal(RankQAError):
    pass


class EmptyIndex(RankQAError):
    pass


class CorruptIndex(RankQAError):
    pass


class VersionMismatch(RankQAError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    return TOKEN_PATTERN.findall(text.lower())


def s_stem(term: str) -> str:
    """Harman's S-stemmer: strips common English plural endings."""
    if len(term) > 3 and term.endswith("ies") and not term.endswith(("eies", "aies")):
        return term[:-3] + "y"
    if len(term) > 3 and term.endswith("es") and not term.endswith(("aes", "ees", "oes")):
        return term[:-1]
    if len(term) > 2 and term.endswith("s") and not term.endswith(("us", "ss")):
        return term[:-1]
    return term


@dataclass(frozen=True)
class IndexParams:
    k1: float = 1.2
    b: float = 0.75
    stopwords: bool = False
    stem: bool = False

    def __post_init__(self):
        if self.k1 < 0 or not 0 <= self.b <= 1:
            raise ValueError(f"need k1 >= 0 and 0 <= b <= 1, got k1={self.k1} b={self.b}")

    def analyze(self, text: str) -> list[str]:
        terms = tokenize(text)
        if self.stopwords:
            terms = [t for t in terms if t not in STOPWORDS]
        if self.stem:
            terms = [s_stem(t) for t in terms]
        return terms


class Stage(enum.Enum):
    FULL_RANK = "FullRank"
    RERANK = "ReRank"


@dataclass
class RankedList:
    query_id: str
    stage: Stage
    entries: list[tuple[str, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def passage_ids(self) -> list[str]:
        return [pid for pid, _ in self.entries]


def ranking_key(entry: tuple[str, float]):
    """Sort key: score descending, then passage id ascending."""
    return (-entry[1], entry[0])


class InvertedIndex:
    """Postings, document lengths and the ordinal <-> passage id table.

    Postings for a term are two parallel uint32 arrays (ordinals ascending,
    term frequencies).
    """

    def __init__(self, params: IndexParams, id_table: list[str], doc_lengths: array,
                 postings: dict[str, tuple[array, array]]):
        self.params = params
        self.id_table = id_table
        self.doc_lengths = doc_lengths
        self.postings = postings
        self.ordinal_of = {pid: i for i, pid in enumerate(id_table)}
        self.doc_count = len(id_table)
        self.avg_doc_length = math.fsum(doc_lengths) / self.doc_count if self.doc_count else 0.0
        self._lengths_np = np.frombuffer(doc_lengths, dtype=np.uint32).astype(np.float64) if self.doc_count else np.zeros(0)
        self._norm = None

    def __len__(self) -> int:
        return self.doc_count

    def df(self, term: str) -> int:
        entry = self.postings.get(term)
        return len(entry[0]) if entry else 0

    def tf(self, term: str, ordinal: int) -> int:
        entry = self.postings.get(term)
        if not entry:
            return 0
        ords = np.frombuffer(entry[0], dtype=np.uint32)
        pos = int(np.searchsorted(ords, ordinal))
        if pos < len(ords) and ords[pos] == ordinal:
            return entry[1][pos]
        return 0

    def idf(self, term: str) -> float:
        df = self.df(term)
        return math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))

    def length_norm(self) -> np.ndarray:
        """k1 * (1 - b + b * |D| / avgdl) for every ordinal."""
        if self._norm is None:
            k1, b = self.params.k1, self.params.b
            if self.doc_count and self.avg_doc_length > 0:
                self._norm = k1 * (1 - b + b * self._lengths_np / self.avg_doc_length)
            else:
                self._norm = np.full(self.doc_count, k1 * (1 - b))
        return self._norm


class _PartialIndex:
    def __init__(self, base: int = 0):
        self.base = base
        self.ids: list[str] = []
        self.lengths = array("I")
        self.postings: dict[str, tuple[array, array]] = defaultdict(lambda: (array("I"), array("I")))

    def add(self, passage_id: str, terms: list[str]) -> None:
        ordinal = self.base + len(self.ids)
        self.ids.append(passage_id)
        self.lengths.append(len(terms))
        for term, count in Counter(terms).items():
            ords, tfs = self.postings[term]
            ords.append(ordinal)
            tfs.append(count)


def _build_partial(args) -> tuple[list[str], array, dict]:
    base, params, batch = args
    part = _PartialIndex(base)
    for pid, text in batch:
        part.add(pid, params.analyze(text))
    return part.ids, part.lengths, dict(part.postings)


def _batches(passages: Iterable[Passage], size: int) -> Iterator[list[tuple[str, str]]]:
    it = iter(passages)
    while True:
        batch = [(p.passage_id, p.text) for p in islice(it, size)]
        if not batch:
            return
        yield batch


def build_index(passages: Iterable[Passage], params: IndexParams | None = None,
                workers: int = 1, batch_size: int = 50_000) -> InvertedIndex:
    """Index a stream of passages; ordinals follow stream order.

    With ``workers > 1`` batches are indexed in worker processes and the
    partial postings concatenated in batch order, which keeps every postings
    list sorted by ordinal.
    """
    params = params or IndexParams()
    ids: list[str] = []
    seen: set[str] = set()
    lengths = array("I")
    postings: dict[str, tuple[array, array]] = {}

    def merge(part_ids, part_lengths, part_postings):
        for pid in part_ids:
            if pid in seen:
                raise DuplicatePassageId(f"passage id {pid!r} appears twice")
            seen.add(pid)
        ids.extend(part_ids)
        lengths.extend(part_lengths)
        for term, (ords, tfs) in part_postings.items():
            if term in postings:
                postings[term][0].extend(ords)
                postings[term][1].extend(tfs)
            else:
                postings[term] = (ords, tfs)

    if workers <= 1:
        for batch in _batches(passages, batch_size):
            merge(*_build_partial((len(ids), params, batch)))
    else:
        # bases are assigned up front, so batch sizes must be known before submit
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = []
            base = 0
            for batch in _batches(passages, batch_size):
                futures.append(pool.submit(_build_partial, (base, params, batch)))
                base += len(batch)
            for fut in futures:
                merge(*fut.result())
    return InvertedIndex(params, ids, lengths, postings)


def bm25_score(index: InvertedIndex, query_terms: list[str], ordinal: int) -> float:
    if index.doc_count == 0:
        raise EmptyIndex("cannot score against an empty index")
    if not 0 <= ordinal < index.doc_count:
        raise UnknownOrdinal(f"ordinal {ordinal} not in index of size {index.doc_count}")
    k1 = index.params.k1
    norm = index.length_norm()[ordinal]
    score = 0.0
    for term in query_terms:
        tf = index.tf(term, ordinal)
        if tf:
            score += index.idf(term) * (tf * (k1 + 1)) / (tf + norm)
    return float(score)


def score_all(index: InvertedIndex, query_terms: list[str]) -> tuple[np.ndarray, np.ndarray]:
    """Ordinals matching at least one query term, and their BM25 scores."""
    if index.doc_count == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    k1 = index.params.k1
    norm = index.length_norm()
    scores = np.zeros(index.doc_count)
    touched = []
    for term in query_terms:
        entry = index.postings.get(term)
        if not entry:
            continue
        ords = np.frombuffer(entry[0], dtype=np.uint32).astype(np.int64)
        tfs = np.frombuffer(entry[1], dtype=np.uint32).astype(np.float64)
        scores[ords] += index.idf(term) * (tfs * (k1 + 1)) / (tfs + norm[ords])
        touched.append(ords)
    if not touched:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    ords = np.unique(np.concatenate(touched))
    return ords, scores[ords]


def search(index: InvertedIndex, query: str, top_n: int, query_id: str = "") -> RankedList:
    """Top ``top_n`` passages by BM25, ties broken by ascending passage id.

    Only passages sharing at least one term with the query are returned, so an
    all-out-of-vocabulary query (or an empty index) yields an empty list.
    """
    if top_n < 1:
        raise ValueError(f"top_n must be >= 1, got {top_n}")
    ords, scores = score_all(index, index.params.analyze(query))
    if len(ords) > top_n:
        # keep everything tied with the cut-off score so the id tie-break is exact
        kth = np.partition(scores, len(scores) - top_n)[len(scores) - top_n]
        keep = scores >= kth
        ords, scores = ords[keep], scores[keep]
    entries = sorted(((index.id_table[o], float(s)) for o, s in zip(ords, scores)), key=ranking_key)
    return RankedList(query_id, Stage.FULL_RANK, entries[:top_n])


def format_run_lines(ranked: RankedList, run_tag: str) -> list[str]:
    """TREC run lines: ``qid Q0 passage_id rank score run_tag``."""
    return [
        f"{ranked.query_id} Q0 {pid} {rank} {score:.6f} {run_tag}"
        for rank, (pid, score) in enumerate(ranked.entries, start=1)
    ]


def read_run(path) -> dict[str, list[str]]:
    """Parse a TREC run file into qid -> passage ids ordered by rank."""
    from .corpus import MalformedLine, open_text

    rows: dict[str, list[tuple[int, str]]] = {}
    with open_text(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 6:
                raise MalformedLine(path, line_no, f"expected 6 fields, got {len(fields)}")
            try:
                rank = int(fields[3])
            except ValueError:
                raise MalformedLine(path, line_no, f"rank {fields[3]!r} is not an integer") from None
            rows.setdefault(fields[0], []).append((rank, fields[2]))
    return {qid: [pid for _, pid in sorted(entries)] for qid, entries in rows.items()}


# Index file layout (little endian):
#   magic      8 bytes  b"RKQAIDX1"
#   version    u8
#   k1, b      f64, f64
#   flags      u8       bit0 stopwords, bit1 stem
#   N          u32
#   N x        (u32 byte length, utf-8 passage id)
#   N x u32    document lengths
#   T          u32      number of terms
#   T x        (u32 byte length, utf-8 term, u32 df, df x u32 ordinals, df x u32 tfs)

_HEAD = struct.Struct("<8sBddBI")
_U32 = struct.Struct("<I")


def _u32_bytes(values: array) -> bytes:
    return np.asarray(values, dtype="<u4").tobytes()


def save_index(index: InvertedIndex, path) -> None:
    p = index.params
    flags = (1 if p.stopwords else 0) | (2 if p.stem else 0)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, FORMAT_VERSION, p.k1, p.b, flags, index.doc_count))
        for pid in index.id_table:
            raw = pid.encode("utf-8")
            fh.write(_U32.pack(len(raw)) + raw)
        fh.write(_u32_bytes(index.doc_lengths))
        fh.write(_U32.pack(len(index.postings)))
        for term in sorted(index.postings):
            ords, tfs = index.postings[term]
            raw = term.encode("utf-8")
            fh.write(_U32.pack(len(raw)) + raw + _U32.pack(len(ords)))
            fh.write(_u32_bytes(ords))
            fh.write(_u32_bytes(tfs))


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.data):
            raise CorruptIndex("index file is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u32_array(self, count: int) -> array:
        out = array("I")
        out.frombytes(self.take(4 * count))
        if sys.byteorder == "big":
            out.byteswap()
        return out

    def text(self) -> str:
        try:
            return bytes(self.take(self.u32())).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptIndex(f"invalid utf-8 in index: {exc}") from exc


def load_index(path) -> InvertedIndex:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise CorruptIndex(f"{path} is not a rankqa index (bad magic bytes)")
    if len(data) < _HEAD.size:
        raise CorruptIndex("index header is truncated")
    _, version, k1, b, flags, n = _HEAD.unpack_from(data)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"index format version {version}, expected {FORMAT_VERSION}")
    reader = _Reader(data)
    reader.pos = _HEAD.size
    try:
        params = IndexParams(k1, b, bool(flags & 1), bool(flags & 2))
    except ValueError as exc:
        raise CorruptIndex(str(exc)) from exc
    ids = [reader.text() for _ in range(n)]
    lengths = reader.u32_array(n)
    postings = {}
    for _ in range(reader.u32()):
        term = reader.text()
        df = reader.u32()
        ords = reader.u32_array(df)
        tfs = reader.u32_array(df)
        check = np.frombuffer(ords, dtype=np.uint32)
        if df and (check[-1] >= n or np.any(np.diff(check.astype(np.int64)) <= 0)):
            raise CorruptIndex(f"postings for {term!r} are out of range or unsorted")
        postings[term] = (ords, tfs)
    if reader.pos != len(data):
        raise CorruptIndex("trailing bytes after postings")
    if len(set(ids)) != n:
        raise CorruptIndex("duplicate passage ids in id table")
    return InvertedIndex(params, ids, lengths, postings)
