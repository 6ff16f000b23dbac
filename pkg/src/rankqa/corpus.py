"""Readers for MS MARCO / CORD-19 style inputs and the sliding-window chunker."""

from __future__ import annotations

import csv
import gzip
import io
import json
import logging
import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator

from .errors import RankQAError

log = logging.getLogger(__name__)

CHUNK_SEP = "#"


class MalformedLine(RankQAError):
    def __init__(self, path, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = path
        self.line_no = line_no


class MalformedManifest(RankQAError):
    pass


class InvalidChunkParams(RankQAError):
    pass


@dataclass(frozen=True)
class Document:
    doc_id: str
    body: str
    title: str | None = None


@dataclass(frozen=True)
class Passage:
    passage_id: str
    doc_id: str
    chunk_index: int
    text: str
    token_begin: int = 0
    token_end: int = 0


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str


@dataclass
class ReadStats:
    """Collects skipped line numbers when a reader runs with ``strict=False``."""

    skipped: list[int] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.skipped)


def open_text(path, mode: str = "r") -> IO[str]:
    """Open a UTF-8 text file, transparently handling a ``.gz`` suffix."""
    path = Path(path)
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, mode.replace("t", "") + "b"), encoding="utf-8", newline="")
    return open(path, mode, encoding="utf-8", newline="")


def split_passage_id(passage_id: str) -> tuple[str, int]:
    """Inverse of the chunk id rule: ``"d#3" -> ("d", 3)``, ``"d" -> ("d", 0)``."""
    doc_id, sep, idx = passage_id.rpartition(CHUNK_SEP)
    if sep and idx.isdigit():
        return doc_id, int(idx)
    return passage_id, 0


def _lines(path) -> Iterator[tuple[int, str]]:
    with open_text(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if line.strip():
                yield line_no, line


def _tab_records(path, strict: bool, stats: ReadStats | None, check_id: bool = False) -> Iterator[tuple[int, str, str]]:
    for line_no, line in _lines(path):
        fields = line.split("\t")
        reason = None
        if len(fields) != 2:
            reason = f"expected 2 tab-separated fields, got {len(fields)}"
        elif not fields[0].strip():
            reason = "empty id"
        elif check_id and CHUNK_SEP in fields[0]:
            reason = f"id {fields[0]!r} contains reserved {CHUNK_SEP!r}"
        if reason is not None:
            if strict:
                raise MalformedLine(path, line_no, reason)
            if stats is not None:
                stats.skipped.append(line_no)
            log.warning("skipping %s:%d: %s", path, line_no, reason)
            continue
        yield line_no, fields[0].strip(), fields[1]


def read_passage_collection(path, strict: bool = True, stats: ReadStats | None = None) -> Iterator[Passage]:
    """Stream ``pid<TAB>text`` lines as native (unchunked) passages."""
    for _, pid, text in _tab_records(path, strict, stats, check_id=True):
        yield Passage(pid, pid, 0, text, 0, len(text.split()))


def read_documents(path, strict: bool = True, stats: ReadStats | None = None) -> Iterator[Document]:
    """Same file layout as a passage collection, read as whole documents for chunking."""
    for _, doc_id, text in _tab_records(path, strict, stats, check_id=True):
        yield Document(doc_id, text)


def read_queries(path, strict: bool = True, stats: ReadStats | None = None) -> Iterator[Query]:
    seen = set()
    for line_no, qid, text in _tab_records(path, strict, stats):
        if qid in seen:
            raise MalformedLine(path, line_no, f"duplicate query id {qid!r}")
        seen.add(qid)
        yield Query(qid, text)


def read_qrels(path) -> dict[str, set[str]]:
    """TREC qrels, ``qid 0 pid rel``; judgments with rel <= 0 are dropped."""
    qrels: dict[str, set[str]] = defaultdict(set)
    for line_no, line in _lines(path):
        fields = line.split()
        if len(fields) != 4:
            raise MalformedLine(path, line_no, f"expected 4 fields, got {len(fields)}")
        qid, _, pid, rel = fields
        try:
            rel = int(rel)
        except ValueError:
            raise MalformedLine(path, line_no, f"relevance {rel!r} is not an integer") from None
        if rel > 0:
            qrels[qid].add(pid)
    return dict(qrels)


def read_answers(path) -> dict[str, list[str]]:
    """``qid<TAB>answer`` lines; a repeated qid adds another reference."""
    answers: dict[str, list[str]] = defaultdict(list)
    for _, qid, text in _tab_records(path, strict=True, stats=None):
        answers[qid].append(text)
    return dict(answers)


def write_queries(queries: Iterable[Query], path) -> None:
    with open_text(path, "w") as fh:
        for q in queries:
            fh.write(f"{q.query_id}\t{q.text}\n")


def write_qrels(qrels: dict[str, set[str]], path) -> None:
    with open_text(path, "w") as fh:
        for qid in qrels:
            for pid in sorted(qrels[qid]):
                fh.write(f"{qid} 0 {pid} 1\n")


def _fulltext_path(row: dict, fulltext_dir: Path) -> Path:
    # CORD-19 metadata points at parsed JSON via pdf_json_files / pmc_json_files,
    # possibly several joined by "; ". Fall back to <cord_uid>.json.
    for column in ("pdf_json_files", "pmc_json_files"):
        value = (row.get(column) or "").strip()
        if value:
            candidate = fulltext_dir / value.split(";")[0].strip()
            if candidate.exists():
                return candidate
            name_only = fulltext_dir / Path(value.split(";")[0].strip()).name
            if name_only.exists():
                return name_only
    return fulltext_dir / f"{row['cord_uid']}.json"


def _paragraphs(path: Path) -> list[str] | None:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        return None
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        log.warning("unreadable full text %s (%s); using title only", path, exc)
        return None
    body = doc.get("body_text", []) if isinstance(doc, dict) else []
    return [p["text"] for p in body if isinstance(p, dict) and isinstance(p.get("text"), str)]


def read_cord_corpus(metadata_path, fulltext_dir) -> Iterator[Document]:
    """Documents from a CORD-19 ``metadata.csv`` plus its parsed-JSON directory.

    body = title and paragraphs joined with single newlines. Rows without a
    readable full-text file degrade to a title-only body.
    """
    fulltext_dir = Path(fulltext_dir)
    if not fulltext_dir.is_dir() or not os.access(fulltext_dir, os.R_OK | os.X_OK):
        raise MalformedManifest(f"full-text directory {fulltext_dir} is not readable")
    try:
        fh = open_text(metadata_path)
    except OSError as exc:
        raise MalformedManifest(f"cannot open manifest {metadata_path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"cord_uid", "title"} <= set(reader.fieldnames):
            raise MalformedManifest("manifest needs 'cord_uid' and 'title' columns")
        seen = set()
        for row_no, row in enumerate(reader, start=2):
            doc_id = (row.get("cord_uid") or "").strip()
            if not doc_id or CHUNK_SEP in doc_id:
                raise MalformedManifest(f"row {row_no}: invalid cord_uid {doc_id!r}")
            if doc_id in seen:
                raise MalformedManifest(f"row {row_no}: duplicate cord_uid {doc_id!r}")
            seen.add(doc_id)
            title = (row.get("title") or "").strip()
            paragraphs = _paragraphs(_fulltext_path(row, fulltext_dir)) or []
            parts = [title] if title else []
            parts += paragraphs
            yield Document(doc_id, "\n".join(parts), title or None)


def chunk_document(doc: Document, window: int = 60, overlap: int = 15) -> list[Passage]:
    """Split ``doc.body`` into overlapping whitespace-token windows.

    Chunk k starts at token k*(window-overlap); chunking stops once a chunk
    reaches the last token, so a document of at most ``window`` tokens gives a
    single chunk and an empty body gives none.
    """
    if window <= overlap or overlap < 0:
        raise InvalidChunkParams(f"need window > overlap >= 0, got window={window} overlap={overlap}")
    tokens = doc.body.split()
    step = window - overlap
    chunks = []
    start = 0
    while start < len(tokens):
        end = min(start + window, len(tokens))
        chunks.append(Passage(
            passage_id=f"{doc.doc_id}{CHUNK_SEP}{len(chunks)}",
            doc_id=doc.doc_id,
            chunk_index=len(chunks),
            text=" ".join(tokens[start:end]),
            token_begin=start,
            token_end=end,
        ))
        if end == len(tokens):
            break
        start += step
    return chunks


def chunk_documents(docs: Iterable[Document], window: int = 60, overlap: int = 15) -> Iterator[Passage]:
    for doc in docs:
        yield from chunk_document(doc, window, overlap)
