"""Typed annotation containers that flow through the pipeline.

A :class:`DataPack` holds one immutable text plus three kinds of entries:
spans over character offsets, links between two annotations, and groups of
annotations. A :class:`MultiPack` bundles named packs (one query, many
passages) and carries links whose endpoints live in different packs.

Offsets are Python string indices, i.e. Unicode code points.
"""

from __future__ import annotations

import itertools
import json
import uuid
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Union

from .errors import RankQAError

AttrValue = Union[int, float, str]
# (pack name, annotation id); only used by MultiPack cross links
CrossRef = tuple[str, int]


class OutOfBounds(RankQAError):
    pass


class UnknownAnnotation(RankQAError):
    pass


class MalformedPack(RankQAError):
    pass


@dataclass(frozen=True)
class SpanAnnotation:
    id: int
    kind: str
    begin: int
    end: int
    attributes: dict[str, AttrValue] = field(default_factory=dict)


@dataclass(frozen=True)
class LinkAnnotation:
    id: int
    kind: str
    parent: Union[int, CrossRef]
    child: Union[int, CrossRef]


@dataclass(frozen=True)
class GroupAnnotation:
    id: int
    kind: str
    members: tuple[int, ...]


def _check_kind(kind: str) -> None:
    if not isinstance(kind, str) or not kind:
        raise ValueError("annotation kind must be a non-empty string")


def _check_attrs(attrs: dict) -> dict[str, AttrValue]:
    out = {}
    for key, value in attrs.items():
        if not isinstance(key, str):
            raise TypeError(f"attribute key must be str, got {type(key).__name__}")
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise TypeError(f"attribute {key!r} must be a number or string")
        out[key] = value
    return out


class DataPack:
    """A text payload plus accumulated annotations.

    The text is fixed at construction. Annotations can only be added; ids are
    increasing integers shared by spans, links and groups.
    """

    def __init__(self, text: str, pack_id: str | None = None, metadata: dict[str, str] | None = None):
        if not isinstance(text, str):
            raise TypeError("pack text must be a string")
        self._text = text
        self.pack_id = pack_id or uuid.uuid4().hex
        self.metadata: dict[str, str] = dict(metadata or {})
        self._spans: dict[int, SpanAnnotation] = {}
        self._links: dict[int, LinkAnnotation] = {}
        self._groups: dict[int, GroupAnnotation] = {}
        self._next_id = 0

    @property
    def text(self) -> str:
        return self._text

    def __len__(self) -> int:
        return len(self._text)

    def __repr__(self) -> str:
        return (
            f"DataPack(pack_id={self.pack_id!r}, len={len(self._text)}, "
            f"spans={len(self._spans)}, links={len(self._links)}, groups={len(self._groups)})"
        )

    def _take_id(self) -> int:
        ann_id = self._next_id
        self._next_id += 1
        return ann_id

    def __contains__(self, ann_id: int) -> bool:
        return ann_id in self._spans or ann_id in self._links or ann_id in self._groups

    def add_span(self, kind: str, begin: int, end: int, attrs: dict | None = None) -> int:
        _check_kind(kind)
        if not (0 <= begin <= end <= len(self._text)):
            raise OutOfBounds(f"span [{begin}, {end}) outside text of length {len(self._text)}")
        ann_id = self._take_id()
        self._spans[ann_id] = SpanAnnotation(ann_id, kind, begin, end, _check_attrs(attrs or {}))
        return ann_id

    def add_link(self, kind: str, parent: int, child: int) -> int:
        _check_kind(kind)
        for ref in (parent, child):
            if ref not in self:
                raise UnknownAnnotation(f"annotation {ref} not in pack {self.pack_id}")
        ann_id = self._take_id()
        self._links[ann_id] = LinkAnnotation(ann_id, kind, parent, child)
        return ann_id

    def add_group(self, kind: str, members: Iterable[int]) -> int:
        _check_kind(kind)
        members = tuple(members)
        if not members:
            raise ValueError("group must have at least one member")
        for ref in members:
            if ref not in self:
                raise UnknownAnnotation(f"annotation {ref} not in pack {self.pack_id}")
        ann_id = self._take_id()
        self._groups[ann_id] = GroupAnnotation(ann_id, kind, members)
        return ann_id

    def get(self, ann_id: int) -> SpanAnnotation | LinkAnnotation | GroupAnnotation:
        for table in (self._spans, self._links, self._groups):
            if ann_id in table:
                return table[ann_id]
        raise UnknownAnnotation(f"annotation {ann_id} not in pack {self.pack_id}")

    def covered_text(self, ann_id: int) -> str:
        span = self._spans.get(ann_id)
        if span is None:
            raise UnknownAnnotation(f"span {ann_id} not in pack {self.pack_id}")
        return self._text[span.begin:span.end]

    def get_spans(self, kind: str, range: tuple[int, int] | None = None) -> list[SpanAnnotation]:
        """Spans of ``kind`` sorted by (begin, end, id).

        With ``range=(lo, hi)`` only spans intersecting ``[lo, hi)`` are kept.
        An empty span at position p counts as intersecting when lo <= p < hi.
        """
        spans = [s for s in self._spans.values() if s.kind == kind]
        if range is not None:
            lo, hi = range
            spans = [
                s for s in spans
                if (s.begin < hi and s.end > lo) or (s.begin == s.end and lo <= s.begin < hi)
            ]
        return sorted(spans, key=lambda s: (s.begin, s.end, s.id))

    @property
    def spans(self) -> list[SpanAnnotation]:
        return list(self._spans.values())

    @property
    def links(self) -> list[LinkAnnotation]:
        return list(self._links.values())

    @property
    def groups(self) -> list[GroupAnnotation]:
        return list(self._groups.values())

    def annotation_ids(self) -> set[int]:
        return set(self._spans) | set(self._links) | set(self._groups)

    def snapshot(self) -> tuple:
        """Hashable view of all annotations, for accumulation checks."""
        return (
            tuple(sorted(
                (s.id, s.kind, s.begin, s.end, tuple(sorted(s.attributes.items())))
                for s in self._spans.values()
            )),
            tuple(sorted((l.id, l.kind, l.parent, l.child) for l in self._links.values())),
            tuple(sorted((g.id, g.kind, g.members) for g in self._groups.values())),
        )

    def to_dict(self) -> dict:
        return {
            "pack_id": self.pack_id,
            "text": self._text,
            "annotations": [
                {"id": s.id, "kind": s.kind, "begin": s.begin, "end": s.end, "attributes": dict(s.attributes)}
                for s in sorted(self._spans.values(), key=lambda s: s.id)
            ],
            "links": [
                {"id": l.id, "kind": l.kind, "parent": l.parent, "child": l.child}
                for l in sorted(self._links.values(), key=lambda l: l.id)
            ],
            "groups": [
                {"id": g.id, "kind": g.kind, "members": list(g.members)}
                for g in sorted(self._groups.values(), key=lambda g: g.id)
            ],
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DataPack":
        try:
            pack = cls(data["text"], pack_id=data["pack_id"], metadata=data["metadata"])
            if not all(isinstance(k, str) and isinstance(v, str) for k, v in pack.metadata.items()):
                raise MalformedPack("metadata must map strings to strings")
            # entries are replayed in id order so every reference resolves
            entries = [("span", a) for a in data["annotations"]]
            entries += [("link", a) for a in data["links"]]
            entries += [("group", a) for a in data["groups"]]
            entries.sort(key=lambda e: e[1]["id"])
            for what, entry in entries:
                ann_id = entry["id"]
                if not isinstance(ann_id, int) or isinstance(ann_id, bool) or ann_id < pack._next_id:
                    raise MalformedPack(f"bad or duplicate annotation id {ann_id!r}")
                pack._next_id = ann_id
                if what == "span":
                    pack.add_span(entry["kind"], entry["begin"], entry["end"], entry["attributes"])
                elif what == "link":
                    pack.add_link(entry["kind"], entry["parent"], entry["child"])
                else:
                    pack.add_group(entry["kind"], entry["members"])
        except MalformedPack:
            raise
        except (KeyError, TypeError, ValueError, AttributeError, RankQAError) as exc:
            raise MalformedPack(f"invalid pack document: {exc}") from exc
        return pack

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DataPack):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None  # mutable


def create_pack(text: str) -> DataPack:
    return DataPack(text)


def serialize_pack(pack: DataPack) -> bytes:
    return json.dumps(pack.to_dict(), ensure_ascii=False, sort_keys=False).encode("utf-8")


def deserialize_pack(data: bytes) -> DataPack:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedPack(f"not a serialized pack: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedPack("serialized pack must be an object")
    return DataPack.from_dict(doc)


class MultiPack:
    """Named DataPacks plus links that cross pack boundaries."""

    def __init__(self):
        self.packs: dict[str, DataPack] = {}
        self.cross_links: list[LinkAnnotation] = []
        self._link_ids = itertools.count()

    def add_pack(self, name: str, pack: DataPack) -> DataPack:
        if name in self.packs:
            raise ValueError(f"pack name {name!r} already used")
        self.packs[name] = pack
        return pack

    def __getitem__(self, name: str) -> DataPack:
        return self.packs[name]

    def __contains__(self, name: str) -> bool:
        return name in self.packs

    def names(self) -> list[str]:
        return list(self.packs)

    def resolve(self, ref: CrossRef):
        name, ann_id = ref
        if name not in self.packs:
            raise UnknownAnnotation(f"no pack named {name!r}")
        return self.packs[name].get(ann_id)

    def add_cross_link(self, kind: str, parent: CrossRef, child: CrossRef) -> int:
        _check_kind(kind)
        parent, child = tuple(parent), tuple(child)
        self.resolve(parent)
        self.resolve(child)
        link = LinkAnnotation(next(self._link_ids), kind, parent, child)
        self.cross_links.append(link)
        return link.id

    def links_from(self, parent: CrossRef) -> Iterator[LinkAnnotation]:
        parent = tuple(parent)
        return (l for l in self.cross_links if l.parent == parent)

    def to_dict(self) -> dict:
        return {
            "packs": {name: pack.to_dict() for name, pack in self.packs.items()},
            "cross_links": [
                {"id": l.id, "kind": l.kind, "parent": list(l.parent), "child": list(l.child)}
                for l in self.cross_links
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MultiPack":
        mp = cls()
        try:
            for name, pack in data["packs"].items():
                mp.add_pack(name, DataPack.from_dict(pack))
            for link in sorted(data["cross_links"], key=lambda l: l["id"]):
                mp._link_ids = itertools.count(link["id"])
                mp.add_cross_link(link["kind"], link["parent"], link["child"])
        except MalformedPack:
            raise
        except (KeyError, TypeError, ValueError, AttributeError, RankQAError) as exc:
            raise MalformedPack(f"invalid multipack document: {exc}") from exc
        return mp

    def structure(self) -> dict:
        """to_dict() with pack ids removed; equal for runs that differ only in ids."""
        doc = self.to_dict()
        for pack in doc["packs"].values():
            pack.pop("pack_id")
        return doc
