import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rankqa.datapack import (DataPack, MalformedPack, MultiPack, OutOfBounds, UnknownAnnotation, create_pack,
                             deserialize_pack, serialize_pack)

from packgen import random_pack


def test_create_pack():
    pack = create_pack("hello world")
    assert len(pack.text) == 11
    assert pack.spans == [] and pack.links == [] and pack.groups == []


def test_create_empty_pack():
    pack = create_pack("")
    assert len(pack) == 0


def test_pack_ids_unique():
    assert create_pack("same").pack_id != create_pack("same").pack_id


def test_text_is_read_only():
    pack = create_pack("abc")
    with pytest.raises(AttributeError):
        pack.text = "xyz"


def test_add_span_covered_text():
    pack = create_pack("the cat")
    ann = pack.add_span("Token", 4, 7)
    assert pack.covered_text(ann) == "cat"


def test_empty_span_is_valid():
    pack = create_pack("the cat")
    ann = pack.add_span("Sentence", 0, 0)
    assert pack.covered_text(ann) == ""


@pytest.mark.parametrize("begin,end", [(5, 3), (-1, 2), (0, 8), (8, 8)])
def test_add_span_out_of_bounds(begin, end):
    pack = create_pack("the cat")
    with pytest.raises(OutOfBounds):
        pack.add_span("Token", begin, end)


def test_empty_kind_rejected():
    with pytest.raises(ValueError):
        create_pack("x").add_span("", 0, 1)


def test_ids_monotone_across_kinds():
    pack = create_pack("abc def")
    a = pack.add_span("Token", 0, 3)
    b = pack.add_span("Token", 4, 7)
    link = pack.add_link("Next", a, b)
    group = pack.add_group("Both", [a, b])
    assert [a, b, link, group] == [0, 1, 2, 3]


def test_link_and_group_must_resolve():
    pack = create_pack("abc")
    a = pack.add_span("Token", 0, 3)
    with pytest.raises(UnknownAnnotation):
        pack.add_link("X", a, 99)
    with pytest.raises(UnknownAnnotation):
        pack.add_group("G", [a, 42])
    with pytest.raises(ValueError):
        pack.add_group("G", [])


def test_get_spans_order_and_kind():
    pack = create_pack("one two three")
    pack.add_span("Token", 8, 13)
    pack.add_span("Token", 0, 3)
    pack.add_span("Token", 4, 7)
    pack.add_span("Sentence", 0, 13)
    spans = pack.get_spans("Token")
    assert [(s.begin, s.end) for s in spans] == [(0, 3), (4, 7), (8, 13)]
    assert pack.get_spans("Nonexistent") == []


def test_get_spans_range_intersection():
    pack = create_pack("abcdefghij")
    first = pack.add_span("Token", 0, 3)
    pack.add_span("Token", 6, 9)
    assert [s.id for s in pack.get_spans("Token", (0, 5))] == [first]


def test_get_spans_tiebreak_on_id():
    pack = create_pack("abcdef")
    ids = [pack.add_span("Token", 1, 4) for _ in range(3)]
    assert [s.id for s in pack.get_spans("Token")] == ids


def test_round_trip_simple():
    pack = create_pack("Tristesse is a French word.")
    t = pack.add_span("Token", 0, 9, {"pos": "NOUN", "score": 0.25})
    s = pack.add_span("Sentence", 0, 27)
    pack.add_link("PartOf", t, s)
    pack.add_group("All", [t, s])
    pack.metadata["source"] = "toy"
    back = deserialize_pack(serialize_pack(pack))
    assert back == pack
    assert back.pack_id == pack.pack_id


def test_round_trip_empty():
    pack = create_pack("")
    assert deserialize_pack(serialize_pack(pack)) == pack


def test_serialized_field_names():
    import json

    doc = json.loads(serialize_pack(create_pack("x")))
    assert list(doc) == ["pack_id", "text", "annotations", "links", "groups", "metadata"]


@pytest.mark.parametrize("raw", [
    b"",
    b"not json",
    b"[1, 2]",
    b'{"pack_id": "a", "text": "abc"}',
    b'{"pack_id": "a", "text": "abc", "annotations": [{"id": 0, "kind": "T", "begin": 2, "end": 9, "attributes": {}}],'
    b' "links": [], "groups": [], "metadata": {}}',
    b'{"pack_id": "a", "text": "abc", "annotations": [], "links": [{"id": 0, "kind": "L", "parent": 5, "child": 6}],'
    b' "groups": [], "metadata": {}}',
    b'\xff\xfe',
])
def test_malformed_pack(raw):
    with pytest.raises(MalformedPack):
        deserialize_pack(raw)


def test_truncated_bytes():
    pack = create_pack("some text")
    pack.add_span("Token", 0, 4)
    data = serialize_pack(pack)
    for cut in (1, len(data) // 2, len(data) - 1):
        with pytest.raises(MalformedPack):
            deserialize_pack(data[:cut])


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=2**32))
def test_round_trip_fuzz(seed):
    pack = random_pack(random.Random(seed))
    assert deserialize_pack(serialize_pack(pack)) == pack


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=2**32))
def test_annotations_only_accumulate(seed):
    history = []

    def check(pack):
        spans, links, groups = pack.snapshot()
        if history:
            old_spans, old_links, old_groups = history[-1]
            assert set(old_spans) <= set(spans)
            assert set(old_links) <= set(links)
            assert set(old_groups) <= set(groups)
            assert len(spans) + len(links) + len(groups) == len(old_spans) + len(old_links) + len(old_groups) + 1
        history.append((spans, links, groups))

    random_pack(random.Random(seed), on_step=check)


def test_failed_add_leaves_pack_unchanged():
    pack = create_pack("abc")
    pack.add_span("Token", 0, 1)
    before = pack.snapshot()
    for bad in (lambda: pack.add_span("Token", 2, 9), lambda: pack.add_link("L", 0, 5),
                lambda: pack.add_group("G", [0, 3])):
        with pytest.raises((OutOfBounds, UnknownAnnotation)):
            bad()
    assert pack.snapshot() == before
    assert pack.add_span("Token", 1, 2) == 1


@settings(max_examples=100, deadline=None)
@given(st.text(max_size=30), st.data())
def test_get_spans_deterministic(text, data):
    pack = DataPack(text)
    for _ in range(data.draw(st.integers(0, 10))):
        begin = data.draw(st.integers(0, len(text)))
        end = data.draw(st.integers(begin, len(text)))
        pack.add_span("Token", begin, end)
    spans = pack.get_spans("Token")
    keys = [(s.begin, s.end, s.id) for s in spans]
    assert keys == sorted(keys)
    assert spans == pack.get_spans("Token")


def test_multipack_cross_links():
    mp = MultiPack()
    q = mp.add_pack("query", create_pack("cat"))
    p = mp.add_pack("passage_0", create_pack("the cat sat"))
    qs = q.add_span("Query", 0, 3)
    ps = p.add_span("Passage", 0, 11)
    mp.add_cross_link("Retrieved", ("query", qs), ("passage_0", ps))
    assert mp.resolve(mp.cross_links[0].child).end == 11
    with pytest.raises(ValueError):
        mp.add_pack("query", create_pack("dup"))
    with pytest.raises(UnknownAnnotation):
        mp.add_cross_link("Retrieved", ("query", qs), ("passage_9", 0))
    with pytest.raises(UnknownAnnotation):
        mp.add_cross_link("Retrieved", ("query", 7), ("passage_0", ps))
    back = MultiPack.from_dict(mp.to_dict())
    assert back.to_dict() == mp.to_dict()
