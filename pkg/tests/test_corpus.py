import json

import pytest

from tempograph.corpus import (
    CorpusError,
    Document,
    Event,
    TLink,
    generate_synthetic,
    label_histogram,
    load_corpus,
    load_raw,
    store_corpus,
    validate,
)
from tempograph.schema import MATRES, TBDENSE


def small_doc():
    return Document(
        "d1",
        [["He", "left", "early", "."], ["Later", "she", "arrived", "."]],
        [Event("e1", 0, 1, 2), Event("e2", 1, 2, 3)],
        [TLink("e1", "e2", "BEFORE")],
    )


def write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")


def test_load_single_document(tmp_path):
    p = tmp_path / "c.jsonl"
    write_lines(p, [small_doc().to_record()])
    docs = load_corpus(p)
    assert len(docs) == 1
    assert len(docs[0].tlinks) == 1
    assert docs[0].events[1] == Event("e2", 1, 2, 3)


def test_golden_record_layout(tmp_path):
    # Field names of the corpus file are part of the external interface.
    p = tmp_path / "c.jsonl"
    store_corpus([small_doc()], p)
    lines = p.read_text(encoding="utf-8").splitlines()
    assert json.loads(lines[0]) == {"format": "tempograph-corpus", "version": 1}
    assert lines[1] == (
        '{"doc_id":"d1","sentences":[["He","left","early","."],["Later","she","arrived","."]],'
        '"events":[{"id":"e1","sentence":0,"start":1,"end":2},'
        '{"id":"e2","sentence":1,"start":2,"end":3}],'
        '"tlinks":[{"source":"e1","target":"e2","label":"BEFORE"}]}'
    )


def test_dangling_event_names_record(tmp_path):
    rec = small_doc().to_record()
    rec["tlinks"][0]["target"] = "e9"
    p = tmp_path / "c.jsonl"
    write_lines(p, [small_doc().to_record() | {"doc_id": "ok"}, rec])
    with pytest.raises(CorpusError) as err:
        load_corpus(p)
    assert ":2" in str(err.value) and "e9" in str(err.value)


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda r: r["events"][0].update(start=5, end=6), "outside"),
        (lambda r: r["tlinks"].append(dict(r["tlinks"][0])), "duplicate"),
        (lambda r: r.pop("sentences"), "missing field"),
        (lambda r: r["events"][0].update(start="1"), "wrong type"),
    ],
)
def test_load_rejects(tmp_path, mutate, fragment):
    rec = small_doc().to_record()
    mutate(rec)
    p = tmp_path / "c.jsonl"
    write_lines(p, [rec])
    with pytest.raises(CorpusError, match=fragment):
        load_corpus(p)


def test_malformed_json(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text('{"doc_id": "x", \n', encoding="utf-8")
    with pytest.raises(CorpusError, match="c.jsonl:1"):
        load_corpus(p)


def test_validate():
    assert validate(small_doc()) == []
    d = small_doc()
    d.events[0] = Event("e1", 0, 5, 5)
    assert len(validate(d)) == 1
    d = small_doc()
    d.tlinks.append(TLink("e1", "e2", "AFTER"))
    assert len(validate(d)) == 1
    d = small_doc()
    d.tlinks.append(TLink("e1", "e1", "VAGUE"))
    assert any("self-link" in v for v in validate(d))
    d = small_doc()
    d.tlinks[0] = TLink("e1", "e2", "INCLUDES")
    assert validate(d, MATRES) and not validate(d, TBDENSE)


def test_synthetic_determinism_and_closure():
    a = generate_synthetic(7, 20, "tbdense")
    b = generate_synthetic(7, 20, "tbdense")
    assert [x.to_record() for x in a] == [x.to_record() for x in b]
    assert generate_synthetic(8, 20)[0].to_record() != a[0].to_record()
    for doc in generate_synthetic(1, 10, TBDENSE):
        assert validate(doc, TBDENSE) == []
        for t in doc.tlinks:
            assert t.label in TBDENSE.names[1:]
    for doc in generate_synthetic(1, 10, MATRES):
        assert all(e.length == 1 for e in doc.events)
        assert all(t.label in MATRES.names[1:] for t in doc.tlinks)


def test_synthetic_mixture_matches_at_500_docs():
    mixture = {"BEFORE": 0.3, "AFTER": 0.2, "INCLUDES": 0.05, "IS_INCLUDED": 0.05,
               "SIMULTANEOUS": 0.1, "VAGUE": 0.3}
    docs = generate_synthetic(3, 500, "tbdense", mixture)
    hist = label_histogram(docs)
    total = sum(hist.values())
    for name, w in mixture.items():
        assert abs(hist.get(name, 0) / total - w) <= 0.02


def test_synthetic_flip_rate_preserves_relations():
    docs = generate_synthetic(5, 30, flip_rate=1.0)
    for doc in docs:
        pos = {e.id: e.sentence for e in doc.events}
        for t in doc.tlinks:
            assert pos[t.source] > pos[t.target]


def test_synthetic_round_trip_183_docs(tmp_path):
    docs = generate_synthetic(11, 183, "matres")
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    store_corpus(docs, p1)
    loaded = load_corpus(p1, "matres")
    assert len(loaded) == 183
    store_corpus(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_raw_ignores_annotations(tmp_path):
    p = tmp_path / "raw.jsonl"
    write_lines(p, [small_doc().to_record(), {"doc_id": "r", "sentences": [["a", "b"]]}])
    raw = load_raw(p)
    assert [r.doc_id for r in raw] == ["d1", "r"]
    write_lines(p, [{"doc_id": "r", "sentences": [[]]}])
    with pytest.raises(CorpusError):
        load_raw(p)
