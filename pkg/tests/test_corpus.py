from __future__ import annotations

import json
import unicodedata

import pytest
from hypothesis import given, strategies as st

from neardup.corpus import (
    CleanDocument,
    Filtered,
    RawDocument,
    RejectLog,
    build_manifest,
    iter_clean_documents,
    iter_corpus,
    load_jsonl_file,
    preprocess,
)
from neardup.errors import ConfigError, StorageError

from conftest import write_jsonl


def test_load_three_valid_lines(tmp_path):
    path = write_jsonl(tmp_path / "a.jsonl", [{"text": t} for t in "xyz"])
    docs, rejects = load_jsonl_file(path, 3)
    assert [d.record_ordinal for d in docs] == [0, 1, 2]
    assert [d.text for d in docs] == ["x", "y", "z"]
    assert all(d.file_ordinal == 3 for d in docs)
    assert len(rejects) == 0


def test_load_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    docs, rejects = load_jsonl_file(path, 0)
    assert docs == [] and len(rejects) == 0


def test_malformed_line_goes_to_reject_log(tmp_path):
    path = write_jsonl(tmp_path / "a.jsonl", [{"text": "one"}, "{not json", {"body": "no text field"}, {"text": "two"}])
    docs, rejects = load_jsonl_file(path, 0)
    assert [d.text for d in docs] == ["one", "two"]
    assert [d.record_ordinal for d in docs] == [0, 1]
    assert [e["line"] for e in rejects.entries] == [1, 2]
    assert "invalid JSON" in rejects.entries[0]["reason"]
    assert "'text'" in rejects.entries[1]["reason"]


def test_custom_text_field(tmp_path):
    path = write_jsonl(tmp_path / "a.jsonl", [{"content": "abc"}, {"text": "ignored"}])
    docs, rejects = load_jsonl_file(path, 0, text_field="content")
    assert [d.text for d in docs] == ["abc"]
    assert len(rejects) == 1


def test_unreadable_file_is_io_error(tmp_path):
    with pytest.raises(StorageError):
        load_jsonl_file(tmp_path / "missing.jsonl", 0)


def test_reject_log_written_as_jsonl(tmp_path):
    log = RejectLog()
    log.add("f.jsonl", 4, "bad")
    log.write(tmp_path / "rejects.jsonl")
    assert json.loads((tmp_path / "rejects.jsonl").read_text()) == {"file": "f.jsonl", "line": 4, "reason": "bad"}


def test_preprocess_filters_below_min_chars():
    out = preprocess(RawDocument(0, 0, "a" * 199), min_chars=200)
    assert isinstance(out, Filtered) and out.char_count == 199
    assert isinstance(preprocess(RawDocument(0, 0, "a" * 200), min_chars=200), CleanDocument)


def test_preprocess_keeps_nfc_text_unchanged():
    text = "déjà vu " * 62 + "abcd"
    assert len(text) == 500 and unicodedata.is_normalized("NFC", text)
    out = preprocess(RawDocument(0, 0, text))
    assert out.text == text and out.char_count == 500


def test_preprocess_composes_combining_accent():
    decomposed = "é"
    assert len(decomposed) == 2
    out = preprocess(RawDocument(0, 0, decomposed), min_chars=1)
    assert out.text == unicodedata.normalize("NFC", decomposed) == "é"
    assert out.char_count == 1


def test_length_is_measured_after_normalization():
    # 200 decomposed pairs are 400 code points raw but 200 after NFC.
    raw = RawDocument(0, 0, "é" * 150)
    assert isinstance(preprocess(raw, min_chars=200), Filtered)


@given(st.text(min_size=0, max_size=300))
def test_preprocess_idempotent(text):
    once = preprocess(RawDocument(0, 0, text), min_chars=5)
    if isinstance(once, Filtered):
        return
    twice = preprocess(RawDocument(0, 0, once.text), min_chars=5)
    assert twice == once
    assert unicodedata.is_normalized("NFC", once.text)
    assert once.char_count >= 5


def test_manifest_orders_paths_lexicographically(tmp_path):
    b = write_jsonl(tmp_path / "b.jsonl", [{"text": "x" * 300}])
    a = write_jsonl(tmp_path / "a.jsonl", [{"text": "y" * 300}] * 2)
    m = build_manifest([b, a])
    assert m.paths == (str(a), str(b))
    assert m.counts == (2, 1)
    assert m.offsets() == [0, 2]


def test_manifest_counts_single_file(tmp_path):
    p = write_jsonl(tmp_path / "a.jsonl", [{"text": "z" * 250}] * 10)
    m = build_manifest([p])
    assert m.total == 10 and m.total_kept == 10


def test_manifest_rejects_empty_and_duplicate_paths(tmp_path):
    with pytest.raises(ConfigError):
        build_manifest([])
    p = write_jsonl(tmp_path / "a.jsonl", [{"text": "z"}])
    with pytest.raises(ConfigError, match="duplicate"):
        build_manifest([p, p])


def test_doc_ids_follow_file_offsets_and_are_stable(tmp_path):
    long = "w" * 220
    a = write_jsonl(tmp_path / "a.jsonl", [{"text": long}, {"text": "short"}, {"text": long}])
    b = write_jsonl(tmp_path / "b.jsonl", [{"text": long}, "garbage", {"text": long}])
    m = build_manifest([a, b])
    rejects = RejectLog()
    ids = [d.doc_id for o in range(2) for d in iter_clean_documents(m, o, rejects)]
    assert ids == [0, 2, 3, 4]
    assert sorted(e["reason"].split(":")[0] for e in rejects.entries) == ["filtered", "invalid JSON"]
    again = [(d.doc_id, d.text) for d in iter_corpus(build_manifest([b, a]))]
    assert again == [(d.doc_id, d.text) for d in iter_corpus(m)]
    assert all(d.char_count >= 200 for d in iter_corpus(m))
