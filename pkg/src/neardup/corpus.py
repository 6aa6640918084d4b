"""JSONL ingestion, NFC normalization, length filtering and doc_id assignment."""

from __future__ import annotations

import json
import os
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

from .errors import ConfigError, StorageError

DEFAULT_TEXT_FIELD = "text"
DEFAULT_MIN_CHARS = 200


@dataclass(frozen=True)
class RawDocument:
    file_ordinal: int
    record_ordinal: int
    text: str
    line: int | None = None  # physical line in the source file


@dataclass(frozen=True)
class CleanDocument:
    doc_id: int
    text: str
    char_count: int


class Filtered:
    """Marker returned by :func:`preprocess` for documents below the length floor."""

    __slots__ = ("char_count",)

    def __init__(self, char_count: int):
        self.char_count = char_count

    def __repr__(self):
        return f"Filtered(char_count={self.char_count})"

    def __bool__(self):
        return False


@dataclass
class RejectLog:
    """Sidecar record of everything that did not become a signature."""

    entries: list[dict] = field(default_factory=list)

    def add(self, file: str, line: int, reason: str) -> None:
        self.entries.append({"file": file, "line": line, "reason": reason})

    def extend(self, other: "RejectLog") -> None:
        self.entries.extend(other.entries)

    def __len__(self):
        return len(self.entries)

    def write(self, path: os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self.entries:
                fh.write(json.dumps(entry, ensure_ascii=False, sort_keys=True) + "\n")


@dataclass(frozen=True)
class CorpusManifest:
    paths: tuple[str, ...]
    counts: tuple[int, ...]  # valid records per file
    kept_counts: tuple[int, ...]  # records surviving preprocessing
    min_chars: int = DEFAULT_MIN_CHARS
    text_field: str = DEFAULT_TEXT_FIELD

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def total_kept(self) -> int:
        return sum(self.kept_counts)

    def offsets(self) -> list[int]:
        """doc_id of the first record of each file."""
        out, run = [], 0
        for c in self.counts:
            out.append(run)
            run += c
        return out

    def to_dict(self) -> dict:
        return {
            "paths": list(self.paths),
            "counts": list(self.counts),
            "kept_counts": list(self.kept_counts),
            "min_chars": self.min_chars,
            "text_field": self.text_field,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusManifest":
        return cls(
            paths=tuple(d["paths"]),
            counts=tuple(d["counts"]),
            kept_counts=tuple(d["kept_counts"]),
            min_chars=d["min_chars"],
            text_field=d["text_field"],
        )


def iter_jsonl(path: os.PathLike, file_ordinal: int, text_field: str = DEFAULT_TEXT_FIELD, rejects: RejectLog | None = None) -> Iterator[RawDocument]:
    """Stream valid records of one JSONL file, logging malformed lines to ``rejects``.

    ``record_ordinal`` counts valid records only; blank lines are skipped silently.
    """
    record = 0
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise StorageError(exc.strerror or str(exc), path) from exc
    with fh:
        try:
            for lineno, line in enumerate(fh):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    reason = f"invalid JSON: {exc.msg}"
                else:
                    if not isinstance(obj, dict):
                        reason = "record is not a JSON object"
                    elif not isinstance(obj.get(text_field), str):
                        reason = f"missing or non-string field {text_field!r}"
                    else:
                        yield RawDocument(file_ordinal, record, obj[text_field], lineno)
                        record += 1
                        continue
                if rejects is not None:
                    rejects.add(str(path), lineno, reason)
        except UnicodeDecodeError as exc:
            raise StorageError(f"not valid UTF-8: {exc.reason}", path) from exc


def load_jsonl_file(path: os.PathLike, file_ordinal: int, text_field: str = DEFAULT_TEXT_FIELD) -> tuple[list[RawDocument], RejectLog]:
    rejects = RejectLog()
    docs = list(iter_jsonl(path, file_ordinal, text_field, rejects))
    return docs, rejects


def normalize(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def preprocess(doc: RawDocument, min_chars: int = DEFAULT_MIN_CHARS, doc_id: int | None = None) -> CleanDocument | Filtered:
    """NFC-normalize and apply the length floor (in code points, after normalization).

    ``doc_id`` defaults to ``record_ordinal``; the pipeline passes the global id.
    """
    text = normalize(doc.text)
    n = len(text)
    if n < min_chars:
        return Filtered(n)
    return CleanDocument(doc_id=doc.record_ordinal if doc_id is None else doc_id, text=text, char_count=n)


def build_manifest(paths: Sequence[os.PathLike], min_chars: int = DEFAULT_MIN_CHARS, text_field: str = DEFAULT_TEXT_FIELD) -> CorpusManifest:
    """Order input files lexicographically and count valid and surviving records."""
    if not paths:
        raise ConfigError("no input files given")
    names = [str(Path(p)) for p in paths]
    resolved = [os.path.realpath(p) for p in names]
    if len(set(resolved)) != len(resolved):
        dupes = sorted({p for p in names if resolved.count(os.path.realpath(p)) > 1})
        raise ConfigError(f"duplicate input paths: {dupes}")
    names.sort()
    counts, kept = [], []
    for ordinal, path in enumerate(names):
        n = k = 0
        for raw in iter_jsonl(path, ordinal, text_field):
            n += 1
            if len(normalize(raw.text)) >= min_chars:
                k += 1
        counts.append(n)
        kept.append(k)
    return CorpusManifest(tuple(names), tuple(counts), tuple(kept), min_chars, text_field)


def iter_clean_documents(manifest: CorpusManifest, file_ordinal: int, rejects: RejectLog | None = None) -> Iterator[CleanDocument]:
    """Surviving documents of one manifest file, with global doc_ids."""
    path = manifest.paths[file_ordinal]
    base = manifest.offsets()[file_ordinal]
    for raw in iter_jsonl(path, file_ordinal, manifest.text_field, rejects):
        out = preprocess(raw, manifest.min_chars, doc_id=base + raw.record_ordinal)
        if isinstance(out, Filtered):
            if rejects is not None:
                rejects.add(path, raw.line, f"filtered: {out.char_count} chars < {manifest.min_chars}")
            continue
        yield out


def iter_corpus(manifest: CorpusManifest) -> Iterator[CleanDocument]:
    for ordinal in range(len(manifest.paths)):
        yield from iter_clean_documents(manifest, ordinal)
