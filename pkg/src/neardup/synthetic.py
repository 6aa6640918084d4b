"""Seeded synthetic corpora with planted near-duplicate groups.

Every group starts from one random base text; each member is an independent
copy with random character edits (substitute, insert or delete, equally
likely) at ``edit_rate`` per character. The generator records every
within-group pair together with its exact window Jaccard.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .oracle import exact_jaccard

ALPHABET = np.frombuffer(b"abcdefghijklmnopqrstuvwxyz", dtype=np.uint8)


@dataclass(frozen=True)
class SyntheticSpec:
    num_docs: int = 10_000
    num_groups: int = 1_000
    group_size: tuple[int, int] = (2, 2)  # inclusive range, drawn uniformly
    edit_rate: float = 0.005
    length: tuple[int, int] = (300, 700)  # characters, inclusive range
    seed: int = 0
    num_files: int = 1
    vocab_size: int = 20_000

    def validate(self) -> None:
        lo, hi = self.group_size
        if self.num_groups < 0 or lo < 2 or hi < lo:
            raise ConfigError(f"invalid group spec: {self.num_groups} groups of size {self.group_size}")
        if self.num_groups * lo > self.num_docs:
            raise ConfigError(f"{self.num_groups} groups of at least {lo} do not fit in {self.num_docs} documents")
        if not 0 <= self.edit_rate <= 1:
            raise ConfigError(f"edit rate must lie in [0, 1], got {self.edit_rate}")
        if self.length[0] < 1 or self.length[1] < self.length[0]:
            raise ConfigError(f"invalid length range {self.length}")
        if self.num_files < 1:
            raise ConfigError("need at least one output file")


@dataclass(frozen=True)
class PlantedPair:
    a: int
    b: int
    group: int
    jaccard: float


def _vocabulary(rng: np.random.Generator, size: int) -> list[bytes]:
    lengths = rng.integers(2, 11, size=size)
    letters = rng.choice(ALPHABET, size=int(lengths.sum()))
    out, pos = [], 0
    for n in lengths:
        out.append(letters[pos : pos + n].tobytes())
        pos += n
    return out


def _base_text(rng: np.random.Generator, vocab: list[bytes], weights: np.ndarray, n_chars: int) -> bytes:
    # Zipf-weighted words, enough of them to reach n_chars, then trimmed.
    words = rng.choice(len(vocab), size=n_chars // 3 + 4, p=weights)
    text = b" ".join(vocab[w] for w in words)
    return text[:n_chars]


def _edit(rng: np.random.Generator, text: bytes, rate: float) -> bytes:
    if rate == 0:
        return text
    arr = np.frombuffer(text, dtype=np.uint8)
    hits = np.flatnonzero(rng.random(len(arr)) < rate)
    if not len(hits):
        return text
    ops = rng.integers(0, 3, size=len(hits))
    letters = rng.choice(ALPHABET, size=len(hits))
    out = bytearray()
    prev = 0
    for pos, op, ch in zip(hits.tolist(), ops.tolist(), letters.tolist()):
        out += arr[prev:pos].tobytes()
        if op == 0:  # substitute
            out.append(ch)
            prev = pos + 1
        elif op == 1:  # insert before
            out.append(ch)
            prev = pos
        else:  # delete
            prev = pos + 1
    out += arr[prev:].tobytes()
    return bytes(out)


def generate(spec: SyntheticSpec) -> tuple[list[str], list[PlantedPair]]:
    """Texts in corpus order and the planted pair list (indices into the texts)."""
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    vocab = _vocabulary(rng, spec.vocab_size)
    weights = 1.0 / np.arange(1, spec.vocab_size + 1)
    weights /= weights.sum()

    sizes = rng.integers(spec.group_size[0], spec.group_size[1] + 1, size=spec.num_groups)
    if sizes.sum() > spec.num_docs:
        raise ConfigError(f"drawn group sizes total {sizes.sum()} > {spec.num_docs} documents")
    n_single = spec.num_docs - int(sizes.sum())
    # slot -> group id (or -1 for singletons), shuffled over the corpus
    owner = np.concatenate([np.repeat(np.arange(spec.num_groups), sizes), np.full(n_single, -1)])
    rng.shuffle(owner)

    lengths = rng.integers(spec.length[0], spec.length[1] + 1, size=spec.num_groups + n_single)
    bases = [_base_text(rng, vocab, weights, int(n)) for n in lengths[: spec.num_groups]]
    texts: list[bytes] = []
    members: dict[int, list[int]] = {}
    single = spec.num_groups
    for slot, g in enumerate(owner.tolist()):
        if g < 0:
            texts.append(_base_text(rng, vocab, weights, int(lengths[single])))
            single += 1
        else:
            texts.append(_edit(rng, bases[g], spec.edit_rate))
            members.setdefault(g, []).append(slot)

    decoded = [t.decode("ascii") for t in texts]
    planted = []
    for g in sorted(members):
        slots = members[g]
        for i in range(len(slots)):
            for j in range(i + 1, len(slots)):
                a, b = slots[i], slots[j]
                planted.append(PlantedPair(a, b, g, float(exact_jaccard(decoded[a], decoded[b]))))
    planted.sort(key=lambda p: (p.a, p.b))
    return decoded, planted


def write_synthetic(spec: SyntheticSpec, out_dir: os.PathLike) -> dict:
    """Write ``corpus-NNNNN.jsonl`` files, ``truth.jsonl`` and ``spec.json`` to ``out_dir``.

    Documents are split into contiguous runs across files, so a document's
    index in the planted pair list equals its doc_id in the pipeline.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    texts, planted = generate(spec)
    bounds = np.linspace(0, len(texts), spec.num_files + 1).astype(int)
    corpus = []
    for f in range(spec.num_files):
        path = out / f"corpus-{f:05d}.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            for i in range(bounds[f], bounds[f + 1]):
                fh.write(json.dumps({"id": i, "text": texts[i]}) + "\n")
        corpus.append(str(path))
    truth = out / "truth.jsonl"
    with open(truth, "w") as fh:
        for p in planted:
            fh.write(json.dumps(asdict(p)) + "\n")
    (out / "spec.json").write_text(json.dumps(asdict(spec), indent=2) + "\n")
    return {"corpus": corpus, "truth": str(truth), "documents": len(texts), "planted_pairs": len(planted)}


def read_truth(path: os.PathLike) -> list[PlantedPair]:
    with open(path) as fh:
        return [PlantedPair(**json.loads(line)) for line in fh if line.strip()]
