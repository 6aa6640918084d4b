"""All-pairs signature comparison inside buckets.

The kernel walks the upper triangle of the ``c x c`` comparison matrix one
``tile x tile`` block at a time, like a blocked matrix product where the
multiply-add is replaced by an equality count. The two row blocks of a tile
pair are first copied into contiguous scratch arrays so the inner loops read
from a small, cache-resident working set.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

import numba
import numpy as np

from .errors import ConfigError, CorruptFileError, StorageError
from .lsh import as_fraction

DEFAULT_TILE = 32

PAIR_DTYPE = np.dtype([("lo", "<u8"), ("hi", "<u8"), ("matches", "<u4")])
assert PAIR_DTYPE.itemsize == 20


@dataclass(frozen=True)
class DuplicatePair:
    lo: int
    hi: int
    matches: int
    num_hashes: int

    @property
    def similarity(self) -> Fraction:
        return Fraction(self.matches, self.num_hashes)


@dataclass(frozen=True)
class BucketBatch:
    doc_ids: np.ndarray
    sigs: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.doc_ids)
        sigs = np.asarray(self.sigs)
        if sigs.ndim != 2 or len(ids) != len(sigs):
            raise ConfigError("bucket batch needs one signature row per doc_id")
        if len(ids) < 2:
            raise ConfigError("a bucket batch needs at least two documents")
        if np.any(np.diff(ids.astype(np.int64)) <= 0):
            raise ConfigError("bucket batch doc_ids must be strictly increasing")

    @property
    def num_hashes(self) -> int:
        return self.sigs.shape[1]

    def __len__(self):
        return len(self.doc_ids)


def sim_sig(s1, s2) -> Fraction:
    """Fraction of positions at which two signatures agree."""
    a, b = np.asarray(s1), np.asarray(s2)
    if a.shape != b.shape or a.ndim != 1:
        raise ConfigError(f"signature shapes differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ConfigError("empty signatures")
    return Fraction(int(np.count_nonzero(a == b)), a.size)


def min_matches(threshold, num_hashes: int) -> int:
    """Smallest match count m with ``m / H > threshold``."""
    theta = as_fraction(threshold)
    if not 0 <= theta <= 1:
        raise ConfigError(f"threshold must lie in [0, 1], got {theta}")
    return math.floor(theta * num_hashes) + 1


@numba.njit(nogil=True, cache=True)
def _compare_buckets(sigs, order, starts, ends, need, tile, out_i, out_j, out_m):
    """Write qualifying (row, row, matches) triples; returns the count or -1 when out of room."""
    n_hash = sigs.shape[1]
    cap = out_i.shape[0]
    n_out = 0
    block_a = np.empty((tile, n_hash), sigs.dtype)
    block_b = np.empty((tile, n_hash), sigs.dtype)
    for b in range(starts.shape[0]):
        s = starts[b]
        c = ends[b] - s
        for ti in range(0, c, tile):
            na = min(tile, c - ti)
            for r in range(na):
                block_a[r, :] = sigs[order[s + ti + r], :]
            for tj in range(ti, c, tile):
                nb = min(tile, c - tj)
                diagonal = tj == ti
                if not diagonal:
                    for r in range(nb):
                        block_b[r, :] = sigs[order[s + tj + r], :]
                for i in range(na):
                    j0 = i + 1 if diagonal else 0
                    for j in range(j0, nb):
                        cnt = 0
                        if diagonal:
                            for k in range(n_hash):
                                cnt += block_a[i, k] == block_a[j, k]
                        else:
                            for k in range(n_hash):
                                cnt += block_a[i, k] == block_b[j, k]
                        if cnt >= need:
                            if n_out == cap:
                                return -1
                            out_i[n_out] = order[s + ti + i]
                            out_j[n_out] = order[s + tj + j]
                            out_m[n_out] = cnt
                            n_out += 1
    return n_out


def compare_rows(sigs: np.ndarray, order: np.ndarray, starts: np.ndarray, ends: np.ndarray, need: int, tile: int = DEFAULT_TILE):
    """Run the kernel over many buckets sharing one signature array.

    Bucket ``b`` is the rows ``order[starts[b]:ends[b]]``. Returns row-index
    arrays ``(i, j, matches)`` with ``i`` before ``j`` inside its bucket.
    """
    if tile < 1:
        raise ConfigError(f"tile size must be positive, got {tile}")
    sigs = np.ascontiguousarray(sigs)
    order = np.ascontiguousarray(order, dtype=np.int64)
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    ends = np.ascontiguousarray(ends, dtype=np.int64)
    cap = 1 << 12
    while True:
        out_i = np.empty(cap, np.int64)
        out_j = np.empty(cap, np.int64)
        out_m = np.empty(cap, np.uint32)
        n = _compare_buckets(sigs, order, starts, ends, need, tile, out_i, out_j, out_m)
        if n >= 0:
            return out_i[:n], out_j[:n], out_m[:n]
        cap *= 4


def compare_bucket(batch: BucketBatch, threshold, tile: int = DEFAULT_TILE) -> list[DuplicatePair]:
    """Pairs of the bucket whose signature similarity strictly exceeds ``threshold``."""
    ids = np.asarray(batch.doc_ids)
    n = len(ids)
    i, j, m = compare_rows(np.asarray(batch.sigs), np.arange(n), np.array([0]), np.array([n]), min_matches(threshold, batch.num_hashes), tile)
    h = batch.num_hashes
    return [DuplicatePair(int(ids[a]), int(ids[b]), int(c), h) for a, b, c in zip(i, j, m)]


def compare_pass(gathered, threshold, tile: int = DEFAULT_TILE) -> np.ndarray:
    """Duplicate pairs of one gather pass as a ``PAIR_DTYPE`` array.

    Pairs repeated within the pass are emitted once; output is sorted by
    ``(lo, hi)``.
    """
    if len(gathered) == 0:
        return np.empty(0, dtype=PAIR_DTYPE)
    need = min_matches(threshold, gathered.sigs.shape[1])
    i, j, m = compare_rows(gathered.sigs, gathered.order, gathered.starts, gathered.ends, need, tile)
    pairs = np.empty(len(i), dtype=PAIR_DTYPE)
    pairs["lo"] = gathered.doc_ids[i]
    pairs["hi"] = gathered.doc_ids[j]
    pairs["matches"] = m
    return dedupe_pairs(pairs)


def dedupe_pairs(pairs: np.ndarray) -> np.ndarray:
    if len(pairs) == 0:
        return pairs
    order = np.lexsort((pairs["hi"], pairs["lo"]))
    pairs = pairs[order]
    first = np.ones(len(pairs), dtype=bool)
    first[1:] = (pairs["lo"][1:] != pairs["lo"][:-1]) | (pairs["hi"][1:] != pairs["hi"][:-1])
    return pairs[first]


def write_pairs(pairs: np.ndarray, path: os.PathLike) -> None:
    pairs = np.asarray(pairs, dtype=PAIR_DTYPE)
    tmp = f"{os.fspath(path)}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(pairs.tobytes())
        os.replace(tmp, path)
    except OSError as exc:
        raise StorageError(exc.strerror or str(exc), path) from exc


def read_pairs(path: os.PathLike) -> np.ndarray:
    try:
        data = open(path, "rb").read()
    except OSError as exc:
        raise StorageError(exc.strerror or str(exc), path) from exc
    if len(data) % PAIR_DTYPE.itemsize:
        raise CorruptFileError(f"pair file length {len(data)} is not a multiple of {PAIR_DTYPE.itemsize}", path)
    return np.frombuffer(data, dtype=PAIR_DTYPE).copy()


def iter_pair_files(paths: Iterable[os.PathLike]):
    for path in paths:
        yield read_pairs(path)
