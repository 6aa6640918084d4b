"""Signature files and bucket gathering.

File layout (little-endian)::

    header   64 bytes   see HEADER_STRUCT
    records  count * (8 + 4H + 4b) bytes
             doc_id u64 | H signature values u32 | b bucket ids u32

Gathering re-scans every signature file once per pass and keeps only the
records whose bucket id for the pass's band falls in the pass's interval, so
resident memory is bounded by the interval width rather than the corpus.
"""

from __future__ import annotations

import dataclasses
import os
import struct
from collections.abc import Mapping
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, CorruptFileError, IncompatibleRunError, StorageError
from .lsh import BucketKey
from .minhash import UNIT_TAGS

MAGIC = b"FEDS"
FORMAT_VERSION = 1
# magic, version, unit tag, pad, H, b, r, K, L, seed, kappa num, kappa den,
# record count, source ordinal, reserved
HEADER_STRUCT = struct.Struct("<4sHBxIIIIIQIIQI8x")
HEADER_SIZE = HEADER_STRUCT.size
_COPY_BLOCK = 64  # records per fancy-index copy in scan_gather
assert HEADER_SIZE == 64

_UNIT_NAMES = {v: k for k, v in UNIT_TAGS.items()}


@dataclass(frozen=True)
class SignatureFileHeader:
    num_hashes: int
    bands: int
    rows: int
    num_buckets: int
    shingle_len: int
    unit: str
    seed: int
    bucket_scale: Fraction
    record_count: int = 0
    source_ordinal: int = 0
    version: int = FORMAT_VERSION

    def pack(self) -> bytes:
        return HEADER_STRUCT.pack(
            MAGIC,
            self.version,
            UNIT_TAGS[self.unit],
            self.num_hashes,
            self.bands,
            self.rows,
            self.num_buckets,
            self.shingle_len,
            self.seed,
            self.bucket_scale.numerator,
            self.bucket_scale.denominator,
            self.record_count,
            self.source_ordinal,
        )

    @classmethod
    def unpack(cls, data: bytes, path=None) -> "SignatureFileHeader":
        if len(data) < HEADER_SIZE:
            raise CorruptFileError(f"truncated header ({len(data)} of {HEADER_SIZE} bytes)", path)
        magic, version, unit, h, b, r, k, l, seed, kn, kd, count, ordinal = HEADER_STRUCT.unpack(data[:HEADER_SIZE])
        if magic != MAGIC:
            raise CorruptFileError(f"bad magic {magic!r}", path)
        if version != FORMAT_VERSION:
            raise CorruptFileError(f"unsupported format version {version}", path)
        if unit not in _UNIT_NAMES or kd == 0:
            raise CorruptFileError("malformed header fields", path)
        return cls(h, b, r, k, l, _UNIT_NAMES[unit], seed, Fraction(kn, kd), count, ordinal, version)

    @property
    def record_size(self) -> int:
        return 8 + 4 * self.num_hashes + 4 * self.bands

    def run_params(self) -> tuple:
        """Everything that must agree across the files of one run."""
        return dataclasses.astuple(dataclasses.replace(self, record_count=0, source_ordinal=0))


def record_dtype(num_hashes: int, bands: int) -> np.dtype:
    return np.dtype([("doc_id", "<u8"), ("sig", "<u4", (num_hashes,)), ("bucket", "<u4", (bands,))])


def make_records(doc_ids, values, buckets) -> np.ndarray:
    values = np.asarray(values)
    buckets = np.asarray(buckets)
    out = np.empty(len(values), dtype=record_dtype(values.shape[1], buckets.shape[1]))
    out["doc_id"] = doc_ids
    out["sig"] = values
    out["bucket"] = buckets
    return out


def write_signature_file(header: SignatureFileHeader, records: np.ndarray, path: os.PathLike, fsync: bool = False) -> SignatureFileHeader:
    """Write ``records`` under ``header`` atomically; returns the header as written."""
    dtype = record_dtype(header.num_hashes, header.bands)
    records = np.asarray(records)
    if records.dtype != dtype:
        raise ConfigError(f"record layout {records.dtype} does not match header (H={header.num_hashes}, b={header.bands})")
    header = dataclasses.replace(header, record_count=len(records))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(header.pack())
            fh.write(records.tobytes())
            if fsync:
                fh.flush()
                os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        raise StorageError(exc.strerror or str(exc), path) from exc
    return header


def read_signature_header(path: os.PathLike) -> SignatureFileHeader:
    try:
        with open(path, "rb") as fh:
            head = fh.read(HEADER_SIZE)
        size = os.path.getsize(path)
    except OSError as exc:
        raise StorageError(exc.strerror or str(exc), path) from exc
    header = SignatureFileHeader.unpack(head, path)
    expected = HEADER_SIZE + header.record_count * header.record_size
    if size != expected:
        raise CorruptFileError(f"file is {size} bytes, header implies {expected}", path)
    return header


def open_signature_file(path: os.PathLike) -> tuple[SignatureFileHeader, np.ndarray]:
    """Header plus a read-only memory map of the records."""
    header = read_signature_header(path)
    dtype = record_dtype(header.num_hashes, header.bands)
    if header.record_count == 0:
        return header, np.empty(0, dtype=dtype)
    mm = np.memmap(path, dtype=dtype, mode="r", offset=HEADER_SIZE, shape=(header.record_count,))
    return header, mm


def read_signature_file(path: os.PathLike) -> tuple[SignatureFileHeader, np.ndarray]:
    header, mm = open_signature_file(path)
    return header, np.array(mm)


def check_compatible(headers: Sequence[SignatureFileHeader], paths: Sequence = ()) -> SignatureFileHeader:
    if not headers:
        raise ConfigError("no signature files")
    ref = headers[0].run_params()
    for i, h in enumerate(headers[1:], 1):
        if h.run_params() != ref:
            where = paths[i] if i < len(paths) else f"file #{i}"
            raise IncompatibleRunError(f"{where}: signature header parameters differ from the first file")
    return headers[0]


@dataclass(frozen=True)
class GatherPass:
    worker: int
    bands: range
    bucket_lo: int
    bucket_hi: int  # exclusive


@dataclass(frozen=True)
class GatherPlan:
    buckets_per_pass: int
    num_buckets: int
    bands: int
    passes: tuple[GatherPass, ...]

    def for_worker(self, worker: int) -> list[GatherPass]:
        return [p for p in self.passes if p.worker == worker]


def plan_gather(total_signature_bytes: int, num_buckets: int, bands: int, workers: int, memory_budget: int, buckets_per_pass: int | None = None) -> GatherPlan:
    """Choose C, the buckets per pass, and tile every band's ``[0, K)`` into passes.

    C is the largest value with ``(total / K) * C * workers <= budget``,
    clamped to ``[1, K]``. Each pass covers one band, so the gathered data of
    a pass is about ``total / K * C`` bytes. ``buckets_per_pass`` overrides C.
    """
    from .lsh import band_partition

    if memory_budget <= 0:
        raise ConfigError(f"memory budget must be positive, got {memory_budget}")
    if num_buckets < 1 or bands < 1 or workers < 1:
        raise ConfigError("bucket count, band count and workers must be positive")
    if buckets_per_pass is not None:
        if buckets_per_pass < 1:
            raise ConfigError(f"buckets per pass must be positive, got {buckets_per_pass}")
        c = min(buckets_per_pass, num_buckets)
    elif total_signature_bytes <= 0:
        c = num_buckets
    else:
        c = memory_budget * num_buckets // (total_signature_bytes * workers)
        if c < 1:
            per_bucket = total_signature_bytes / num_buckets
            raise ConfigError(
                f"memory budget {memory_budget} B cannot hold one bucket per worker "
                f"(~{per_bucket:.0f} B per bucket x {workers} workers); raise the budget or the bucket count"
            )
        c = min(c, num_buckets)
    passes = []
    for worker, owned in enumerate(band_partition(bands, workers)):
        for band in owned:
            for lo in range(0, num_buckets, c):
                passes.append(GatherPass(worker, range(band, band + 1), lo, min(lo + c, num_buckets)))
    return GatherPlan(c, num_buckets, bands, tuple(passes))


class GatheredBuckets(Mapping):
    """Result of one gather pass: buckets holding two or more documents.

    Maps :class:`BucketKey` to ``(doc_ids, signatures)`` arrays in doc_id
    order. The underlying storage is one flat array of gathered records plus
    a per-bucket index range into ``order``; kernels use those directly.
    """

    def __init__(self, doc_ids, sigs, order, starts, ends, keys):
        self.doc_ids = doc_ids
        self.sigs = sigs
        self.order = order
        self.starts = starts
        self.ends = ends
        self._keys = keys
        self._index = {k: i for i, k in enumerate(keys)}

    @classmethod
    def empty(cls, num_hashes: int) -> "GatheredBuckets":
        z = np.empty(0, dtype=np.int64)
        return cls(np.empty(0, np.uint64), np.empty((0, num_hashes), np.uint32), z, z, z, [])

    def batch(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        rows = self.order[self.starts[i] : self.ends[i]]
        return self.doc_ids[rows], self.sigs[rows]

    def __getitem__(self, key: BucketKey):
        return self.batch(self._index[key])

    def __iter__(self) -> Iterator[BucketKey]:
        return iter(self._keys)

    def __len__(self) -> int:
        return len(self._keys)

    @property
    def num_documents(self) -> int:
        return int((self.ends - self.starts).sum())

    @property
    def nbytes(self) -> int:
        return sum(a.nbytes for a in (self.doc_ids, self.sigs, self.order, self.starts, self.ends))


def scan_gather(files: Sequence[os.PathLike], bands, bucket_interval: tuple[int, int], chunk_records: int = 1 << 14) -> GatheredBuckets:
    """Collect documents whose bucket id in ``bands`` lies in ``[lo, hi)``.

    All files are scanned in source order. Buckets with fewer than two
    documents are dropped. Memory beyond the gathered records is a per-chunk
    scratch of ``chunk_records`` entries plus one index per selected record.
    """
    lo, hi = bucket_interval
    bands = range(bands, bands + 1) if isinstance(bands, int) else bands
    opened = [open_signature_file(f) for f in files]
    headers = [h for h, _ in opened]
    ref = check_compatible(headers, list(files))
    if not (0 <= bands.start and bands.stop <= ref.bands):
        raise ConfigError(f"band range {bands} outside [0, {ref.bands})")
    opened.sort(key=lambda hm: hm[0].source_ordinal)

    # Pass 1: row indices of matching records per (band, file).
    selected: list[tuple[int, np.ndarray, np.ndarray]] = []
    total = 0
    for band in bands:
        for header, mm in opened:
            n = header.record_count
            for start in range(0, n, chunk_records):
                col = mm["bucket"][start : start + chunk_records, band]
                idx = np.flatnonzero((col >= lo) & (col < hi))
                if len(idx):
                    idx += start
                    selected.append((band, mm, idx))
                    total += len(idx)
    if total == 0:
        return GatheredBuckets.empty(ref.num_hashes)

    # Pass 2: copy matching records into exactly sized arrays.
    doc_ids = np.empty(total, dtype=np.uint64)
    sigs = np.empty((total, ref.num_hashes), dtype=np.uint32)
    key = np.empty(total, dtype=np.int64)
    pos = 0
    for band, mm, idx in selected:
        k = len(idx)
        doc_ids[pos : pos + k] = mm["doc_id"][idx]
        # np.take on the strided field view would copy the whole column first;
        # small fancy-index blocks keep the temporary bounded.
        field = mm["sig"]
        for r in range(0, k, _COPY_BLOCK):
            sigs[pos + r : pos + min(r + _COPY_BLOCK, k)] = field[idx[r : r + _COPY_BLOCK]]
        key[pos : pos + k] = mm["bucket"][idx, band]
        key[pos : pos + k] += band * ref.num_buckets
        pos += k
    del selected

    order = np.lexsort((doc_ids, key))
    skey = key[order]
    del key
    bounds = np.flatnonzero(np.diff(skey)) + 1
    starts = np.concatenate(([0], bounds))
    ends = np.concatenate((bounds, [total]))
    keep = (ends - starts) >= 2
    starts, ends = starts[keep], ends[keep]
    keys = [BucketKey(int(v) // ref.num_buckets, int(v) % ref.num_buckets) for v in skey[starts]]
    return GatheredBuckets(doc_ids, sigs, order, starts, ends, keys)
