"""Banding: split signatures into bands and bucket each band by its sum modulo K."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigError

DEFAULT_BUCKET_SCALE = Fraction(2)


def as_fraction(value) -> Fraction:
    """Exact rational from an int, float, Fraction or a string such as ``"0.8"`` or ``"3/2"``."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(str(value))
    return Fraction(value)


@dataclass(frozen=True)
class BandingConfig:
    bands: int
    rows: int
    num_buckets: int
    bucket_scale: Fraction = DEFAULT_BUCKET_SCALE

    def __post_init__(self):
        if self.bands < 1 or self.rows < 1:
            raise ConfigError(f"bands and rows must be positive, got b={self.bands}, r={self.rows}")
        if self.num_buckets < 1:
            raise ConfigError(f"bucket count must be positive, got {self.num_buckets}")
        if self.num_buckets >= 1 << 32:
            raise ConfigError(f"bucket count {self.num_buckets} does not fit in 32 bits")

    @property
    def num_hashes(self) -> int:
        return self.bands * self.rows

    @classmethod
    def for_corpus(cls, bands: int, rows: int, num_docs: int, bucket_scale=DEFAULT_BUCKET_SCALE) -> "BandingConfig":
        kappa = as_fraction(bucket_scale)
        return cls(bands, rows, choose_bucket_count(num_docs, kappa), kappa)


@dataclass(frozen=True)
class BucketKey:
    band: int
    bucket: int


@dataclass(frozen=True)
class BucketAssignment:
    doc_id: int
    bucket_ids: tuple[int, ...]


def choose_bucket_count(num_docs: int, bucket_scale=DEFAULT_BUCKET_SCALE) -> int:
    """``max(1, ceil(kappa * sqrt(N)))``, evaluated exactly for rational kappa."""
    if num_docs < 1:
        raise ConfigError(f"need at least one document to size buckets, got {num_docs}")
    kappa = as_fraction(bucket_scale)
    if kappa <= 0:
        raise ConfigError(f"bucket scale must be positive, got {kappa}")
    # ceil(a/d * sqrt(N)) = ceil(ceil(sqrt(a^2 N)) / d) for kappa = a/d.
    a, d = kappa.numerator, kappa.denominator
    target = a * a * num_docs
    root = math.isqrt(target)
    if root * root < target:
        root += 1
    k = -(-root // d)
    return max(1, k)


def bucket_ids(signature, config: BandingConfig) -> BucketAssignment:
    """Bucket id per band for one :class:`~neardup.minhash.Signature`."""
    values = np.asarray(signature.values)
    if values.shape != (config.num_hashes,):
        raise ConfigError(f"signature has {values.size} values, expected b*r = {config.num_hashes}")
    ids = bucket_matrix(values[None, :], config)[0]
    return BucketAssignment(doc_id=signature.doc_id, bucket_ids=tuple(int(x) for x in ids))


def bucket_matrix(values: np.ndarray, config: BandingConfig) -> np.ndarray:
    """Vectorized bucket ids: ``(n, b*r)`` signature values to ``(n, b)`` uint32."""
    values = np.asarray(values)
    if values.ndim != 2 or values.shape[1] != config.num_hashes:
        raise ConfigError(f"signature matrix has shape {values.shape}, expected (n, {config.num_hashes})")
    sums = values.astype(np.uint64).reshape(len(values), config.bands, config.rows).sum(axis=2, dtype=np.uint64)
    return (sums % np.uint64(config.num_buckets)).astype(np.uint32)


def band_partition(bands: int, workers: int) -> list[range]:
    """Contiguous, balanced band ranges, one per worker; trailing workers may get none."""
    if workers < 1:
        raise ConfigError(f"worker count must be positive, got {workers}")
    size, extra = divmod(bands, workers)
    out, start = [], 0
    for w in range(workers):
        stop = start + size + (1 if w < extra else 0)
        out.append(range(start, stop))
        start = stop
    return out
