"""Rolling polynomial hash family and MinHash signature generation.

A window ``c_1 .. c_L`` of text units hashes to ``sum(c_i * q**(i-1)) mod p``.
Sliding the window one unit to the right reuses the previous value::

    h(t) = ((h(s) - c_1) * q_inv + c_{L+1} * q**(L-1)) mod p

where ``q_inv`` is the inverse of ``q`` modulo the prime ``p``. Every hash
function of a family is one ``(p, q)`` pair; a document's signature holds,
for each function, the minimum over all of its windows.

Moduli are primes in ``[2**21, 2**23)`` so that values fit in 32 bits and
every intermediate product stays below ``2**47``.
"""

from __future__ import annotations

import functools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numba
import numpy as np

from .errors import ConfigError, ShortDocumentError

UNITS = ("byte", "codepoint")
UNIT_TAGS = {"byte": 0, "codepoint": 1}

P_RANGE = (1 << 21, 1 << 23)
# q must exceed the unit alphabet: 256 byte values, or every Unicode code point.
Q_RANGES = {"byte": (257, 1 << 16), "codepoint": (0x110000, 1 << 21)}

DEFAULT_SEED = 0x5EED


@dataclass(frozen=True)
class HashFunctionParams:
    p: int
    q: int
    q_inv: int
    q_pow: int

    @classmethod
    def from_pair(cls, p: int, q: int, shingle_len: int) -> "HashFunctionParams":
        if shingle_len < 1:
            raise ConfigError(f"shingle length must be positive, got {shingle_len}")
        try:
            q_inv = pow(q, -1, p)
        except ValueError as exc:
            raise ConfigError(f"q={q} has no inverse modulo p={p}") from exc
        return cls(p=p, q=q, q_inv=q_inv, q_pow=pow(q, shingle_len - 1, p))


@dataclass(frozen=True)
class HashFamily:
    params: tuple[HashFunctionParams, ...]
    shingle_len: int
    unit: str = "byte"
    seed: int = DEFAULT_SEED
    # Columnar copies of params for the kernels.
    arrays: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cols = {
            name: np.array([getattr(fp, name) for fp in self.params], dtype=np.int64)
            for name in ("p", "q", "q_inv", "q_pow")
        }
        for arr in cols.values():
            arr.setflags(write=False)
        object.__setattr__(self, "arrays", cols)

    @property
    def num_hashes(self) -> int:
        return len(self.params)

    def __len__(self) -> int:
        return len(self.params)


@dataclass(frozen=True)
class Signature:
    doc_id: int
    values: np.ndarray  # uint32, one entry per hash function

    def __eq__(self, other):
        if not isinstance(other, Signature):
            return NotImplemented
        return self.doc_id == other.doc_id and np.array_equal(self.values, other.values)

    __hash__ = None


@functools.lru_cache(maxsize=8)
def primes_between(lo: int, hi: int) -> np.ndarray:
    """All primes in ``[lo, hi)`` by a sieve of Eratosthenes."""
    if hi <= 2:
        return np.empty(0, dtype=np.int64)
    sieve = np.ones(hi, dtype=bool)
    sieve[:2] = False
    for n in range(2, int(hi**0.5) + 1):
        if sieve[n]:
            sieve[n * n :: n] = False
    out = np.flatnonzero(sieve[lo:]).astype(np.int64) + lo
    out.setflags(write=False)
    return out


def derive_family(
    seed: int = DEFAULT_SEED,
    num_hashes: int = 128,
    shingle_len: int = 5,
    unit: str = "byte",
) -> HashFamily:
    """Derive ``num_hashes`` distinct ``(p, q)`` pairs deterministically from ``seed``.

    A PCG64 generator seeded with ``seed`` draws the moduli without
    replacement from the primes in ``[2**21, 2**23)`` (sorted ascending),
    then draws each base uniformly from the primes in the unit's base range.
    Moduli are distinct, so pairs are distinct.
    """
    if num_hashes < 1:
        raise ConfigError(f"need at least one hash function, got {num_hashes}")
    if shingle_len < 1:
        raise ConfigError(f"shingle length must be positive, got {shingle_len}")
    if unit not in UNITS:
        raise ConfigError(f"unknown shingle unit {unit!r}; expected one of {UNITS}")
    if not 0 <= seed < 1 << 64:
        raise ConfigError(f"seed must fit in an unsigned 64-bit integer, got {seed}")

    p_pool = primes_between(*P_RANGE)
    q_pool = primes_between(*Q_RANGES[unit])
    if num_hashes > len(p_pool):
        raise ConfigError(f"cannot derive {num_hashes} distinct moduli; at most {len(p_pool)} available")

    rng = np.random.Generator(np.random.PCG64(seed))
    ps = p_pool[rng.choice(len(p_pool), size=num_hashes, replace=False)]
    qs = q_pool[rng.integers(0, len(q_pool), size=num_hashes)]
    params = tuple(HashFunctionParams.from_pair(int(p), int(q), shingle_len) for p, q in zip(ps, qs))
    return HashFamily(params=params, shingle_len=shingle_len, unit=unit, seed=seed)


def hash_window_direct(window: Sequence[int], params: HashFunctionParams) -> int:
    """Hash one window from scratch: ``sum(c_i * q**(i-1)) mod p``."""
    if len(window) == 0:
        raise ValueError("cannot hash an empty window")
    p, q = params.p, params.q
    acc = 0
    for c in reversed(window):
        c = int(c)
        if not 0 <= c < q:
            raise ValueError(f"unit value {c} outside [0, q={q})")
        acc = (acc * q + c) % p
    return acc


def roll_next(state: int, outgoing: int, incoming: int, params: HashFunctionParams) -> int:
    """Hash of the window shifted one unit right, from the current window's hash."""
    p = params.p
    return ((state - outgoing) % p * params.q_inv + incoming * params.q_pow) % p


def text_units(text: str, unit: str = "byte") -> np.ndarray:
    """Unit sequence of ``text``: UTF-8 bytes or Unicode code points."""
    if unit == "byte":
        return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.int64)
    if unit == "codepoint":
        return np.frombuffer(text.encode("utf-32-le"), dtype=np.uint32).astype(np.int64)
    raise ConfigError(f"unknown shingle unit {unit!r}")


def encode_batch(texts: Iterable[str], unit: str = "byte") -> tuple[np.ndarray, np.ndarray]:
    """Concatenate the unit sequences of ``texts``; returns ``(units, offsets)``.

    Document ``i`` occupies ``units[offsets[i]:offsets[i + 1]]``.
    """
    if unit == "byte":
        chunks = [t.encode("utf-8") for t in texts]
        dtype = np.uint8
    elif unit == "codepoint":
        chunks = [t.encode("utf-32-le") for t in texts]
        dtype = np.uint32
    else:
        raise ConfigError(f"unknown shingle unit {unit!r}")
    width = np.dtype(dtype).itemsize
    offsets = np.zeros(len(chunks) + 1, dtype=np.int64)
    np.cumsum([len(c) // width for c in chunks], out=offsets[1:])
    units = np.frombuffer(b"".join(chunks), dtype=dtype).astype(np.int64)
    return units, offsets


@numba.njit(nogil=True, cache=True, inline="always")
def _roll_step(h, c_out, c_in, p, p_recip, q_inv, q_pow):
    t = h - c_out
    if t < 0:
        t += p
    # x < 2**47 is exact in a double, so the reciprocal quotient is off by at most one.
    x = t * q_inv + c_in * q_pow
    x -= np.int64(x * p_recip) * p
    if x < 0:
        x += p
    elif x >= p:
        x -= p
    return x


@numba.njit(nogil=True, cache=True, inline="always")
def _horner(units, start, shingle_len, p, q):
    x = 0
    for i in range(shingle_len - 1, -1, -1):
        x = (x * q + units[start + i]) % p
    return x


@numba.njit(nogil=True, cache=True)
def _signature_kernel(units, offsets, p, q, q_inv, q_pow, shingle_len, out):
    n_docs = offsets.shape[0] - 1
    n_hash = p.shape[0]
    p_recip = 1.0 / p
    h = np.empty(n_hash, np.int64)
    best = np.empty(n_hash, np.int64)
    for d in range(n_docs):
        start = offsets[d]
        n_win = offsets[d + 1] - start - shingle_len + 1
        if n_win < 1:
            continue
        # Window 0 by Horner; every later window by one rolling step.
        for f in range(n_hash):
            h[f] = _horner(units, start, shingle_len, p[f], q[f])
            best[f] = h[f]
        for w in range(1, n_win):
            c_out = units[start + w - 1]
            c_in = units[start + w - 1 + shingle_len]
            for f in range(n_hash):
                x = _roll_step(h[f], c_out, c_in, p[f], p_recip[f], q_inv[f], q_pow[f])
                h[f] = x
                if x < best[f]:
                    best[f] = x
        for f in range(n_hash):
            out[d, f] = best[f]


@numba.njit(nogil=True, cache=True)
def _rolling_kernel(units, p, q, q_inv, q_pow, shingle_len, out):
    n_hash = p.shape[0]
    n_win = units.shape[0] - shingle_len + 1
    for f in range(n_hash):
        p_recip = 1.0 / p[f]
        h = _horner(units, 0, shingle_len, p[f], q[f])
        out[f, 0] = h
        for w in range(1, n_win):
            h = _roll_step(h, units[w - 1], units[w - 1 + shingle_len], p[f], p_recip, q_inv[f], q_pow[f])
            out[f, w] = h


def rolling_hashes(units, family: HashFamily) -> np.ndarray:
    """Hash of every window of one unit sequence, shape ``(H, n_windows)``.

    Window 0 is evaluated directly, the rest by the same rolling step the
    signature kernel uses.
    """
    units = np.ascontiguousarray(units, dtype=np.int64)
    n_win = len(units) - family.shingle_len + 1
    if n_win < 1:
        raise ShortDocumentError(f"{len(units)} units, fewer than shingle length {family.shingle_len}")
    a = family.arrays
    out = np.empty((family.num_hashes, n_win), dtype=np.int64)
    _rolling_kernel(units, a["p"], a["q"], a["q_inv"], a["q_pow"], family.shingle_len, out)
    return out


def signature_matrix(
    units: np.ndarray, offsets: np.ndarray, family: HashFamily, workers: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Signatures for a concatenated batch; returns ``(values, ok)``.

    ``values`` has shape ``(n_docs, H)``. ``ok[i]`` is False for documents
    shorter than one window; their rows are left zero.
    """
    n_docs = len(offsets) - 1
    a = family.arrays
    out = np.zeros((n_docs, family.num_hashes), dtype=np.uint32)
    ok = np.diff(offsets) >= family.shingle_len
    units = np.ascontiguousarray(units, dtype=np.int64)

    def run(lo: int, hi: int) -> None:
        _signature_kernel(
            units, offsets[lo : hi + 1], a["p"], a["q"], a["q_inv"], a["q_pow"], family.shingle_len, out[lo:hi]
        )

    if workers <= 1 or n_docs < 2:
        run(0, n_docs)
    else:
        bounds = np.linspace(0, n_docs, min(workers, n_docs) + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, bounds[:-1], bounds[1:]))
    return out, ok


def signature_of_document(doc, family: HashFamily) -> Signature:
    """MinHash signature of a ``CleanDocument`` (anything with ``doc_id`` and ``text``)."""
    units, offsets = encode_batch([doc.text], family.unit)
    if len(units) < family.shingle_len:
        raise ShortDocumentError(
            f"document {doc.doc_id} has {len(units)} units, fewer than shingle length {family.shingle_len}"
        )
    values, _ = signature_matrix(units, offsets, family)
    return Signature(doc_id=doc.doc_id, values=values[0])


def signature_batch(docs: Sequence, family: HashFamily, workers: int = 1, rejects: list | None = None) -> list[Signature]:
    """Signatures for ``docs`` in input order.

    Short documents raise :class:`ShortDocumentError` unless ``rejects`` is
    given, in which case they are recorded there and skipped.
    """
    docs = list(docs)
    units, offsets = encode_batch([d.text for d in docs], family.unit)
    values, ok = signature_matrix(units, offsets, family, workers=workers)
    out = []
    for i, doc in enumerate(docs):
        if not ok[i]:
            reason = f"short document: fewer than {family.shingle_len} {family.unit} units"
            if rejects is None:
                raise ShortDocumentError(f"document {doc.doc_id}: {reason}")
            rejects.append({"doc_id": doc.doc_id, "reason": reason})
            continue
        out.append(Signature(doc_id=doc.doc_id, values=values[i]))
    return out
