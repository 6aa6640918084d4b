"""Ground-truth engines for checking the LSH pipeline at desk scale.

Nothing here goes through banding or bucketing: signatures are evaluated
window by window without the rolling update, and duplicate pairs come from
comparing every pair of documents.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numba
import numpy as np

from .compare import min_matches
from .errors import OracleGuardError, ShortDocumentError
from .minhash import HashFamily, encode_batch, signature_matrix, text_units

ORACLE_WARN_DOCS = 100_000
ORACLE_MAX_DOCS = 1_000_000


@dataclass(frozen=True)
class NearDuplicateSet:
    doc_ids: frozenset
    method: str

    def __len__(self):
        return len(self.doc_ids)


def _text(doc) -> str:
    return doc if isinstance(doc, str) else doc.text


def window_set(doc, shingle_len: int = 5, unit: str = "byte") -> set[bytes]:
    units = text_units(_text(doc), unit)
    if len(units) < shingle_len:
        raise ShortDocumentError(f"document has {len(units)} units, fewer than shingle length {shingle_len}")
    raw = units.astype(np.uint32).tobytes()
    w = 4 * shingle_len
    return {raw[4 * i : 4 * i + w] for i in range(len(units) - shingle_len + 1)}


def exact_jaccard(doc_a, doc_b, shingle_len: int = 5, unit: str = "byte") -> Fraction:
    a = window_set(doc_a, shingle_len, unit)
    b = window_set(doc_b, shingle_len, unit)
    return Fraction(len(a & b), len(a | b))


def dupset_jaccard(set_a: Iterable, set_b: Iterable) -> Fraction:
    a, b = set(set_a), set(set_b)
    if not a and not b:
        return Fraction(1)
    return Fraction(len(a & b), len(a | b))


@numba.njit(nogil=True, cache=True)
def _direct_kernel(units, offsets, p, q, shingle_len, out):
    n_hash = p.shape[0]
    best = np.empty(n_hash, np.int64)
    for d in range(offsets.shape[0] - 1):
        best[:] = p
        for w in range(offsets[d], offsets[d + 1] - shingle_len + 1):
            for f in range(n_hash):
                x = 0
                for i in range(shingle_len - 1, -1, -1):
                    x = (x * q[f] + units[w + i]) % p[f]
                if x < best[f]:
                    best[f] = x
        out[d, :] = best


def direct_signatures(texts: Sequence[str], family: HashFamily) -> np.ndarray:
    """Signatures by evaluating every window from scratch (no rolling update)."""
    units, offsets = encode_batch(texts, family.unit)
    n_win = np.diff(offsets) - family.shingle_len + 1
    if np.any(n_win < 1):
        bad = int(np.flatnonzero(n_win < 1)[0])
        raise ShortDocumentError(f"document #{bad} is shorter than one window")
    out = np.empty((len(texts), family.num_hashes), dtype=np.uint32)
    _direct_kernel(units, offsets, family.arrays["p"], family.arrays["q"], family.shingle_len, out)
    return out


@numba.njit(nogil=True, cache=True)
def _all_pairs(sigs, row_lo, row_hi, need, out_i, out_j):
    """Every pair (i, j), i in [row_lo, row_hi), j > i, with at least ``need`` matches."""
    n, n_hash = sigs.shape
    budget = n_hash - need  # mismatches a pair may still afford
    cap = out_i.shape[0]
    n_out = 0
    for i in range(row_lo, row_hi):
        for j in range(i + 1, n):
            miss = 0
            k = 0
            while k < n_hash and miss <= budget:
                if sigs[i, k] != sigs[j, k]:
                    miss += 1
                k += 1
            if miss <= budget:
                if n_out == cap:
                    return -1
                out_i[n_out] = i
                out_j[n_out] = j
                n_out += 1
    return n_out


def all_pairs_above(sigs: np.ndarray, threshold, workers: int = 1) -> list[tuple[int, int]]:
    """Row-index pairs ``i < j`` with similarity strictly above ``threshold``.

    Rows are split into blocks processed independently; results are merged in
    block order so the output does not depend on ``workers``.
    """
    sigs = np.ascontiguousarray(sigs)
    n = len(sigs)
    need = min_matches(threshold, sigs.shape[1])
    if need > sigs.shape[1] or n < 2:
        return []

    def block(bounds):
        lo, hi = bounds
        cap = 1 << 12
        while True:
            oi = np.empty(cap, np.int64)
            oj = np.empty(cap, np.int64)
            k = _all_pairs(sigs, lo, hi, need, oi, oj)
            if k >= 0:
                return list(zip(oi[:k].tolist(), oj[:k].tolist()))
            cap *= 4

    # Equal-work blocks: row i costs n - i comparisons.
    n_blocks = max(1, workers) * 4
    edges = [0]
    for b in range(1, n_blocks):
        edges.append(int(n - n * np.sqrt(1 - b / n_blocks)))
    edges.append(n)
    blocks = [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    if workers <= 1:
        parts = [block(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(block, blocks))
    return [pair for part in parts for pair in part]


def standard_minhash_dupset(corpus: Sequence, family: HashFamily, threshold, workers: int = 1, allow_large: bool = False) -> NearDuplicateSet:
    """Near-duplicate set from comparing every pair of signatures, no LSH.

    ``corpus`` holds :class:`~neardup.corpus.CleanDocument` objects.
    """
    docs = list(corpus)
    n = len(docs)
    if n > ORACLE_MAX_DOCS and not allow_large:
        raise OracleGuardError(f"all-pairs oracle refuses {n} documents (limit {ORACLE_MAX_DOCS}); pass allow_large to override")
    if n > ORACLE_WARN_DOCS:
        warnings.warn(f"all-pairs oracle over {n} documents is quadratic and will be slow", RuntimeWarning, stacklevel=2)
    sigs = direct_signatures([d.text for d in docs], family)
    ids = [d.doc_id for d in docs]
    found = set()
    for i, j in all_pairs_above(sigs, threshold, workers):
        found.add(ids[i])
        found.add(ids[j])
    return NearDuplicateSet(frozenset(found), "standard-minhash")


def estimator_error_stats(pairs: Sequence[tuple], family: HashFamily) -> dict:
    """Exact window Jaccard against signature similarity for each text pair."""
    rows = []
    for a, b in pairs:
        j = exact_jaccard(a, b, family.shingle_len, family.unit)
        units, offsets = encode_batch([_text(a), _text(b)], family.unit)
        values, _ = signature_matrix(units, offsets, family)
        s = Fraction(int(np.count_nonzero(values[0] == values[1])), family.num_hashes)
        rows.append({"exact": j, "sim_sig": s, "error": abs(s - j)})
    mae = float(sum(r["error"] for r in rows) / len(rows)) if rows else 0.0
    return {"pairs": rows, "mean_abs_error": mae, "count": len(rows)}


def accuracy_row(method: str, dupset: Iterable, corpus_size: int, reference: Iterable | None = None) -> dict:
    dupset = set(dupset)
    row = {
        "method": method,
        "dupset_size": len(dupset),
        "corpus_size": corpus_size,
        "ratio": len(dupset) / corpus_size if corpus_size else 0.0,
        "jaccard_vs_oracle": None,
    }
    if reference is not None:
        row["jaccard_vs_oracle"] = float(dupset_jaccard(dupset, reference))
    return row
