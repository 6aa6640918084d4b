"""Near-duplicate detection for text corpora with MinHash LSH.

Rolling polynomial hashes produce MinHash signatures, bands are bucketed by
their sum modulo K, buckets are gathered from signature files in
memory-bounded passes, and every pair inside a bucket is compared. Duplicate
pairs are merged into groups with a union-find.
"""

from .compare import DuplicatePair, compare_bucket, sim_sig
from .corpus import CleanDocument, RawDocument, build_manifest, preprocess
from .graph import DedupReport, DuplicateGroup, UnionFind, components, union_pairs
from .lsh import BandingConfig, bucket_ids, bucket_matrix, choose_bucket_count
from .minhash import HashFamily, Signature, derive_family, signature_batch, signature_of_document
from .pipeline import RunConfig, run_dedup
from .sigstore import plan_gather, scan_gather

__version__ = "0.1.0"
