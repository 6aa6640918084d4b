"""Staged dedup pipeline: hash, gather-compare, union.

Workspace layout::

    run.json                 manifest, derived parameters, completed stages
    rejects.jsonl            malformed, filtered and short records
    signatures/*.feds        one signature file per input file
    pairs/*.pairs            one pair file per worker per gather pass
    report/                  groups.jsonl, removal.txt, summary.json

Each completed stage records a key hashed from the parameters that affect its
output. A later stage refuses inputs whose key does not match the current
configuration, and ``run_dedup`` recomputes stale stages instead of reusing
them. Worker count, memory budget and tile size change how work is scheduled,
never what is produced, so they are left out of the keys.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import multiprocessing
import os
import queue
import shutil
import threading
import time
import tracemalloc
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import compare, corpus, graph, lsh, minhash, oracle, sigstore
from .errors import ConfigError, IncompatibleRunError, PrerequisiteError, StorageError

log = logging.getLogger(__name__)

STAGES = ("hash", "gather-compare", "union")
HASH_BATCH_DOCS = 2048


@dataclass
class RunConfig:
    inputs: list[str] = field(default_factory=list)
    workspace: str = "workspace"
    num_hashes: int = 128
    bands: int = 16
    rows: int = 8
    shingle_len: int = 5
    unit: str = "byte"
    threshold: Fraction = Fraction(4, 5)
    bucket_scale: Fraction = Fraction(2)
    min_chars: int = corpus.DEFAULT_MIN_CHARS
    seed: int = minhash.DEFAULT_SEED
    workers: int = 1
    memory_budget: int = 2 << 30
    buckets_per_pass: int | None = None
    text_field: str = corpus.DEFAULT_TEXT_FIELD
    tile: int = compare.DEFAULT_TILE
    fsync: bool = False
    trace_memory: bool = False

    def __post_init__(self):
        self.threshold = lsh.as_fraction(self.threshold)
        self.bucket_scale = lsh.as_fraction(self.bucket_scale)
        self.inputs = [str(p) for p in self.inputs]
        self.workspace = str(self.workspace)
        self.validate()

    def validate(self) -> None:
        if self.num_hashes != self.bands * self.rows:
            raise ConfigError(f"hashes ({self.num_hashes}) must equal bands x rows ({self.bands} x {self.rows})")
        if not 0 <= self.threshold <= 1:
            raise ConfigError(f"threshold must lie in [0, 1], got {self.threshold}")
        if self.bucket_scale <= 0:
            raise ConfigError(f"bucket scale must be positive, got {self.bucket_scale}")
        if self.workers < 1:
            raise ConfigError(f"workers must be positive, got {self.workers}")
        if self.memory_budget <= 0:
            raise ConfigError(f"memory budget must be positive, got {self.memory_budget}")
        if self.unit not in minhash.UNITS:
            raise ConfigError(f"unknown shingle unit {self.unit!r}")
        if self.shingle_len < 1 or self.min_chars < 0:
            raise ConfigError("shingle length must be positive and min chars non-negative")

    def family(self) -> minhash.HashFamily:
        return minhash.derive_family(self.seed, self.num_hashes, self.shingle_len, self.unit)

    def hash_key(self, manifest: corpus.CorpusManifest) -> str:
        inputs = []
        for p in manifest.paths:
            st = os.stat(p)
            inputs.append([p, st.st_size, st.st_mtime_ns])
        return _digest(
            {
                "inputs": inputs,
                "num_hashes": self.num_hashes,
                "bands": self.bands,
                "rows": self.rows,
                "shingle_len": self.shingle_len,
                "unit": self.unit,
                "bucket_scale": str(self.bucket_scale),
                "min_chars": self.min_chars,
                "seed": self.seed,
                "text_field": self.text_field,
            }
        )

    def compare_key(self, hash_key: str) -> str:
        return _digest({"hash": hash_key, "threshold": str(self.threshold)})

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["threshold"] = str(self.threshold)
        d["bucket_scale"] = str(self.bucket_scale)
        return d


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


class Workspace:
    def __init__(self, root: os.PathLike):
        self.root = Path(root)
        self.run_file = self.root / "run.json"
        self.sig_dir = self.root / "signatures"
        self.pair_dir = self.root / "pairs"
        self.report_dir = self.root / "report"
        self.rejects = self.root / "rejects.jsonl"

    def relative(self, path: os.PathLike) -> str:
        return os.path.relpath(path, self.root)

    def resolve(self, rel: str) -> str:
        return str(self.root / rel)

    def load(self) -> dict:
        if not self.run_file.exists():
            return {}
        try:
            return json.loads(self.run_file.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise StorageError(f"unreadable run manifest: {exc}", self.run_file) from exc

    def save(self, run: dict) -> None:
        tmp = self.run_file.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(run, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, self.run_file)

    def prepare(self) -> None:
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageError(exc.strerror or str(exc), self.root) from exc


def _pool(workers: int):
    ctx = multiprocessing.get_context("fork") if "fork" in multiprocessing.get_all_start_methods() else None
    return ProcessPoolExecutor(max_workers=workers, mp_context=ctx)


def _map(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with _pool(min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


# -- hash stage ---------------------------------------------------------------


def _batches(manifest, ordinal, rejects, size):
    batch = []
    for doc in corpus.iter_clean_documents(manifest, ordinal, rejects):
        batch.append(doc)
        if len(batch) == size:
            yield batch
            batch = []
    if batch:
        yield batch


def _prefetch(gen):
    """Run ``gen`` in a reader thread, keeping at most one batch in flight."""
    slot: queue.Queue = queue.Queue(maxsize=1)
    done = object()

    def produce():
        try:
            for item in gen:
                slot.put(item)
        except BaseException as exc:  # re-raised in the consumer
            slot.put(exc)
        slot.put(done)

    t = threading.Thread(target=produce, daemon=True)
    t.start()
    while True:
        item = slot.get()
        if item is done:
            break
        if isinstance(item, BaseException):
            raise item
        yield item
    t.join()


def _hash_file(task) -> dict:
    manifest, ordinal, header, family, banding, out_path, fsync = task
    rejects = corpus.RejectLog()
    parts = []
    source = manifest.paths[ordinal]
    for batch in _prefetch(_batches(manifest, ordinal, rejects, HASH_BATCH_DOCS)):
        units, offsets = minhash.encode_batch([d.text for d in batch], family.unit)
        values, ok = minhash.signature_matrix(units, offsets, family)
        ids = np.array([d.doc_id for d in batch], dtype=np.uint64)
        if not ok.all():
            for i in np.flatnonzero(~ok):
                rejects.add(source, None, f"short document {int(ids[i])}: fewer than {family.shingle_len} {family.unit} units")
            ids, values = ids[ok], values[ok]
        parts.append(sigstore.make_records(ids, values, lsh.bucket_matrix(values, banding)))
    dtype = sigstore.record_dtype(banding.num_hashes, banding.bands)
    records = np.concatenate(parts) if parts else np.empty(0, dtype=dtype)
    written = sigstore.write_signature_file(dataclasses.replace(header, source_ordinal=ordinal), records, out_path, fsync=fsync)
    return {"ordinal": ordinal, "path": out_path, "records": written.record_count, "rejects": rejects.entries}


def run_hash(config: RunConfig) -> dict:
    """Ingest, sign and bucket every input file; one signature file per input."""
    if not config.inputs:
        raise ConfigError("no input files given")
    t0 = time.perf_counter()
    ws = Workspace(config.workspace)
    ws.prepare()
    manifest = corpus.build_manifest(config.inputs, config.min_chars, config.text_field)
    n = manifest.total_kept
    if n == 0:
        raise ConfigError(f"no documents survive filtering (min_chars={config.min_chars}) in {len(manifest.paths)} file(s)")
    banding = lsh.BandingConfig.for_corpus(config.bands, config.rows, n, config.bucket_scale)
    family = config.family()
    header = sigstore.SignatureFileHeader(
        num_hashes=config.num_hashes,
        bands=config.bands,
        rows=config.rows,
        num_buckets=banding.num_buckets,
        shingle_len=config.shingle_len,
        unit=config.unit,
        seed=config.seed,
        bucket_scale=config.bucket_scale,
    )
    if ws.sig_dir.exists():
        shutil.rmtree(ws.sig_dir)
    ws.sig_dir.mkdir(parents=True)
    tasks = []
    for ordinal, path in enumerate(manifest.paths):
        out = ws.sig_dir / f"{ordinal:05d}-{Path(path).name}.feds"
        tasks.append((manifest, ordinal, header, family, banding, out, config.fsync))
    results = sorted(_map(_hash_file, tasks, config.workers), key=lambda r: r["ordinal"])

    rejects = corpus.RejectLog()
    for r in results:
        rejects.entries.extend(r["rejects"])
    rejects.write(ws.rejects)

    key = config.hash_key(manifest)
    stage = {
        "key": key,
        "manifest": manifest.to_dict(),
        "num_docs": sum(r["records"] for r in results),
        "num_buckets": banding.num_buckets,
        "signature_files": [ws.relative(r["path"]) for r in results],
        "signature_bytes": sum(os.path.getsize(r["path"]) for r in results),
        "header": {
            "num_hashes": header.num_hashes,
            "bands": header.bands,
            "rows": header.rows,
            "num_buckets": header.num_buckets,
            "shingle_len": header.shingle_len,
            "unit": header.unit,
            "seed": header.seed,
            "bucket_scale": str(header.bucket_scale),
        },
        "rejects": len(rejects),
        "seconds": time.perf_counter() - t0,
    }
    run = {"config": config.to_dict(), "stages": {"hash": stage}}
    ws.save(run)
    return stage


# -- gather-compare stage -----------------------------------------------------


def _compare_worker(task) -> dict:
    files, passes, threshold, tile, chunk_records, pair_dir, trace = task
    stats = {"passes": 0, "pairs": 0, "gather_seconds": 0.0, "compare_seconds": 0.0, "peak_gather_bytes": 0, "files": []}
    for idx, gp in passes:
        t0 = time.perf_counter()
        if trace:
            tracemalloc.start()
        gathered = sigstore.scan_gather(files, gp.bands, (gp.bucket_lo, gp.bucket_hi), chunk_records)
        if trace:
            _, peak = tracemalloc.get_traced_memory()
            tracemalloc.stop()
            stats["peak_gather_bytes"] = max(stats["peak_gather_bytes"], peak)
        t1 = time.perf_counter()
        pairs = compare.compare_pass(gathered, threshold, tile)
        del gathered
        out = Path(pair_dir) / f"w{gp.worker:03d}-p{idx:05d}.pairs"
        compare.write_pairs(pairs, out)
        stats["gather_seconds"] += t1 - t0
        stats["compare_seconds"] += time.perf_counter() - t1
        stats["passes"] += 1
        stats["pairs"] += len(pairs)
        stats["files"].append(out.name)
    return stats


def _require(run: dict, stage: str, key: str | None, needed_by: str) -> dict:
    info = run.get("stages", {}).get(stage)
    if info is None:
        raise PrerequisiteError(f"stage {needed_by!r} needs the outputs of stage {stage!r}; run '{stage}' first")
    if key is not None and info.get("key") != key:
        raise PrerequisiteError(f"outputs of stage {stage!r} were produced under a different configuration; rerun '{stage}'")
    return info


def _check_signature_files(ws: Workspace, hash_info: dict) -> list[str]:
    files = [ws.resolve(f) for f in hash_info["signature_files"]]
    missing = [f for f in files if not os.path.exists(f)]
    if missing:
        raise PrerequisiteError(f"signature files missing: {missing[:3]}; rerun 'hash'")
    headers = [sigstore.read_signature_header(f) for f in files]
    sigstore.check_compatible(headers, files)
    expected = hash_info["header"]
    h = headers[0]
    got = {
        "num_hashes": h.num_hashes,
        "bands": h.bands,
        "rows": h.rows,
        "num_buckets": h.num_buckets,
        "shingle_len": h.shingle_len,
        "unit": h.unit,
        "seed": h.seed,
        "bucket_scale": str(h.bucket_scale),
    }
    if got != expected:
        raise IncompatibleRunError(f"signature headers {got} do not match the run manifest {expected}")
    return files


def _current_hash_key(config: RunConfig, hash_info: dict) -> str:
    manifest = corpus.CorpusManifest.from_dict(hash_info["manifest"])
    if sorted(str(Path(p)) for p in config.inputs) != list(manifest.paths):
        return "inputs-changed"
    try:
        return config.hash_key(manifest)
    except OSError:
        return "inputs-missing"


def run_gather_compare(config: RunConfig) -> dict:
    """Plan gather passes, then compare every bucket of every pass."""
    t0 = time.perf_counter()
    ws = Workspace(config.workspace)
    run = ws.load()
    hash_info = _require(run, "hash", None, "gather-compare")
    hash_key = _current_hash_key(config, hash_info)
    _require(run, "hash", hash_key, "gather-compare")
    files = _check_signature_files(ws, hash_info)

    plan = sigstore.plan_gather(
        hash_info["signature_bytes"], hash_info["num_buckets"], config.bands, config.workers, config.memory_budget, config.buckets_per_pass
    )
    per_worker_budget = config.memory_budget // config.workers
    # pass-1 scratch is ~11 bytes per chunk record; keep it near 2% of the share
    chunk_records = max(256, min(1 << 16, per_worker_budget // 512))
    if ws.pair_dir.exists():
        shutil.rmtree(ws.pair_dir)
    ws.pair_dir.mkdir(parents=True)
    indexed = list(enumerate(plan.passes))
    tasks = []
    for w in range(config.workers):
        mine = [(i, p) for i, p in indexed if p.worker == w]
        if mine:
            tasks.append((files, mine, config.threshold, config.tile, chunk_records, str(ws.pair_dir), config.trace_memory))
    results = _map(_compare_worker, tasks, config.workers)

    stage = {
        "key": config.compare_key(hash_key),
        "buckets_per_pass": plan.buckets_per_pass,
        "passes": len(plan.passes),
        "pair_files": sorted(f for r in results for f in r["files"]),
        "pair_records": sum(r["pairs"] for r in results),
        "gather_seconds": sum(r["gather_seconds"] for r in results),
        "compare_seconds": sum(r["compare_seconds"] for r in results),
        "peak_gather_bytes": max((r["peak_gather_bytes"] for r in results), default=0),
        "memory_budget": config.memory_budget,
        "workers": config.workers,
        "seconds": time.perf_counter() - t0,
    }
    run.setdefault("stages", {})["gather-compare"] = stage
    run["stages"].pop("union", None)
    ws.save(run)
    return stage


# -- union stage --------------------------------------------------------------


def run_union(config: RunConfig) -> graph.DedupReport:
    """Union all pair files into groups and write the report."""
    t0 = time.perf_counter()
    ws = Workspace(config.workspace)
    run = ws.load()
    hash_info = _require(run, "hash", None, "union")
    cmp_info = _require(run, "gather-compare", None, "union")
    key = config.compare_key(_current_hash_key(config, hash_info))
    _require(run, "gather-compare", key, "union")
    pair_files = [str(ws.pair_dir / f) for f in cmp_info["pair_files"]]
    missing = [f for f in pair_files if not os.path.exists(f)]
    if missing:
        raise PrerequisiteError(f"pair files missing: {missing[:3]}; rerun 'gather-compare'")

    uf = graph.UnionFind()
    records = 0
    distinct = set()
    for pairs in compare.iter_pair_files(pair_files):
        records += len(pairs)
        graph.union_pairs(pairs, uf)
        distinct.update(zip(pairs["lo"].tolist(), pairs["hi"].tolist()))
    groups = graph.components(uf)
    report = graph.emit_report(
        groups,
        hash_info["num_docs"],
        docs_scanned=hash_info["num_docs"],
        pair_records=records,
        distinct_pairs=len(distinct),
        rejected_records=hash_info["rejects"],
    )
    ws.report_dir.mkdir(parents=True, exist_ok=True)
    report.write(ws.report_dir)
    run["stages"]["union"] = {"key": key, "seconds": time.perf_counter() - t0, **report.summary()}
    ws.save(run)
    return report


def load_report(config: RunConfig) -> graph.DedupReport:
    ws = Workspace(config.workspace)
    run = ws.load()
    hash_info = _require(run, "hash", None, "report")
    groups = []
    with open(ws.report_dir / "groups.jsonl") as fh:
        for line in fh:
            d = json.loads(line)
            groups.append(graph.DuplicateGroup(d["representative"], tuple(d["members"])))
    summary = json.loads((ws.report_dir / "summary.json").read_text())
    keep = ("docs_scanned", "pair_records", "distinct_pairs", "rejected_records")
    return graph.emit_report(groups, hash_info["num_docs"], **{k: summary[k] for k in keep if k in summary})


def run_stage(name: str, config: RunConfig):
    if name == "hash":
        return run_hash(config)
    if name == "gather-compare":
        return run_gather_compare(config)
    if name == "union":
        return run_union(config)
    raise ConfigError(f"unknown stage {name!r}; expected one of {STAGES}")


def _stage_current(config: RunConfig, ws: Workspace, run: dict, name: str) -> bool:
    stages = run.get("stages", {})
    if "hash" not in stages:
        return False
    hkey = _current_hash_key(config, stages["hash"])
    if name == "hash":
        if stages["hash"].get("key") != hkey:
            return False
        return all(os.path.exists(ws.resolve(f)) for f in stages["hash"]["signature_files"])
    if name == "gather-compare":
        info = stages.get("gather-compare")
        return bool(info) and info.get("key") == config.compare_key(hkey) and all((ws.pair_dir / f).exists() for f in info["pair_files"])
    return False


def run_dedup(config: RunConfig, resume: bool = True) -> graph.DedupReport:
    """All three stages; completed stages with matching keys are reused when ``resume``."""
    ws = Workspace(config.workspace)
    run = ws.load() if resume else {}
    if not _stage_current(config, ws, run, "hash"):
        run_hash(config)
        run = ws.load()
    else:
        log.info("hash stage up to date, reusing %s", ws.sig_dir)
    if not _stage_current(config, ws, run, "gather-compare"):
        run_gather_compare(config)
    else:
        log.info("gather-compare stage up to date, reusing %s", ws.pair_dir)
    return run_union(config)


# -- evaluation and benchmarking ----------------------------------------------


def eval_accuracy(config: RunConfig, allow_large: bool = False) -> dict:
    """Pipeline dup-set against the all-pairs MinHash dup-set of the same corpus."""
    manifest = corpus.build_manifest(config.inputs, config.min_chars, config.text_field)
    docs = list(corpus.iter_corpus(manifest))
    family = config.family()
    if len(docs) > oracle.ORACLE_MAX_DOCS and not allow_large:
        raise oracle.OracleGuardError(f"corpus of {len(docs)} documents exceeds the oracle guard ({oracle.ORACLE_MAX_DOCS})")
    t0 = time.perf_counter()
    report = run_dedup(config)
    t1 = time.perf_counter()
    reference = oracle.standard_minhash_dupset(docs, family, config.threshold, workers=config.workers, allow_large=allow_large)
    t2 = time.perf_counter()
    n = len(docs)
    rows = [
        oracle.accuracy_row("standard-minhash", reference.doc_ids, n),
        oracle.accuracy_row("lsh-pipeline", report.near_duplicate_set, n, reference.doc_ids),
    ]
    result = {
        "rows": rows,
        "jaccard_vs_oracle": rows[1]["jaccard_vs_oracle"],
        "pipeline_seconds": t1 - t0,
        "oracle_seconds": t2 - t1,
    }
    out = Path(config.workspace) / "accuracy.json"
    out.write_text(json.dumps(result, indent=2) + "\n")
    return result


def bench(config: RunConfig, worker_counts: list[int]) -> list[dict]:
    """Wall-clock per stage for each worker count, each in a fresh sub-workspace."""
    rows = []
    for w in worker_counts:
        sub = dataclasses.replace(config, workers=w, workspace=str(Path(config.workspace) / f"bench-w{w}"))
        if Path(sub.workspace).exists():
            shutil.rmtree(sub.workspace)
        t0 = time.perf_counter()
        run_hash(sub)
        t1 = time.perf_counter()
        run_gather_compare(sub)
        t2 = time.perf_counter()
        report = run_union(sub)
        t3 = time.perf_counter()
        rows.append(
            {
                "workers": w,
                "hash_seconds": t1 - t0,
                "compare_seconds": t2 - t1,
                "union_seconds": t3 - t2,
                "total_seconds": t3 - t0,
                "groups": len(report.groups),
            }
        )
    base = rows[0]["total_seconds"] if rows else 0
    for r in rows:
        r["speedup"] = base / r["total_seconds"] if r["total_seconds"] else float("nan")
    (Path(config.workspace)).mkdir(parents=True, exist_ok=True)
    (Path(config.workspace) / "bench.json").write_text(json.dumps(rows, indent=2) + "\n")
    return rows
