"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict that is printed in the terminal summary
under "acceptance criteria". The large corpora are generated once per session.
"""

from __future__ import annotations

import json
import shutil
import time
from collections import deque
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import chisquare

from neardup.compare import BucketBatch, compare_bucket
from neardup.graph import components, emit_report, union_pairs
from neardup.minhash import derive_family, hash_window_direct, roll_next, rolling_hashes
from neardup.oracle import estimator_error_stats
from neardup.pipeline import RunConfig, eval_accuracy, run_dedup
from neardup.synthetic import SyntheticSpec, write_synthetic

pytestmark = pytest.mark.acceptance

CORPUS_50K = SyntheticSpec(num_docs=50_000, num_groups=5_000, group_size=(2, 2), seed=7, num_files=8)
CORPUS_100K = SyntheticSpec(num_docs=100_000, num_groups=10_000, group_size=(2, 2), seed=8, num_files=8)


@pytest.fixture(scope="module")
def corpus_50k(tmp_path_factory):
    return write_synthetic(CORPUS_50K, tmp_path_factory.mktemp("corpus50k"))


def direct_hashes(windows: np.ndarray, p: int, q: int) -> np.ndarray:
    """Vectorized from-scratch window hash, one Horner step per column."""
    h = np.zeros(len(windows), dtype=np.int64)
    for i in range(windows.shape[1] - 1, -1, -1):
        h = (h * q + windows[:, i]) % p
    return h


def report_files(workspace) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted((Path(workspace) / "report").iterdir())}


def test_rolling_hash_exactness(acceptance):
    t0 = time.perf_counter()
    fam = derive_family(seed=101, num_hashes=16)
    rng = np.random.default_rng(1)
    n_win = 1_000_000
    units = rng.integers(0, 256, size=n_win + fam.shingle_len - 1).astype(np.int64)
    windows = np.lib.stride_tricks.sliding_window_view(units, fam.shingle_len)
    rolled = rolling_hashes(units, fam)
    mismatches = 0
    for f, fp in enumerate(fam.params):
        mismatches += int(np.count_nonzero(rolled[f] != direct_hashes(windows, fp.p, fp.q)))
    # The scalar reference functions on a sample of every function's windows.
    scalar_checked = 0
    for fp in fam.params:
        h = hash_window_direct(windows[0], fp)
        for w in range(1, 4000):
            h = roll_next(h, int(units[w - 1]), int(units[w + fam.shingle_len - 1]), fp)
            mismatches += h != hash_window_direct(windows[w], fp)
            scalar_checked += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 60
    acceptance(1, ok, f"{n_win:,} windows x {fam.num_hashes} functions (+{scalar_checked:,} scalar rolls), {mismatches} mismatches, {elapsed:.1f}s")
    assert mismatches == 0
    assert elapsed < 60


def _naive_pairs(ids, sigs, need):
    out = set()
    for a in range(len(ids) - 1):
        m = np.count_nonzero(sigs[a + 1 :] == sigs[a], axis=1)
        for off in np.flatnonzero(m >= need).tolist():
            out.add((int(ids[a]), int(ids[a + 1 + off]), int(m[off])))
    return out


def test_kernel_equivalence(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    theta = Fraction(4, 5)
    need = 103
    differing, total_pairs = 0, 0
    for _ in range(1000):
        c = int(rng.integers(2, 513))
        sigs = rng.integers(0, 1 << 22, size=(c, 128), dtype=np.uint32)
        # near-copies of earlier rows, agreeing on a random 70-100% of positions
        for i in np.flatnonzero(rng.random(c) < 0.3):
            if i == 0:
                continue
            src = int(rng.integers(0, i))
            keep = rng.random(128) < rng.uniform(0.7, 1.0)
            sigs[i, keep] = sigs[src, keep]
        ids = np.sort(rng.choice(1 << 40, size=c, replace=False)).astype(np.uint64)
        got = {(p.lo, p.hi, p.matches) for p in compare_bucket(BucketBatch(ids, sigs), theta)}
        expected = _naive_pairs(ids, sigs, need)
        differing += got != expected
        total_pairs += len(expected)
    elapsed = time.perf_counter() - t0
    ok = differing == 0 and elapsed < 120
    acceptance(2, ok, f"1000 buckets of 2-512, {total_pairs:,} qualifying pairs, {differing} buckets differ, {elapsed:.1f}s")
    assert differing == 0
    assert elapsed < 120


def test_accuracy_against_all_pairs(corpus_50k, tmp_path, acceptance):
    planted = [json.loads(line) for line in open(corpus_50k["truth"])]
    above = float(np.mean([p["jaccard"] > 0.8 for p in planted]))
    t0 = time.perf_counter()
    cfg = RunConfig(inputs=corpus_50k["corpus"], workspace=str(tmp_path / "ws"), num_hashes=128, bands=16, rows=8, threshold="0.8", bucket_scale=2)
    result = eval_accuracy(cfg)
    elapsed = time.perf_counter() - t0
    jac = result["jaccard_vs_oracle"]
    std, lsh = result["rows"]
    ok = above >= 0.95 and jac >= 0.95 and elapsed < 600
    acceptance(
        3,
        ok,
        f"{len(planted):,} planted pairs, {above:.1%} with J > 0.8; dup-sets {lsh['dupset_size']:,} (LSH) vs "
        f"{std['dupset_size']:,} (all-pairs) of {std['corpus_size']:,}; Jaccard {jac:.4f}; {elapsed:.0f}s",
    )
    assert above >= 0.95
    assert jac >= 0.95
    assert elapsed < 600


def _pair_with_jaccard(rng, target: float, shared: int = 600) -> tuple[str, str]:
    """Shared random block plus a unique tail per side, sized for the target Jaccard."""
    letters = np.frombuffer(b"abcdefghijklmnopqrstuvwxyz", dtype=np.uint8)
    tail = round(shared * (1 - target) / (2 * target))
    x = rng.choice(letters, size=shared + 4).tobytes().decode()
    y = rng.choice(letters, size=tail).tobytes().decode()
    z = rng.choice(letters, size=tail).tobytes().decode()
    return x + y, x + z


def test_estimator_fidelity(family, acceptance):
    rng = np.random.default_rng(4)
    targets = [0.2, 0.5, 0.8]
    pairs, labels = [], []
    for k in range(1000):
        t = targets[k % 3]
        pairs.append(_pair_with_jaccard(rng, t))
        labels.append(t)
    stats = estimator_error_stats(pairs, family)
    mae = stats["mean_abs_error"]
    labels = np.array(labels)
    errors = np.array([float(r["error"]) for r in stats["pairs"]])
    exact = np.array([float(r["exact"]) for r in stats["pairs"]])
    parts = ", ".join(f"J~{t}: mean J {exact[labels == t].mean():.3f}, MAE {errors[labels == t].mean():.4f}" for t in targets)
    ok = mae <= 0.05
    acceptance(4, ok, f"1000 pairs, MAE {mae:.4f} at H=128 ({parts})")
    assert mae <= 0.05


def _bfs_components(edges):
    adj: dict[int, list[int]] = {}
    for a, b in edges:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    seen, out = set(), []
    for start in adj:
        if start in seen:
            continue
        seen.add(start)
        comp, todo = [], deque([start])
        while todo:
            v = todo.popleft()
            comp.append(v)
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    todo.append(w)
        out.append(tuple(sorted(comp)))
    return sorted(out)


def test_union_find_oracle(acceptance):
    rng = np.random.default_rng(5)
    failures, largest = 0, 0
    for trial in range(100):
        n_edges = 100_000 if trial % 10 == 0 else int(rng.integers(0, 100_001))
        n_nodes = int(rng.integers(2, 2 * n_edges + 10))
        labels = rng.choice(1 << 40, size=n_nodes, replace=False)
        ends = rng.integers(0, n_nodes, size=(n_edges, 2))
        ends = ends[ends[:, 0] != ends[:, 1]]
        edges = [tuple(sorted(e)) for e in labels[ends].tolist()]
        largest = max(largest, len(edges))
        groups = components(union_pairs(edges))
        reps_ok = all(g.representative == min(g.members) for g in groups)
        same = [g.members for g in groups] == _bfs_components(edges)
        shuffled = [edges[i][::-1] if flip else edges[i] for i, flip in zip(rng.permutation(len(edges)), rng.random(len(edges)) < 0.5)]
        permuted = emit_report(components(union_pairs(shuffled)), n_nodes) == emit_report(groups, n_nodes)
        failures += not (reps_ok and same and permuted)
    ok = failures == 0
    acceptance(5, ok, f"100 random graphs up to {largest:,} edges, {failures} mismatches (BFS, min representative, permuted stream)")
    assert failures == 0


def test_determinism_across_worker_counts(corpus_50k, tmp_path, acceptance):
    runs = {}
    for name, workers in (("w1-a", 1), ("w1-b", 1), ("w8", 8)):
        ws = tmp_path / name
        run_dedup(RunConfig(inputs=corpus_50k["corpus"], workspace=str(ws), workers=workers))
        runs[name] = report_files(ws)
    identical = runs["w1-a"] == runs["w1-b"] == runs["w8"]
    size = sum(len(v) for v in runs["w8"].values())
    acceptance(6, identical, f"50,000 docs, 1/1/8 workers, reports {'byte-identical' if identical else 'DIFFER'} ({size:,} bytes in {len(runs['w8'])} files)")
    assert identical


def test_memory_bounded_gather(corpus_50k, tmp_path, acceptance):
    single = tmp_path / "single"
    run_dedup(RunConfig(inputs=corpus_50k["corpus"], workspace=str(single)))
    single_stage = json.loads((single / "run.json").read_text())["stages"]
    total = single_stage["hash"]["signature_bytes"]
    workers = 2
    budget = total * workers // 8
    bounded = tmp_path / "bounded"
    run_dedup(RunConfig(inputs=corpus_50k["corpus"], workspace=str(bounded), workers=workers, memory_budget=budget, trace_memory=True))
    stage = json.loads((bounded / "run.json").read_text())["stages"]["gather-compare"]
    # Worker peaks are measured separately; assume they coincide.
    peak = stage["peak_gather_bytes"] * workers
    identical = report_files(bounded) == report_files(single)
    multi = stage["passes"] > single_stage["gather-compare"]["passes"]
    ok = identical and multi and peak <= 1.1 * budget
    acceptance(
        7,
        ok,
        f"budget {budget:,} B for {total:,} B of signatures and {workers} workers; {stage['passes']} passes of "
        f"{stage['buckets_per_pass']} buckets vs {single_stage['gather-compare']['passes']}; peak {peak:,} B = "
        f"{peak / budget:.3f} x budget; report {'identical' if identical else 'DIFFERS'}",
    )
    assert identical and multi
    assert peak <= 1.1 * budget


def test_scaling_with_workers(tmp_path, acceptance):
    import os

    info = write_synthetic(CORPUS_100K, tmp_path / "corpus")
    times = {}
    for workers in (1, 8):
        ws = tmp_path / f"w{workers}"
        t0 = time.perf_counter()
        run_dedup(RunConfig(inputs=info["corpus"], workspace=str(ws), workers=workers), resume=False)
        times[workers] = time.perf_counter() - t0
        if workers == 8:
            assert report_files(ws) == report_files(tmp_path / "w1")
    ratio = times[8] / times[1]
    cpus = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()
    ok = ratio <= 0.5
    acceptance(8, ok, f"100,000 docs: 1 worker {times[1]:.1f}s, 8 workers {times[8]:.1f}s, ratio {ratio:.2f} (need <= 0.5) on {cpus} CPU(s)")
    shutil.rmtree(tmp_path / "corpus", ignore_errors=True)
    assert ratio <= 0.5


def test_hash_quality(family, acceptance):
    rng = np.random.default_rng(9)
    windows = np.unique(rng.integers(0, 256, size=(1_000_000, family.shingle_len), dtype=np.int64), axis=0)
    n = len(windows)
    pairs = n * (n - 1) / 2
    min_p_value, worst_z = 1.0, 0.0
    chi_fail = coll_fail = 0
    observed = expected = 0.0
    for fp in family.params:
        h = direct_hashes(windows, fp.p, fp.q)
        p_value = chisquare(np.bincount(h & 255, minlength=256)).pvalue
        min_p_value = min(min_p_value, p_value)
        chi_fail += p_value < 0.001
        _, counts = np.unique(h, return_counts=True)
        coll = float((counts * (counts - 1) // 2).sum())
        # pair collisions are close to Poisson with mean pairs / p
        mean = pairs / fp.p
        z = (coll - mean) / np.sqrt(mean)
        worst_z = max(worst_z, abs(z))
        coll_fail += abs(z) > 3
        observed += coll
        expected += mean
    overall_z = (observed - expected) / np.sqrt(expected)
    # The collision bound applies to the family's pooled rate. Per function,
    # 128 independent 3-sigma checks would trip by chance about 29% of the
    # time, so those only need to look like chance: P(more than 3) < 0.001.
    ok = chi_fail == 0 and abs(overall_z) <= 3 and coll_fail <= 3
    acceptance(
        9,
        ok,
        f"{n:,} distinct windows x {family.num_hashes} functions; chi-square min p {min_p_value:.4f}, {chi_fail} below 0.001; "
        f"pooled collision rate {observed / (pairs * len(family.params)):.3e} vs {expected / (pairs * len(family.params)):.3e} "
        f"expected (z {overall_z:.2f}); per function worst |z| {worst_z:.2f}, {coll_fail} beyond 3 sigma (0.35 expected by chance)",
    )
    assert chi_fail == 0
    assert abs(overall_z) <= 3
    assert coll_fail <= 3
