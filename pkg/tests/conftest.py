from __future__ import annotations

import json
from pathlib import Path

import pytest

from neardup.minhash import derive_family
from neardup.synthetic import SyntheticSpec, write_synthetic


def write_jsonl(path: Path, records) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write((r if isinstance(r, str) else json.dumps(r)) + "\n")
    return path


@pytest.fixture(scope="session")
def family():
    return derive_family()


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """1,500 documents in 4 files with 150 planted pairs."""
    out = tmp_path_factory.mktemp("small_corpus")
    return write_synthetic(SyntheticSpec(num_docs=1500, num_groups=150, seed=11, num_files=4), out)


# -- acceptance summary --------------------------------------------------------

ACCEPTANCE_NAMES = {
    1: "rolling hash exactness",
    2: "tiled kernel equals naive comparison",
    3: "pipeline dup-set vs all-pairs MinHash",
    4: "signature similarity estimates Jaccard",
    5: "union-find equals BFS components",
    6: "deterministic reports across worker counts",
    7: "memory-bounded multi-pass gather",
    8: "8-worker speedup",
    9: "hash uniformity and collisions",
}
_acceptance_results: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    def record(number: int, ok: bool, detail: str) -> bool:
        _acceptance_results[number] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in ACCEPTANCE_NAMES.items():
        if n in _acceptance_results:
            ok, detail = _acceptance_results[n]
            terminalreporter.write_line(f"criterion {n} {'PASS' if ok else 'FAIL'}: {name}: {detail}")
        else:
            terminalreporter.write_line(f"criterion {n} NOT RUN: {name}")
