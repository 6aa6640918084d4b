"""Union graph over duplicate pairs: components, representatives, removal list."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np


class UnionFind:
    """Disjoint sets over doc_ids, densely renumbered in first-seen order.

    Union by rank with path compression (iterative, so deep chains are safe).
    """

    def __init__(self):
        self.index: dict[int, int] = {}
        self.ids: list[int] = []
        self.parent: list[int] = []
        self.rank: list[int] = []

    def __len__(self):
        return len(self.ids)

    def _dense(self, doc_id: int) -> int:
        i = self.index.get(doc_id)
        if i is None:
            i = self.index[doc_id] = len(self.ids)
            self.ids.append(doc_id)
            self.parent.append(i)
            self.rank.append(0)
        return i

    def _root(self, i: int) -> int:
        parent = self.parent
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    def find(self, doc_id: int) -> int:
        """Root doc_id of ``doc_id``'s set; unseen ids are singletons."""
        if doc_id not in self.index:
            return doc_id
        return self.ids[self._root(self.index[doc_id])]

    def union(self, a: int, b: int) -> None:
        ra, rb = self._root(self._dense(a)), self._root(self._dense(b))
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1


@dataclass(frozen=True)
class DuplicateGroup:
    representative: int
    members: tuple[int, ...]


@dataclass
class DedupReport:
    groups: list[DuplicateGroup]
    total_docs: int
    counters: dict = field(default_factory=dict)

    @property
    def near_duplicate_set(self) -> list[int]:
        return sorted(m for g in self.groups for m in g.members)

    @property
    def removal(self) -> list[int]:
        return sorted(m for g in self.groups for m in g.members[1:])

    @property
    def ratio(self) -> float:
        return len(self.near_duplicate_set) / self.total_docs if self.total_docs else 0.0

    def ratio_label(self) -> str:
        """Count over corpus size, e.g. ``7,317 / 100,000``."""
        return f"{len(self.near_duplicate_set):,} / {self.total_docs:,}"

    def summary(self) -> dict:
        near = len(self.near_duplicate_set)
        return {
            **self.counters,
            "total_docs": self.total_docs,
            "groups": len(self.groups),
            "near_duplicates": near,
            "removed": near - len(self.groups),
            "ratio": self.ratio,
        }

    def write(self, directory: os.PathLike) -> dict[str, str]:
        """groups.jsonl, removal.txt and summary.json under ``directory``."""
        directory = os.fspath(directory)
        paths = {
            "groups": os.path.join(directory, "groups.jsonl"),
            "removal": os.path.join(directory, "removal.txt"),
            "summary": os.path.join(directory, "summary.json"),
        }
        with open(paths["groups"], "w") as fh:
            for g in self.groups:
                fh.write(json.dumps({"representative": g.representative, "members": list(g.members)}) + "\n")
        with open(paths["removal"], "w") as fh:
            fh.writelines(f"{d}\n" for d in self.removal)
        with open(paths["summary"], "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return paths


def union_pairs(pairs: Iterable, uf: UnionFind | None = None) -> UnionFind:
    """Union every ``(lo, hi)`` pair; accepts tuples or ``PAIR_DTYPE`` arrays."""
    uf = UnionFind() if uf is None else uf
    if isinstance(pairs, np.ndarray) and pairs.dtype.names:
        pairs = zip(pairs["lo"].tolist(), pairs["hi"].tolist())
    for a, b in pairs:
        uf.union(int(a), int(b))
    return uf


def components(uf: UnionFind) -> list[DuplicateGroup]:
    buckets: dict[int, list[int]] = {}
    for i, doc in enumerate(uf.ids):
        buckets.setdefault(uf._root(i), []).append(doc)
    groups = []
    for members in buckets.values():
        if len(members) >= 2:
            members.sort()
            groups.append(DuplicateGroup(members[0], tuple(members)))
    groups.sort(key=lambda g: g.representative)
    return groups


def emit_report(groups: list[DuplicateGroup], total_docs: int, **counters) -> DedupReport:
    return DedupReport(groups=list(groups), total_docs=total_docs, counters=counters)
