"""FP-Growth: two-scan FP-tree construction and recursive pattern growth.

Trees live in an index arena (see ``kernels.build_tree``): node 0 is the
root, and every node stores parent, rank, count and a node-link to the next
node of the same rank. Ranks index the F-list, so rank 0 is the most frequent
item.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import kernels
from .apriori import InputError, MiningResult
from .datasets import TransactionDatabase


def build_flist(db: TransactionDatabase, minsup_abs: int) -> list[tuple[int, int]]:
    """Frequent items as ``(item, support)``, support descending, ties by id."""
    if minsup_abs < 1:
        raise InputError("minsup_abs must be >= 1")
    _, items = db.scan()
    counts = np.bincount(items, minlength=db.num_items)
    return flist_from_counts(counts, minsup_abs)


def flist_from_counts(counts, minsup_abs):
    ids = np.flatnonzero(counts >= minsup_abs)
    order = np.lexsort((ids, -counts[ids]))
    return [(int(i), int(counts[i])) for i in ids[order]]


def rank_table(flist, num_items):
    """``rank_of[item]`` (or -1 for items outside the F-list)."""
    rank_of = np.full(max(num_items, 1), -1, dtype=np.int32)
    for r, (item, _) in enumerate(flist):
        rank_of[item] = r
    return rank_of


@dataclass(frozen=True)
class FPTree:
    parent: np.ndarray
    rank: np.ndarray
    count: np.ndarray
    head: np.ndarray
    link: np.ndarray
    total: np.ndarray
    flist: tuple

    @classmethod
    def from_paths(cls, indptr, ranks, weights, flist):
        arrays = kernels.build_tree(indptr, ranks, weights, len(flist))
        return cls(*arrays, flist=tuple(flist))

    @property
    def order(self):
        return [item for item, _ in self.flist]

    @property
    def node_count(self):
        return len(self.parent)

    def item_of(self, node):
        return self.flist[self.rank[node]][0]

    @property
    def header(self) -> dict:
        """item -> (total support, first node of its node-link chain)."""
        return {self.flist[r][0]: (int(self.total[r]), int(self.head[r]))
                for r in range(len(self.flist)) if self.head[r] >= 0}

    def chain(self, item):
        node = int(self.head[self._rank(item)])
        while node != -1:
            yield node
            node = int(self.link[node])

    def children(self, node) -> dict:
        kids = np.flatnonzero(self.parent == node)
        return {self.item_of(c): int(c) for c in kids}

    def is_single_path(self):
        if self.node_count <= 2:
            return True
        return int(np.bincount(self.parent[1:]).max()) <= 1

    def _rank(self, item):
        for r, (it, _) in enumerate(self.flist):
            if it == item and r < len(self.head) and self.head[r] >= 0:
                return r
        raise InputError(f"item {item} is not in the tree header")

    def arrays(self):
        return self.parent, self.rank, self.count, self.head, self.link, self.total


def build_fptree(db: TransactionDatabase, flist) -> FPTree:
    """Second scan: insert every F-list-filtered, rank-ordered transaction."""
    indptr, items = db.scan()
    ptr, ranks = kernels.rank_transactions(indptr, items, rank_table(flist, db.num_items))
    return FPTree.from_paths(ptr, ranks, np.ones(len(ptr) - 1, dtype=np.int64), flist)


def conditional_pattern_base(tree: FPTree, item) -> list[tuple[tuple[int, ...], int]]:
    """Prefix paths (item ids, root side first) and counts for every node of ``item``."""
    r = tree._rank(item)
    indptr, flat, counts = kernels.prefix_paths(*tree.arrays()[:5], r)
    order = tree.order
    flat = flat.tolist()
    return [(tuple(order[x] for x in flat[indptr[e]:indptr[e + 1]]), int(counts[e]))
            for e in range(len(counts))]


# --------------------------------------------------------------------------
# pattern growth on arena arrays (ranks throughout)

def _single_path(parent, rank, count, suffix, out):
    # single-path trees are built in path order: node i hangs under node i-1
    ranks = rank[1:].tolist()
    counts = count[1:].tolist()
    for deepest in range(len(ranks)):
        sup = counts[deepest]
        tail = (ranks[deepest],) + suffix
        for size in range(deepest + 1):
            for head in combinations(ranks[:deepest], size):
                out[head + tail] = sup


def grow(tree_arrays, n_ranks, minsup, suffix=(), out=None, top=None):
    """Mine every frequent pattern of a (conditional) tree into ``out``.

    Keys are rank tuples sorted ascending. ``top`` restricts the first-level
    suffix ranks (PFP groups mine only the items they own).
    """
    if out is None:
        out = {}
    parent, rank, count, head, link, total = tree_arrays
    n = len(parent)
    if n <= 1:
        return out
    if top is None and (n == 2 or int(np.bincount(parent[1:]).max()) <= 1):
        _single_path(parent, rank, count, suffix, out)
        return out
    present = np.flatnonzero((head >= 0) & (total >= minsup))
    for r in present[::-1].tolist():
        if top is not None and r not in top:
            continue
        new_suffix = (r,) + suffix
        out[new_suffix] = int(total[r])
        ip, flat, cnt = kernels.prefix_paths(parent, rank, count, head, link, r)
        if flat.shape[0] == 0:
            continue
        lens = np.diff(ip)
        freq = np.bincount(flat, weights=np.repeat(cnt, lens), minlength=n_ranks)
        keep = freq[flat] >= minsup
        if not keep.any():
            continue
        row_of = np.repeat(np.arange(len(cnt)), lens)[keep]
        new_ip = np.zeros(len(cnt) + 1, dtype=np.int64)
        np.cumsum(np.bincount(row_of, minlength=len(cnt)), out=new_ip[1:])
        sub = kernels.build_tree(new_ip, flat[keep], cnt, n_ranks)
        grow(sub, n_ranks, minsup, new_suffix, out)
    return out


def ranks_to_items(patterns, flist):
    order = [item for item, _ in flist]
    return {tuple(sorted(order[r] for r in key)): sup for key, sup in patterns.items()}


def fpgrowth_mine(db: TransactionDatabase, minsup_abs: int) -> MiningResult:
    if minsup_abs < 1:
        raise InputError("minsup_abs must be >= 1")
    t0 = time.perf_counter()
    flist = build_flist(db, minsup_abs)
    frequent = {}
    if flist:
        tree = build_fptree(db, flist)
        frequent = ranks_to_items(grow(tree.arrays(), len(flist), minsup_abs), flist)
    return MiningResult(frequent, minsup_abs, "fpgrowth", "sequential", time.perf_counter() - t0)
