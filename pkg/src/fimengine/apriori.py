"""Level-wise Apriori with prefix-join candidate generation and downward-closure pruning."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import kernels
from .datasets import TransactionDatabase

Itemset = tuple  # sorted, duplicate-free tuple of ItemIds

# subset enumeration is picked when its probe count, times this weight, is
# below the bitmap word count; measured with benchmarks/bench_kernels.py
SUBSET_PROBE_WEIGHT = 100.0


class InputError(ValueError):
    pass


@dataclass
class FrequentLevel:
    k: int
    entries: dict = field(default_factory=dict)

    @classmethod
    def of(cls, itemsets: Iterable[Itemset], support=1):
        entries = {tuple(s): support for s in itemsets}
        ks = {len(s) for s in entries}
        if len(ks) > 1:
            raise InputError("itemsets of mixed length")
        return cls(ks.pop() if ks else 1, entries)


@dataclass
class MiningResult:
    frequent: dict
    minsup_abs: int
    algorithm: str = "apriori"
    backend: str = "sequential"
    elapsed: float = 0.0
    level_timings: list = field(default_factory=list)
    candidate_counts: list = field(default_factory=list)
    stages: list = field(default_factory=list)

    def __len__(self):
        return len(self.frequent)

    def sorted_items(self):
        """Itemsets ordered by (length, lexicographic ids)."""
        return sorted(self.frequent.items(), key=lambda kv: (len(kv[0]), kv[0]))


# --------------------------------------------------------------------------
# array-level building blocks (rows are lexicographically sorted int32 matrices)

def join_rows(rows: np.ndarray) -> np.ndarray:
    """Prefix join: pairs of k-rows sharing their first k-1 ids give (k+1)-rows."""
    n, k = rows.shape
    if n < 2:
        return np.empty((0, k + 1), dtype=np.int32)
    if k == 1:
        i, j = np.triu_indices(n, 1)
        return np.column_stack((rows[i, 0], rows[j, 0])).astype(np.int32)
    prefix = rows[:, : k - 1]
    change = np.ones(n, dtype=bool)
    change[1:] = np.any(prefix[1:] != prefix[:-1], axis=1)
    starts = np.flatnonzero(change)
    sizes = np.diff(np.append(starts, n))
    out = []
    for s, m in zip(starts[sizes > 1].tolist(), sizes[sizes > 1].tolist()):
        i, j = np.triu_indices(m, 1)
        block = np.empty((len(i), k + 1), dtype=np.int32)
        block[:, : k - 1] = prefix[s]
        block[:, k - 1] = rows[s + i, k - 1]
        block[:, k] = rows[s + j, k - 1]
        out.append(block)
    if not out:
        return np.empty((0, k + 1), dtype=np.int32)
    return np.concatenate(out)


def prune_rows(cands: np.ndarray, level_rows: np.ndarray) -> np.ndarray:
    """Keep candidate rows whose every k-subset is a row of ``level_rows``."""
    if cands.shape[0] == 0:
        return cands
    k1 = cands.shape[1]
    keep = np.ones(cands.shape[0], dtype=bool)
    for d in range(k1):
        sub = np.delete(cands[keep], d, axis=1)
        found = kernels.lookup_rows(level_rows, sub) >= 0
        idx = np.flatnonzero(keep)
        keep[idx[~found]] = False
        if not keep.any():
            break
    return cands[keep]


def _prune_joined(cands, level_rows):
    # join parents (drop the last or second-to-last id) are frequent by construction
    if cands.shape[0] == 0 or cands.shape[1] <= 2:
        return cands
    keep = np.ones(cands.shape[0], dtype=bool)
    for d in range(cands.shape[1] - 2):
        idx = np.flatnonzero(keep)
        sub = np.delete(cands[idx], d, axis=1)
        keep[idx[kernels.lookup_rows(level_rows, sub) < 0]] = False
    return cands[keep]


def next_candidates(level_rows: np.ndarray) -> np.ndarray:
    """Join then prune; result is lexicographically sorted."""
    return _prune_joined(join_rows(level_rows), level_rows)


def choose_strategy(indptr, items, cands, n_items):
    n_txn = len(indptr) - 1
    bitmap_cost = cands.shape[0] * ((n_txn + 63) // 64) + items.shape[0]
    probe = kernels.subset_cost(indptr, items, cands, n_items)
    return "subset" if probe * SUBSET_PROBE_WEIGHT <= bitmap_cost else "bitmap"


def count_rows(indptr, items, n_items, cands, strategy="auto", bitmaps=None):
    """Support of each candidate row over a CSR transaction block.

    ``bitmaps`` may carry a prebuilt :func:`kernels.build_bitmaps` index; when
    the bitmap strategy is chosen without one it is built on the spot.
    """
    if cands.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    if cands.shape[1] == 1:
        return np.bincount(items, minlength=n_items)[cands[:, 0]].astype(np.int64)
    if strategy == "auto":
        strategy = "bitmap" if bitmaps is not None else choose_strategy(indptr, items, cands, n_items)
    if strategy == "subset":
        return kernels.count_subsets(indptr, items, cands, n_items)
    if strategy == "bitmap":
        if bitmaps is None:
            bitmaps = kernels.build_bitmaps(indptr, items, n_items)
        return kernels.count_bitmap(bitmaps, cands)
    raise ValueError(f"unknown counting strategy {strategy!r}")


def rows_to_dict(rows, supports):
    return dict(zip(map(tuple, rows.tolist()), supports.tolist()))


def _as_rows(itemsets, k=None) -> np.ndarray:
    itemsets = sorted(tuple(s) for s in itemsets)
    if not itemsets:
        return np.empty((0, k or 0), dtype=np.int32)
    return np.array(itemsets, dtype=np.int32).reshape(len(itemsets), -1)


# --------------------------------------------------------------------------
# public operations

def count_supports(db: TransactionDatabase, candidates, strategy="auto") -> dict:
    """Exact support of every candidate (all of one length k >= 1)."""
    candidates = [tuple(c) for c in candidates]
    if not candidates:
        return {}
    ks = {len(c) for c in candidates}
    if len(ks) != 1 or 0 in ks:
        raise InputError("candidates must share one length k >= 1")
    for c in candidates:
        if min(c) < 0 or max(c) >= db.num_items:
            raise InputError(f"candidate {c} references an unknown item")
    rows = _as_rows(candidates)
    indptr, items = db.scan()
    counts = count_rows(indptr, items, db.num_items, rows, strategy)
    return rows_to_dict(rows, counts)


def prune_by_apriori(candidates, level: FrequentLevel) -> set:
    cands = _as_rows(candidates, level.k + 1)
    kept = prune_rows(cands, _as_rows(level.entries, level.k))
    return {tuple(r) for r in kept.tolist()}


def generate_candidates(level: FrequentLevel) -> set:
    rows = _as_rows(level.entries, level.k)
    return {tuple(r) for r in next_candidates(rows).tolist()}


def apriori_mine(db: TransactionDatabase, minsup_abs: int, strategy="auto") -> MiningResult:
    """All itemsets with support >= ``minsup_abs``, level by level."""
    if minsup_abs < 1:
        raise InputError("minsup_abs must be >= 1")
    t0 = time.perf_counter()
    timings, n_cands = [], []
    levels = []
    bitmaps = None

    tl = time.perf_counter()
    indptr, items = db.scan()
    counts = np.bincount(items, minlength=db.num_items)
    ids = np.flatnonzero(counts >= minsup_abs)
    rows = ids.astype(np.int32).reshape(-1, 1)
    sups = counts[ids].astype(np.int64)
    timings.append(time.perf_counter() - tl)
    n_cands.append(db.num_items)
    levels.append((rows, sups))

    while rows.shape[0] > 1:
        tl = time.perf_counter()
        cands = next_candidates(rows)
        if cands.shape[0] == 0:
            break
        indptr, items = db.scan()
        plan = strategy
        if strategy == "auto":
            plan = choose_strategy(indptr, items, cands, db.num_items)
        if plan == "bitmap" and bitmaps is None:
            bitmaps = kernels.build_bitmaps(indptr, items, db.num_items)
        c = count_rows(indptr, items, db.num_items, cands, plan,
                       bitmaps=bitmaps if plan == "bitmap" else None)
        keep = c >= minsup_abs
        rows, sups = cands[keep], c[keep]
        timings.append(time.perf_counter() - tl)
        n_cands.append(cands.shape[0])
        if rows.shape[0]:
            levels.append((rows, sups))

    frequent = {}
    for r, s in levels:
        frequent.update(rows_to_dict(r, s))
    return MiningResult(frequent, minsup_abs, "apriori", "sequential",
                        time.perf_counter() - t0, timings, n_cands)
