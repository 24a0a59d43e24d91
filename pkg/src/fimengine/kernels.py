"""Hot loops: support counting, row hashing, FP-tree arena and PFP sharding.

Every public function here dispatches to a numba kernel or to a numpy/Python
fallback, depending on ``FIM_DISABLE_NUMBA`` (see ``_accel``). Both paths
return identical results; ``benchmarks/bench_kernels.py`` compares their speed.
"""

from __future__ import annotations

from itertools import combinations
from math import comb

import numpy as np

from ._accel import HAVE_NUMBA, njit

_EMPTY = np.int64(-1)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
DEFAULT_SEED = 0x5EED_F1A7
# aggregation tables must not share the shuffle hash: a reducer only sees keys
# with equal ``hash % n_reducers``, which would leave most table slots unused
_ACC_SEED = 0xA66E_6A7E_D5EE_D001


def _table_size(n):
    size = 8
    while size < 2 * n + 1:
        size <<= 1
    return size


# --------------------------------------------------------------------------
# row hashing

@njit
def _splitmix(x):
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def hash_rows(rows, seed=DEFAULT_SEED):
    """Seeded 64-bit hash of each row of an integer matrix (vectorized)."""
    rows = np.asarray(rows)
    h = np.full(rows.shape[0], np.uint64(seed), dtype=np.uint64)
    with np.errstate(over="ignore"):
        for j in range(rows.shape[1]):
            x = h ^ rows[:, j].astype(np.uint64)
            x = x + _GOLDEN
            x = (x ^ (x >> np.uint64(30))) * _M1
            x = (x ^ (x >> np.uint64(27))) * _M2
            h = x ^ (x >> np.uint64(31))
    return h


@njit
def _route_rows_nb(rows, n_buckets, seed):
    n = rows.shape[0]
    bucket = np.empty(n, dtype=np.int64)
    bounds = np.zeros(n_buckets + 1, dtype=np.int64)
    for i in range(n):
        b = np.int64(_row_hash_at(rows, i, seed) % np.uint64(n_buckets))
        bucket[i] = b
        bounds[b + 1] += 1
    for b in range(n_buckets):
        bounds[b + 1] += bounds[b]
    fill = bounds[:-1].copy()
    order = np.empty(n, dtype=np.int64)
    for i in range(n):
        b = bucket[i]
        order[fill[b]] = i
        fill[b] += 1
    return order, bounds


def route_rows(rows, n_buckets, seed=DEFAULT_SEED):
    """Stable grouping of rows by hash bucket: ``(order, bounds)``.

    Rows of bucket ``b`` are ``rows[order[bounds[b]:bounds[b + 1]]]``, in input
    order. Bucket ids agree with ``hash_rows(rows, seed) % n_buckets``.
    """
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    if HAVE_NUMBA:
        return _route_rows_nb(rows, n_buckets, np.uint64(seed))
    b = (hash_rows(rows, seed) % np.uint64(n_buckets)).astype(np.int64)
    order = np.argsort(b, kind="stable")
    return order, np.searchsorted(b[order], np.arange(n_buckets + 1))


# --------------------------------------------------------------------------
# open-addressing table over the rows of a candidate matrix

@njit
def _row_hash_at(rows, i, seed):
    h = np.uint64(seed)
    for j in range(rows.shape[1]):
        h = _splitmix(h ^ np.uint64(rows[i, j]))
    return h


@njit
def _build_row_table(rows, seed):
    n = rows.shape[0]
    size = 8
    while size < 2 * n + 1:
        size <<= 1
    mask = np.uint64(size - 1)
    table = np.full(size, -1, dtype=np.int64)
    for i in range(n):
        slot = _row_hash_at(rows, i, seed) & mask
        while table[slot] != -1:
            slot = (slot + np.uint64(1)) & mask
        table[slot] = i
    return table


@njit
def _probe(table, rows, buf, seed):
    k = buf.shape[0]
    mask = np.uint64(table.shape[0] - 1)
    h = np.uint64(seed)
    for j in range(k):
        h = _splitmix(h ^ np.uint64(buf[j]))
    slot = h & mask
    while True:
        idx = table[slot]
        if idx == -1:
            return -1
        same = True
        for j in range(k):
            if rows[idx, j] != buf[j]:
                same = False
                break
        if same:
            return idx
        slot = (slot + np.uint64(1)) & mask


@njit
def _lookup_rows_nb(table, rows, queries, seed):
    out = np.empty(queries.shape[0], dtype=np.int64)
    buf = np.empty(queries.shape[1], dtype=rows.dtype)
    for q in range(queries.shape[0]):
        for j in range(queries.shape[1]):
            buf[j] = queries[q, j]
        out[q] = _probe(table, rows, buf, seed)
    return out


def lookup_rows(rows, queries):
    """Index of each query row inside ``rows`` (``-1`` when absent)."""
    rows = np.ascontiguousarray(rows)
    queries = np.ascontiguousarray(queries, dtype=rows.dtype)
    if rows.shape[0] == 0:
        return np.full(queries.shape[0], -1, dtype=np.int64)
    if HAVE_NUMBA:
        table = _build_row_table(rows, DEFAULT_SEED)
        return _lookup_rows_nb(table, rows, queries, DEFAULT_SEED)
    index = {tuple(r): i for i, r in enumerate(rows.tolist())}
    return np.array([index.get(tuple(q), -1) for q in queries.tolist()], dtype=np.int64)


# --------------------------------------------------------------------------
# support counting: per-transaction subset enumeration

@njit
def _count_subsets_nb(indptr, items, cands, item_mask, seed):
    n_cand, k = cands.shape
    counts = np.zeros(n_cand, dtype=np.int64)
    table = _build_row_table(cands, seed)
    filt = np.empty(items.shape[0] + 1, dtype=cands.dtype)
    idx = np.empty(k, dtype=np.int64)
    buf = np.empty(k, dtype=cands.dtype)
    for t in range(indptr.shape[0] - 1):
        m = 0
        for p in range(indptr[t], indptr[t + 1]):
            it = items[p]
            if item_mask[it]:
                filt[m] = it
                m += 1
        if m < k:
            continue
        for j in range(k):
            idx[j] = j
        while True:
            for j in range(k):
                buf[j] = filt[idx[j]]
            c = _probe(table, cands, buf, seed)
            if c >= 0:
                counts[c] += 1
            # next combination in lexicographic order
            j = k - 1
            while j >= 0 and idx[j] == m - k + j:
                j -= 1
            if j < 0:
                break
            idx[j] += 1
            for q in range(j + 1, k):
                idx[q] = idx[q - 1] + 1
    return counts


def _count_subsets_py(indptr, items, cands, item_mask):
    k = cands.shape[1]
    index = {tuple(r): i for i, r in enumerate(cands.tolist())}
    counts = np.zeros(len(index), dtype=np.int64)
    keep = item_mask[items]
    flat = items.tolist()
    keep = keep.tolist()
    for t in range(len(indptr) - 1):
        lo, hi = int(indptr[t]), int(indptr[t + 1])
        row = [flat[p] for p in range(lo, hi) if keep[p]]
        if len(row) < k:
            continue
        for sub in combinations(row, k):
            c = index.get(sub)
            if c is not None:
                counts[c] += 1
    return counts


def count_subsets(indptr, items, cands, n_items):
    """Support of each candidate row by enumerating k-subsets of every transaction."""
    cands = np.ascontiguousarray(cands, dtype=np.int32)
    if cands.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    item_mask = np.zeros(max(n_items, 1), dtype=np.bool_)
    item_mask[cands.ravel()] = True
    if HAVE_NUMBA:
        return _count_subsets_nb(indptr, items, cands, item_mask, DEFAULT_SEED)
    return _count_subsets_py(indptr, items, cands, item_mask)


def subset_cost(indptr, items, cands, n_items):
    """Number of k-subsets the enumeration strategy would probe."""
    k = cands.shape[1]
    item_mask = np.zeros(max(n_items, 1), dtype=np.bool_)
    item_mask[cands.ravel()] = True
    if items.shape[0] == 0:
        return 0
    kept = item_mask[items].astype(np.int64)
    cum = np.concatenate(([0], np.cumsum(kept)))
    lengths = cum[indptr[1:]] - cum[indptr[:-1]]
    values, freq = np.unique(lengths, return_counts=True)
    return sum(comb(int(v), k) * int(f) for v, f in zip(values, freq))


# --------------------------------------------------------------------------
# support counting: vertical bitmaps

@njit
def _build_bitmaps_nb(indptr, items, n_items):
    n_txn = indptr.shape[0] - 1
    words = (n_txn + 63) // 64
    bm = np.zeros((n_items, words), dtype=np.uint64)
    for t in range(n_txn):
        w = t >> 6
        bit = np.uint64(1) << np.uint64(t & 63)
        for p in range(indptr[t], indptr[t + 1]):
            bm[items[p], w] |= bit
    return bm


def build_bitmaps(indptr, items, n_items):
    """Item-major bitsets: bit t of row i is set when transaction t holds item i."""
    if HAVE_NUMBA:
        return _build_bitmaps_nb(indptr, items, max(n_items, 0))
    n_txn = len(indptr) - 1
    bm = np.zeros((max(n_items, 0), (n_txn + 63) // 64), dtype=np.uint64)
    if items.shape[0]:
        txn = np.repeat(np.arange(n_txn, dtype=np.int64), np.diff(indptr))
        bits = np.left_shift(np.uint64(1), (txn & 63).astype(np.uint64))
        np.bitwise_or.at(bm, (items.astype(np.int64), txn >> 6), bits)
    return bm


@njit
def _popcount(x):
    x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
    x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return (x * np.uint64(0x0101010101010101)) >> np.uint64(56)


@njit
def _count_bitmap_nb(bitmaps, cands):
    n_cand, k = cands.shape
    words = bitmaps.shape[1]
    counts = np.zeros(n_cand, dtype=np.int64)
    # stack[j] holds the AND of the first j+1 items of the current prefix
    stack = np.empty((max(k - 1, 1), words), dtype=np.uint64)
    prev = np.full(k, -1, dtype=np.int64)
    for c in range(n_cand):
        j = 0
        while j < k - 1 and cands[c, j] == prev[j]:
            j += 1
        for q in range(j, k - 1):
            it = cands[c, q]
            if q == 0:
                for w in range(words):
                    stack[0, w] = bitmaps[it, w]
            else:
                for w in range(words):
                    stack[q, w] = stack[q - 1, w] & bitmaps[it, w]
            prev[q] = it
        last = cands[c, k - 1]
        total = np.uint64(0)
        if k == 1:
            for w in range(words):
                total += _popcount(bitmaps[last, w])
        else:
            for w in range(words):
                total += _popcount(stack[k - 2, w] & bitmaps[last, w])
        counts[c] = np.int64(total)
    return counts


def _count_bitmap_np(bitmaps, cands):
    n_cand, k = cands.shape
    counts = np.zeros(n_cand, dtype=np.int64)
    if k == 1:
        return np.bitwise_count(bitmaps[cands[:, 0]]).sum(axis=1, dtype=np.int64)
    prefix = cands[:, : k - 1]
    change = np.ones(n_cand, dtype=bool)
    change[1:] = np.any(prefix[1:] != prefix[:-1], axis=1)
    starts = np.flatnonzero(change)
    ends = np.append(starts[1:], n_cand)
    for s, e in zip(starts.tolist(), ends.tolist()):
        acc = np.bitwise_and.reduce(bitmaps[prefix[s]], axis=0)
        counts[s:e] = np.bitwise_count(acc & bitmaps[cands[s:e, k - 1]]).sum(axis=1, dtype=np.int64)
    return counts


def count_bitmap(bitmaps, cands):
    """Support of each candidate row as popcount of its items' bitset AND.

    Rows sharing a prefix reuse the prefix AND, so lexicographically sorted
    candidates are cheapest.
    """
    cands = np.ascontiguousarray(cands, dtype=np.int32)
    if cands.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    if HAVE_NUMBA:
        return _count_bitmap_nb(bitmaps, cands)
    return _count_bitmap_np(bitmaps, cands)


# --------------------------------------------------------------------------
# incremental hash aggregation of (row key, int value) pairs

@njit
def _accumulate_nb(table, keys, vals, n_used, new_keys, new_vals, seed):
    mask = np.uint64(table.shape[0] - 1)
    cap = keys.shape[0]
    for i in range(new_keys.shape[0]):
        slot = _row_hash_at(new_keys, i, seed) & mask
        while True:
            idx = table[slot]
            if idx == -1:
                if n_used == cap:
                    return n_used, i
                for j in range(keys.shape[1]):
                    keys[n_used, j] = new_keys[i, j]
                vals[n_used] = new_vals[i]
                table[slot] = n_used
                n_used += 1
                break
            same = True
            for j in range(keys.shape[1]):
                if keys[idx, j] != new_keys[i, j]:
                    same = False
                    break
            if same:
                vals[idx] += new_vals[i]
                break
            slot = (slot + np.uint64(1)) & mask
    return n_used, new_keys.shape[0]


@njit
def _rehash_nb(keys, n_used, size, seed):
    table = np.full(size, -1, dtype=np.int64)
    mask = np.uint64(size - 1)
    for i in range(n_used):
        slot = _row_hash_at(keys, i, seed) & mask
        while table[slot] != -1:
            slot = (slot + np.uint64(1)) & mask
        table[slot] = i
    return table


class RowAccumulator:
    """Sums int values per row key as chunks arrive; no final sort needed."""

    def __init__(self, width, capacity=1024):
        self.width = width
        self._n = 0
        if HAVE_NUMBA:
            self._keys = np.empty((capacity, width), dtype=np.int64)
            self._vals = np.zeros(capacity, dtype=np.int64)
            self._table = np.full(_table_size(capacity), -1, dtype=np.int64)
        else:
            self._pending_k = []
            self._pending_v = []
            self._pending = 0

    def add(self, keys, values):
        keys = np.ascontiguousarray(keys, dtype=np.int64)
        values = np.ascontiguousarray(values, dtype=np.int64)
        if not HAVE_NUMBA:
            self._pending_k.append(keys)
            self._pending_v.append(values)
            self._pending += len(values)
            if self._pending > 1 << 16:
                self._compact()
            return
        done = 0
        while done < keys.shape[0]:
            self._n, consumed = _accumulate_nb(
                self._table, self._keys, self._vals, self._n,
                keys[done:], values[done:], np.uint64(_ACC_SEED),
            )
            done += consumed
            if done < keys.shape[0]:
                self._grow()

    def _grow(self):
        cap = self._keys.shape[0] * 2
        keys = np.empty((cap, self.width), dtype=np.int64)
        vals = np.zeros(cap, dtype=np.int64)
        keys[: self._n] = self._keys[: self._n]
        vals[: self._n] = self._vals[: self._n]
        self._keys, self._vals = keys, vals
        self._table = _rehash_nb(keys, self._n, _table_size(cap), np.uint64(_ACC_SEED))

    def _compact(self):
        keys = np.concatenate(self._pending_k) if self._pending_k else np.empty((0, self.width), np.int64)
        vals = np.concatenate(self._pending_v) if self._pending_v else np.empty(0, np.int64)
        keys, vals = group_sum_rows(keys, vals)
        self._pending_k, self._pending_v, self._pending = [keys], [vals], len(vals)

    def result(self):
        """Aggregated ``(keys, values)`` in insertion order (unsorted)."""
        if HAVE_NUMBA:
            return self._keys[: self._n].copy(), self._vals[: self._n].copy()
        self._compact()
        return self._pending_k[0], self._pending_v[0]


def lexsort_rows(keys):
    """Permutation putting integer rows in lexicographic order."""
    if keys.shape[0] == 0 or keys.shape[1] == 0:
        return np.arange(keys.shape[0])
    return np.lexsort(keys.T[::-1])


def group_sum_rows(keys, values):
    """Sort-based group-by: unique rows (lexicographic) and the sum per row."""
    if keys.shape[0] == 0:
        return keys.reshape(0, keys.shape[1]), values[:0]
    order = lexsort_rows(keys)
    keys = keys[order]
    values = values[order]
    change = np.ones(keys.shape[0], dtype=bool)
    change[1:] = np.any(keys[1:] != keys[:-1], axis=1)
    starts = np.flatnonzero(change)
    return keys[starts], np.add.reduceat(values, starts)


# --------------------------------------------------------------------------
# FP-tree arena

@njit
def _rank_transactions_nb(indptr, items, rank_of):
    n_txn = indptr.shape[0] - 1
    out_ptr = np.zeros(n_txn + 1, dtype=np.int64)
    out = np.empty(items.shape[0], dtype=np.int32)
    m = 0
    for t in range(n_txn):
        start = m
        for p in range(indptr[t], indptr[t + 1]):
            r = rank_of[items[p]]
            if r >= 0:
                # insertion sort; transactions are short
                q = m
                while q > start and out[q - 1] > r:
                    out[q] = out[q - 1]
                    q -= 1
                out[q] = r
                m += 1
        out_ptr[t + 1] = m
    return out_ptr, out[:m].copy()


def rank_transactions(indptr, items, rank_of):
    """Drop items with rank -1 and sort each transaction by ascending rank."""
    if HAVE_NUMBA:
        return _rank_transactions_nb(indptr, items, rank_of)
    n_txn = len(indptr) - 1
    ranks = rank_of[items]
    keep = ranks >= 0
    txn = np.repeat(np.arange(n_txn, dtype=np.int64), np.diff(indptr))[keep]
    ranks = ranks[keep]
    order = np.lexsort((ranks, txn))
    out_ptr = np.zeros(n_txn + 1, dtype=np.int64)
    np.cumsum(np.bincount(txn, minlength=n_txn), out=out_ptr[1:])
    return out_ptr, ranks[order].astype(np.int32)


@njit
def _build_tree_nb(indptr, ranks, weights, n_ranks):
    nnz = ranks.shape[0]
    cap = nnz + 1
    parent = np.full(cap, -1, dtype=np.int64)
    rank = np.full(cap, -1, dtype=np.int32)
    count = np.zeros(cap, dtype=np.int64)
    size = 8
    while size < 2 * cap + 1:
        size <<= 1
    mask = np.uint64(size - 1)
    tkeys = np.full(size, -1, dtype=np.int64)
    tvals = np.empty(size, dtype=np.int64)
    n = 1
    for t in range(indptr.shape[0] - 1):
        w = weights[t]
        node = 0
        for p in range(indptr[t], indptr[t + 1]):
            r = ranks[p]
            key = node * n_ranks + r
            slot = _splitmix(np.uint64(key)) & mask
            while True:
                if tkeys[slot] == -1:
                    tkeys[slot] = key
                    tvals[slot] = n
                    parent[n] = node
                    rank[n] = r
                    child = n
                    n += 1
                    break
                if tkeys[slot] == key:
                    child = tvals[slot]
                    break
                slot = (slot + np.uint64(1)) & mask
            count[child] += w
            node = child
    head = np.full(n_ranks, -1, dtype=np.int64)
    tail = np.full(n_ranks, -1, dtype=np.int64)
    total = np.zeros(n_ranks, dtype=np.int64)
    link = np.full(n, -1, dtype=np.int64)
    for i in range(1, n):
        r = rank[i]
        if head[r] == -1:
            head[r] = i
        else:
            link[tail[r]] = i
        tail[r] = i
        total[r] += count[i]
    return parent[:n].copy(), rank[:n].copy(), count[:n].copy(), head, link, total


def _build_tree_py(indptr, ranks, weights, n_ranks):
    parent, rank, count = [-1], [-1], [0]
    children = {}
    flat = ranks.tolist()
    ptr = indptr.tolist()
    w_list = weights.tolist()
    for t in range(len(ptr) - 1):
        w = w_list[t]
        node = 0
        for p in range(ptr[t], ptr[t + 1]):
            r = flat[p]
            child = children.get((node, r))
            if child is None:
                child = len(parent)
                children[(node, r)] = child
                parent.append(node)
                rank.append(r)
                count.append(0)
            count[child] += w
            node = child
    n = len(parent)
    head = np.full(n_ranks, -1, dtype=np.int64)
    tail = [-1] * n_ranks
    total = np.zeros(n_ranks, dtype=np.int64)
    link = np.full(n, -1, dtype=np.int64)
    for i in range(1, n):
        r = rank[i]
        if head[r] == -1:
            head[r] = i
        else:
            link[tail[r]] = i
        tail[r] = i
        total[r] += count[i]
    return (np.array(parent, dtype=np.int64), np.array(rank, dtype=np.int32),
            np.array(count, dtype=np.int64), head, link, total)


def build_tree(indptr, ranks, weights, n_ranks):
    """Insert rank-sorted weighted paths into a prefix tree arena.

    Returns ``(parent, rank, count, head, link, total)``; node 0 is the root.
    """
    indptr = np.ascontiguousarray(indptr, dtype=np.int64)
    ranks = np.ascontiguousarray(ranks, dtype=np.int32)
    weights = np.ascontiguousarray(weights, dtype=np.int64)
    if HAVE_NUMBA:
        return _build_tree_nb(indptr, ranks, weights, max(n_ranks, 1))
    return _build_tree_py(indptr, ranks, weights, max(n_ranks, 1))


@njit
def _prefix_paths_nb(parent, rank, count, head, link, r):
    m = 0
    total = 0
    node = head[r]
    while node != -1:
        m += 1
        a = parent[node]
        while a > 0:
            total += 1
            a = parent[a]
        node = link[node]
    indptr = np.zeros(m + 1, dtype=np.int64)
    out = np.empty(total, dtype=np.int32)
    counts = np.empty(m, dtype=np.int64)
    node = head[r]
    e = 0
    pos = 0
    while node != -1:
        depth = 0
        a = parent[node]
        while a > 0:
            depth += 1
            a = parent[a]
        a = parent[node]
        q = pos + depth - 1
        while a > 0:
            out[q] = rank[a]
            q -= 1
            a = parent[a]
        pos += depth
        counts[e] = count[node]
        e += 1
        indptr[e] = pos
        node = link[node]
    return indptr, out, counts


def prefix_paths(parent, rank, count, head, link, r):
    """Ancestor paths (root first, root excluded) of every node with rank ``r``."""
    if HAVE_NUMBA:
        return _prefix_paths_nb(parent, rank, count, head, link, r)
    paths, counts = [], []
    node = int(head[r])
    while node != -1:
        path = []
        a = int(parent[node])
        while a > 0:
            path.append(int(rank[a]))
            a = int(parent[a])
        paths.append(path[::-1])
        counts.append(int(count[node]))
        node = int(link[node])
    indptr = np.zeros(len(paths) + 1, dtype=np.int64)
    np.cumsum([len(p) for p in paths], out=indptr[1:])
    flat = np.array([x for p in paths for x in p], dtype=np.int32)
    return indptr, flat, np.array(counts, dtype=np.int64)


# --------------------------------------------------------------------------
# PFP shard emission

@njit
def _shard_nb(indptr, ranks, group_of_rank, n_groups):
    nnz = ranks.shape[0]
    out_group = np.empty(nnz, dtype=np.int64)
    out_txn = np.empty(nnz, dtype=np.int64)
    out_len = np.empty(nnz, dtype=np.int64)
    seen = np.full(n_groups, -1, dtype=np.int64)
    m = 0
    for t in range(indptr.shape[0] - 1):
        lo = indptr[t]
        for p in range(indptr[t + 1] - 1, lo - 1, -1):
            g = group_of_rank[ranks[p]]
            if seen[g] != t:
                seen[g] = t
                out_group[m] = g
                out_txn[m] = t
                out_len[m] = p - lo + 1
                m += 1
    return out_group[:m].copy(), out_txn[:m].copy(), out_len[:m].copy()


def shard_prefixes(indptr, ranks, group_of_rank, n_groups):
    """Right-to-left first-encounter shard emissions.

    Returns parallel arrays ``(group, txn, prefix_len)``: transaction ``txn``
    sends its first ``prefix_len`` ranks to ``group``.
    """
    indptr = np.ascontiguousarray(indptr, dtype=np.int64)
    ranks = np.ascontiguousarray(ranks, dtype=np.int32)
    group_of_rank = np.ascontiguousarray(group_of_rank, dtype=np.int64)
    if HAVE_NUMBA:
        return _shard_nb(indptr, ranks, group_of_rank, max(n_groups, 1))
    n_txn = len(indptr) - 1
    if ranks.shape[0] == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy(), empty.copy()
    txn = np.repeat(np.arange(n_txn, dtype=np.int64), np.diff(indptr))
    pos = np.arange(ranks.shape[0], dtype=np.int64)
    groups = group_of_rank[ranks]
    key = txn * n_groups + groups
    # last position of every (txn, group) pair
    rev_key = key[::-1]
    _, first_rev = np.unique(rev_key, return_index=True)
    last = (ranks.shape[0] - 1) - first_rev
    # emit in the kernel's order: txn ascending, position descending
    last = last[np.lexsort((-last, txn[last]))]
    return groups[last], txn[last], pos[last] - indptr[txn[last]] + 1
