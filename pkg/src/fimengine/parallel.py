"""MapReduce-parallel miners: MR-Apriori and PFP (parallel FP-Growth)."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .apriori import InputError, MiningResult, choose_strategy, count_rows, next_candidates, rows_to_dict
from .datasets import TransactionDatabase
from .fpgrowth import flist_from_counts, grow, rank_table, ranks_to_items
from .mapreduce import (DONE, Backend, KVBatch, Partition, Stage, iterate, open_session, partition,
                        sum_values)

# candidate rows per emitted batch when counting with bitmaps
EMIT_CHUNK = 1 << 15


def _check(minsup_abs, partitions):
    if minsup_abs < 1:
        raise InputError("minsup_abs must be >= 1")
    if partitions < 1:
        raise InputError("partitions must be >= 1")


def count_items_map(part: Partition):
    counts = np.bincount(part.transactions.items, minlength=part.transactions.num_items)
    ids = np.flatnonzero(counts)
    return KVBatch(ids, counts[ids])


def partition_counts(part: Partition, cands: np.ndarray, strategy="auto"):
    """Partial supports of ``cands`` inside one partition.

    Operator state on the partition caches its bitmap index; whether that
    state survives between stages is up to the backend.
    """
    db = part.transactions
    indptr, items = db.indptr, db.items
    if cands.shape[1] == 1:
        return count_rows(indptr, items, db.num_items, cands)
    plan = strategy
    if plan == "auto":
        plan = "bitmap" if "bitmaps" in part.state else choose_strategy(indptr, items, cands, db.num_items)
    if plan == "bitmap":
        bm = part.state.get("bitmaps")
        if bm is None:
            bm = part.state["bitmaps"] = kernels.build_bitmaps(indptr, items, db.num_items)
        return kernels.count_bitmap(bm, cands)
    return count_rows(indptr, items, db.num_items, cands, plan)


def _level_map(cands, strategy):
    keys = cands.astype(np.int64)

    def map_fn(part):
        counts = partition_counts(part, cands, strategy)
        nz = np.flatnonzero(counts)
        for s in range(0, nz.size, EMIT_CHUNK):
            sel = nz[s:s + EMIT_CHUNK]
            yield KVBatch(keys[sel], counts[sel])

    return map_fn


def mr_apriori(db: TransactionDatabase, minsup_abs: int, backend: Backend, partitions: int = 1,
               strategy="auto") -> MiningResult:
    """Level-wise Apriori where each level's support counting is one map/reduce stage.

    Candidates for level k+1 are generated once on the driver from the
    globally filtered level k and shared read-only with every mapper.
    """
    _check(minsup_abs, partitions)
    t0 = time.perf_counter()
    parts = partition(db, partitions)
    levels = []
    timings = []
    n_cands = []
    clock = {"start": t0}

    def body(i, prior):
        if i == 0:
            n_cands.append(db.num_items)
            return Stage("level-1", count_items_map, sum_values), parts
        batch = prior if isinstance(prior, KVBatch) else KVBatch.empty(i)
        keep = batch.values >= minsup_abs
        rows = batch.keys[keep].astype(np.int32)
        sups = batch.values[keep]
        now = time.perf_counter()
        timings.append(now - clock["start"])
        clock["start"] = now
        if rows.shape[0] == 0:
            return DONE
        levels.append((rows, sups))
        cands = next_candidates(rows)
        if cands.shape[0] == 0:
            return DONE
        n_cands.append(cands.shape[0])
        return Stage(f"level-{i + 1}", _level_map(cands, strategy), sum_values), parts

    _, reports = iterate(body, backend)
    frequent = {}
    for rows, sups in levels:
        frequent.update(rows_to_dict(rows, sups))
    return MiningResult(frequent, minsup_abs, "mr_apriori", backend.label,
                        time.perf_counter() - t0, timings, n_cands, reports)


# --------------------------------------------------------------------------
# PFP

@dataclass(frozen=True)
class ItemGrouping:
    num_groups: int
    group_of: dict

    def group_of_rank(self, flist):
        return np.array([self.group_of[item] for item, _ in flist], dtype=np.int64)


@dataclass(frozen=True)
class GroupShard:
    group: int
    transactions: tuple  # ((item, ...), count) pairs, F-list ordered


def pfp_group_items(flist, g: int) -> ItemGrouping:
    """Round-robin by F-list rank: rank r goes to group r mod g."""
    if g < 1:
        raise InputError("group count must be >= 1")
    return ItemGrouping(g, {item: r % g for r, (item, _) in enumerate(flist)})


def pfp_shard_transaction(txn, flist, grouping: ItemGrouping) -> list[GroupShard]:
    """Group-dependent prefixes of one transaction (right-to-left first encounter)."""
    rank_of = {item: r for r, (item, _) in enumerate(flist)}
    ordered = sorted((rank_of[i] for i in set(txn) if i in rank_of))
    order = [item for item, _ in flist]
    shards = []
    seen = set()
    for j in range(len(ordered) - 1, -1, -1):
        g = grouping.group_of[order[ordered[j]]]
        if g not in seen:
            seen.add(g)
            shards.append(GroupShard(g, ((tuple(order[r] for r in ordered[: j + 1]), 1),)))
    return shards


class ShardBlock:
    """CSR block of rank-ordered shard paths; the PFP stage-2 payload."""

    __slots__ = ("indptr", "ranks")

    def __init__(self, indptr, ranks):
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.ranks = np.asarray(ranks, dtype=np.int32)

    def __len__(self):
        return len(self.indptr) - 1

    def __getstate__(self):
        return self.indptr, self.ranks

    def __setstate__(self, st):
        self.indptr, self.ranks = st

    @classmethod
    def concat(cls, blocks):
        blocks = [b for b in blocks if len(b)]
        if not blocks:
            return cls(np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int32))
        if len(blocks) == 1:
            return blocks[0]
        lens = np.concatenate([np.diff(b.indptr) for b in blocks])
        indptr = np.zeros(len(lens) + 1, dtype=np.int64)
        np.cumsum(lens, out=indptr[1:])
        return cls(indptr, np.concatenate([b.ranks for b in blocks]))

    def paths(self):
        flat = self.ranks.tolist()
        return [tuple(flat[self.indptr[i]:self.indptr[i + 1]]) for i in range(len(self))]


def shard_partition(indptr, items, rank_of, group_of_rank, n_groups):
    """All shard emissions of one CSR block, as ``{group: ShardBlock}``."""
    ptr, ranks = kernels.rank_transactions(indptr, items, rank_of)
    groups, txn, plen = kernels.shard_prefixes(ptr, ranks, group_of_rank, n_groups)
    out = {}
    if groups.size == 0:
        return out
    order = np.argsort(groups, kind="stable")
    groups, txn, plen = groups[order], txn[order], plen[order]
    bounds = np.searchsorted(groups, np.arange(n_groups + 1))
    for g in range(n_groups):
        lo, hi = bounds[g], bounds[g + 1]
        if hi == lo:
            continue
        lens = plen[lo:hi]
        starts = ptr[txn[lo:hi]]
        sub_ptr = np.zeros(hi - lo + 1, dtype=np.int64)
        np.cumsum(lens, out=sub_ptr[1:])
        # gather each prefix: positions start .. start+len-1
        offs = np.arange(sub_ptr[-1], dtype=np.int64) - np.repeat(sub_ptr[:-1], lens)
        out[g] = ShardBlock(sub_ptr, ranks[np.repeat(starts, lens) + offs])
    return out


def merge_shards(key, blocks):
    return key, ShardBlock.concat(blocks)


merge_shards.associative = True


def mine_group(block: ShardBlock, owned_ranks, n_ranks, minsup_abs):
    """Local FP-tree over one group's shards, growing only suffixes the group owns."""
    weights = np.ones(len(block), dtype=np.int64)
    tree = kernels.build_tree(block.indptr, block.ranks, weights, n_ranks)
    return grow(tree, n_ranks, minsup_abs, top=set(owned_ranks))


def pfp_mine(db: TransactionDatabase, minsup_abs: int, backend: Backend, partitions: int = 1,
             g: int | None = None) -> MiningResult:
    """Parallel FP-Growth.

    Stage 1 counts items into the F-list. Stage 2 maps every transaction to
    group-dependent shards; each reducer builds its group's FP-tree and mines
    suffix items owned by the group. An itemset is owned by the group of its
    least frequent item, so per-group outputs are disjoint.
    """
    _check(minsup_abs, partitions)
    if g is None:
        g = 2 * backend.workers
    if g < 1:
        raise InputError("group count must be >= 1")
    t0 = time.perf_counter()
    parts = partition(db, partitions)
    reports = []
    frequent = {}
    if len(parts) == 0:
        return MiningResult(frequent, minsup_abs, "pfp", backend.label, time.perf_counter() - t0)
    with open_session(backend) as session:
        counted, rep = session.run(Stage("count-items", count_items_map, sum_values), parts)
        reports.append(rep)
        counts = np.zeros(db.num_items, dtype=np.int64)
        if len(counted):
            counts[counted.keys[:, 0]] = counted.values
        flist = flist_from_counts(counts, minsup_abs)
        if flist:
            grouping = pfp_group_items(flist, g)
            n_ranks = len(flist)
            rank_of = rank_table(flist, db.num_items)
            group_of_rank = grouping.group_of_rank(flist)
            owned = {grp: np.flatnonzero(group_of_rank == grp).tolist() for grp in range(g)}

            def shard_map(part):
                t = part.transactions
                blocks = shard_partition(t.indptr, t.items, rank_of, group_of_rank, g)
                return [(grp, blk) for grp, blk in blocks.items()]

            def finalize(grp, block):
                return mine_group(block, owned[grp], n_ranks, minsup_abs)

            stage = Stage("pfp-groups", shard_map, merge_shards, True, finalize)
            per_group, rep = session.run(stage, parts)
            reports.append(rep)
            for grp, patterns in per_group:
                frequent.update(ranks_to_items(patterns, flist))
    return MiningResult(frequent, minsup_abs, "pfp", backend.label, time.perf_counter() - t0,
                        [], [], reports)


def pfp_group_outputs(db, minsup_abs, g, backend=None, partitions=1):
    """Per-group pattern maps (item ids), for ownership/disjointness checks."""
    backend = backend or Backend("sequential")
    parts = partition(db, partitions)
    counts = np.bincount(db.items, minlength=db.num_items)
    flist = flist_from_counts(counts, minsup_abs)
    if not flist:
        return {}, flist
    grouping = pfp_group_items(flist, g)
    rank_of = rank_table(flist, db.num_items)
    gor = grouping.group_of_rank(flist)
    blocks = [shard_partition(p.transactions.indptr, p.transactions.items, rank_of, gor, g)
              for p in parts]
    out = {}
    for grp in range(g):
        block = ShardBlock.concat([b[grp] for b in blocks if grp in b])
        pats = mine_group(block, np.flatnonzero(gor == grp).tolist(), len(flist), minsup_abs)
        out[grp] = ranks_to_items(pats, flist)
    return out, flist
