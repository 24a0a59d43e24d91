import numpy as np
import pytest

from conftest import ALL_BACKENDS, DB1, DB1_RESULT, random_db
from fimengine.apriori import apriori_mine
from fimengine.datasets import SyntheticParams, TransactionDatabase, generate_synthetic
from fimengine.fpgrowth import build_flist, fpgrowth_mine
from fimengine.mapreduce import Backend, partition
from fimengine.parallel import (ItemGrouping, mr_apriori, partition_counts, pfp_group_items, pfp_group_outputs,
                                pfp_mine, pfp_shard_transaction, shard_partition)


@pytest.fixture
def db1():
    return TransactionDatabase.from_transactions(DB1)


@pytest.mark.parametrize("kind", ALL_BACKENDS)
def test_mr_apriori_db1(db1, kind):
    assert mr_apriori(db1, 2, Backend(kind, workers=2), 2).frequent == DB1_RESULT


def test_mr_apriori_degenerate_matches_sequential(db1):
    a = apriori_mine(db1, 2)
    m = mr_apriori(db1, 2, Backend("sequential"), 1)
    assert m.frequent == a.frequent
    assert len(m.level_timings) == len(a.level_timings)


def test_partial_counts(db1):
    parts = partition(db1, 2)
    cand = np.array([[0, 1]], dtype=np.int32)
    partial = [int(partition_counts(p, cand)[0]) for p in parts]
    assert partial == [1, 1]


def test_group_items():
    flist = [(i, 10 - i) for i in range(5)]
    g = pfp_group_items(flist, 2)
    assert [g.group_of[i] for i, _ in flist] == [0, 1, 0, 1, 0]
    assert set(pfp_group_items(flist, 1).group_of.values()) == {0}
    assert sorted(pfp_group_items(flist, 8).group_of.values()) == [0, 1, 2, 3, 4]


def test_shard_transaction_example():
    flist = [("a", 3), ("b", 2), ("c", 1)]
    grouping = ItemGrouping(2, {"a": 0, "b": 1, "c": 0})
    shards = {s.group: s.transactions[0][0] for s in pfp_shard_transaction(["c", "a", "b"], flist, grouping)}
    assert shards == {0: ("a", "b", "c"), 1: ("a", "b")}
    assert [s.group for s in pfp_shard_transaction(["b"], flist, grouping)] == [1]
    assert pfp_shard_transaction(["z"], flist, grouping) == []


def test_shard_kernel_matches_reference():
    rng = np.random.default_rng(4)
    for _ in range(40):
        d = random_db(rng, max_items=10, max_txns=30)
        flist = build_flist(d, 1)
        if not flist:
            continue
        g = int(rng.integers(1, 5))
        grouping = pfp_group_items(flist, g)
        rank_of = np.full(d.num_items, -1, dtype=np.int32)
        for r, (item, _) in enumerate(flist):
            rank_of[item] = r
        blocks = shard_partition(d.indptr, d.items, rank_of, grouping.group_of_rank(flist), g)
        got = {grp: sorted(b.paths()) for grp, b in blocks.items()}
        want = {}
        for t in d:
            for s in pfp_shard_transaction(t, flist, grouping):
                want.setdefault(s.group, []).append(tuple(rank_of[i] for i in s.transactions[0][0]))
        assert got == {k: sorted(v) for k, v in want.items()}


@pytest.mark.parametrize("kind", ALL_BACKENDS)
@pytest.mark.parametrize("g", [1, 2, 5])
def test_pfp_db1(db1, kind, g):
    assert pfp_mine(db1, 2, Backend(kind, workers=2), 2, g).frequent == DB1_RESULT


def test_pfp_groups_disjoint_and_owned():
    rng = np.random.default_rng(9)
    for _ in range(30):
        d = random_db(rng)
        s = int(rng.integers(1, 4))
        g = int(rng.integers(1, 6))
        per_group, flist = pfp_group_outputs(d, s, g)
        rank = {item: r for r, (item, _) in enumerate(flist)}
        union = {}
        for grp, pats in per_group.items():
            for itemset in pats:
                assert itemset not in union
                assert max(rank[i] for i in itemset) % g == grp
            union.update(pats)
        assert union == fpgrowth_mine(d, s).frequent


def test_parallel_miners_on_synthetic():
    d = generate_synthetic(SyntheticParams(num_transactions=3000, num_items=100, seed=2))
    s = 30
    expect = fpgrowth_mine(d, s).frequent
    assert len(expect) > 100
    for kind in ALL_BACKENDS:
        b = Backend(kind, workers=3)
        assert mr_apriori(d, s, b, 4).frequent == expect
        assert pfp_mine(d, s, b, 4).frequent == expect


def test_rejects_bad_args(db1):
    with pytest.raises(ValueError):
        mr_apriori(db1, 0, Backend("sequential"))
    with pytest.raises(ValueError):
        pfp_mine(db1, 1, Backend("sequential"), 0)
    with pytest.raises(ValueError):
        pfp_mine(db1, 1, Backend("sequential"), 1, 0)
