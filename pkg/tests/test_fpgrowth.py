from collections import Counter

import numpy as np
import pytest

from conftest import DB1_RESULT, random_db
from fimengine.apriori import InputError, apriori_mine
from fimengine.fpgrowth import build_flist, build_fptree, conditional_pattern_base, fpgrowth_mine
from fimengine.datasets import TransactionDatabase


def db(rows, n=None):
    return TransactionDatabase.from_transactions(rows, num_items=n)


def test_flist_examples(db1):
    assert build_flist(db1, 2) == [(0, 3), (1, 3), (2, 3)]
    assert build_flist(db([], 2), 1) == []
    assert build_flist(db([(0,), (0,), (1,)]), 2) == [(0, 2)]


def test_flist_orders_by_frequency():
    assert build_flist(db([(2,), (2, 1), (2, 1, 0)]), 1) == [(2, 3), (1, 2), (0, 1)]


def test_shared_prefix_merge():
    d = db([(0, 1), (0, 1)])
    tree = build_fptree(d, build_flist(d, 1))
    assert tree.node_count == 3
    assert tree.children(0) == {0: 1}
    assert tree.children(1) == {1: 2}
    assert tree.count[1:].tolist() == [2, 2]
    assert tree.is_single_path()


def test_empty_tree():
    d = db([], 2)
    tree = build_fptree(d, build_flist(d, 1))
    assert tree.node_count == 1
    assert tree.header == {}


def test_db1_tree_header(db1):
    tree = build_fptree(db1, build_flist(db1, 2))
    assert {i: t for i, (t, _) in tree.header.items()} == {0: 3, 1: 3, 2: 3}
    for item in (0, 1, 2):
        assert sum(int(tree.count[n]) for n in tree.chain(item)) == 3


def test_conditional_pattern_base():
    d = db([(0, 1), (0, 1)])
    tree = build_fptree(d, build_flist(d, 1))
    assert conditional_pattern_base(tree, 1) == [((0,), 2)]
    assert conditional_pattern_base(tree, 0) == [((), 2)]


def test_conditional_pattern_base_db1(db1):
    tree = build_fptree(db1, build_flist(db1, 2))
    assert sum(c for _, c in conditional_pattern_base(tree, 2)) == 3
    with pytest.raises(InputError):
        conditional_pattern_base(tree, 9)


def test_fpgrowth_examples(db1):
    assert fpgrowth_mine(db1, 2).frequent == DB1_RESULT
    assert fpgrowth_mine(db1, 5).frequent == {}
    full = fpgrowth_mine(db([(0, 1, 2)] * 4), 4).frequent
    assert len(full) == 7 and set(full.values()) == {4}
    with pytest.raises(InputError):
        fpgrowth_mine(db1, 0)


def test_two_scans(db1):
    db1.reset_scan_count()
    fpgrowth_mine(db1, 2)
    assert db1.scan_count == 2


def reconstruct(tree):
    """Multiset of root-to-node paths, weighted by count minus children's counts."""
    parent, rank, count = tree.parent, tree.rank, tree.count
    child_sum = np.zeros(len(parent), dtype=np.int64)
    np.add.at(child_sum, parent[1:], count[1:])
    out = Counter()
    for node in range(1, len(parent)):
        ends = int(count[node] - child_sum[node])
        assert ends >= 0
        if ends:
            path = []
            n = node
            while n != 0:
                path.append(int(rank[n]))
                n = int(parent[n])
            out[tuple(reversed(path))] += ends
    return out


def test_structural_invariants_random():
    rng = np.random.default_rng(3)
    for _ in range(50):
        d = random_db(rng)
        s = int(rng.integers(1, 4))
        fl = build_flist(d, s)
        tree = build_fptree(d, fl)
        rank_of = {item: r for r, (item, _) in enumerate(fl)}
        expected = Counter()
        for t in d:
            path = tuple(sorted(rank_of[i] for i in t if i in rank_of))
            if path:
                expected[path] += 1
        assert reconstruct(tree) == expected
        for item, sup in fl:
            assert sum(int(tree.count[n]) for n in tree.chain(item)) == sup
        assert tree.node_count <= sum(len(p) * c for p, c in expected.items()) + 1
        for node in range(1, tree.node_count):
            assert tree.rank[node] > (tree.rank[tree.parent[node]] if tree.parent[node] else -1)
        assert fpgrowth_mine(d, s).frequent == apriori_mine(d, s).frequent
