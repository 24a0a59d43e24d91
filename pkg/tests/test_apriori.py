import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import DB1_RESULT, check_downward_closure, random_db
from fimengine import kernels
from fimengine.apriori import (FrequentLevel, InputError, apriori_mine, choose_strategy, count_rows,
                               count_supports, generate_candidates, next_candidates, prune_by_apriori)
from fimengine.bench import brute_force_oracle
from fimengine.datasets import TransactionDatabase


def test_count_supports_db1(db1):
    assert count_supports(db1, [(0, 1)]) == {(0, 1): 2}
    assert count_supports(db1, [(0, 1, 2)]) == {(0, 1, 2): 1}


def test_count_supports_empty_db():
    db = TransactionDatabase.from_transactions([], num_items=3)
    assert count_supports(db, [(0, 1)]) == {(0, 1): 0}


def test_count_supports_rejects_unknown_item(db1):
    with pytest.raises(InputError):
        count_supports(db1, [(0, 7)])


@pytest.mark.parametrize("strategy", ["subset", "bitmap"])
def test_count_strategies_report_zero(strategy):
    db = TransactionDatabase.from_transactions([(0, 1), (2,)], num_items=4)
    assert count_supports(db, [(0, 3), (0, 1)], strategy) == {(0, 3): 0, (0, 1): 1}


def test_long_candidates_count_zero():
    db = TransactionDatabase.from_transactions([(0, 1)], num_items=3)
    assert count_supports(db, [(0, 1, 2)], "subset") == {(0, 1, 2): 0}


def test_generate_candidates_examples():
    assert generate_candidates(FrequentLevel.of([(0,), (1,), (2,)])) == {(0, 1), (0, 2), (1, 2)}
    assert generate_candidates(FrequentLevel.of([(0, 1), (0, 2), (1, 2)])) == {(0, 1, 2)}
    assert generate_candidates(FrequentLevel.of([(0, 1), (2, 3)])) == set()


def test_prune_examples():
    full = FrequentLevel.of([(0, 1), (0, 2), (1, 2)])
    assert prune_by_apriori({(0, 1, 2)}, full) == {(0, 1, 2)}
    assert prune_by_apriori({(0, 1, 2)}, FrequentLevel.of([(0, 1), (0, 2)])) == set()
    assert prune_by_apriori(set(), full) == set()


@settings(max_examples=150, deadline=None)
@given(st.sets(st.frozensets(st.integers(0, 9), min_size=3, max_size=3), max_size=40))
def test_candidate_soundness(level_sets):
    level = FrequentLevel.of([tuple(sorted(s)) for s in level_sets]) if level_sets else FrequentLevel(3, {})
    cands = generate_candidates(level)
    for c in cands:
        assert len(c) == 4
        for drop in range(4):
            assert c[:drop] + c[drop + 1:] in level.entries
    # completeness: every 4-set with all 3-subsets present is generated
    from itertools import combinations
    expect = {c for c in combinations(range(10), 4)
              if all(s in level.entries for s in combinations(c, 3))}
    assert cands == expect


def test_apriori_db1(db1):
    res = apriori_mine(db1, 2)
    assert res.frequent == DB1_RESULT
    assert len(res.level_timings) == 3  # L1, L2, and an executed, empty L3
    assert res.candidate_counts == [3, 3, 1]


def test_apriori_edge_cases(db1):
    assert apriori_mine(db1, 5).frequent == {}
    single = TransactionDatabase.from_transactions([(0, 1)])
    assert apriori_mine(single, 1).frequent == {(0,): 1, (1,): 1, (0, 1): 1}
    empty = TransactionDatabase.from_transactions([], num_items=2)
    assert apriori_mine(empty, 1).frequent == {}
    with pytest.raises(InputError):
        apriori_mine(db1, 0)


@pytest.mark.parametrize("strategy", ["auto", "subset", "bitmap"])
def test_apriori_matches_oracle(strategy):
    rng = np.random.default_rng(11)
    for _ in range(60):
        db = random_db(rng, max_items=12, max_txns=50)
        s = int(rng.integers(1, max(2, len(db) // 2 + 1)))
        res = apriori_mine(db, s, strategy)
        assert res.frequent == brute_force_oracle(db, s).frequent
        check_downward_closure(res.frequent)


def test_minsup_monotone():
    rng = np.random.default_rng(5)
    for _ in range(30):
        db = random_db(rng)
        a = apriori_mine(db, 2).frequent
        b = apriori_mine(db, 4).frequent
        assert set(b) <= set(a)


def test_kernel_agreement_on_larger_levels():
    rng = np.random.default_rng(2)
    rows = [tuple(np.flatnonzero(rng.random(40) < 0.3).tolist()) or (0,) for _ in range(400)]
    db = TransactionDatabase.from_transactions(rows, num_items=40)
    level = np.arange(40, dtype=np.int32).reshape(-1, 1)
    for _ in range(2):
        cands = next_candidates(level)
        a = count_rows(db.indptr, db.items, 40, cands, "subset")
        b = count_rows(db.indptr, db.items, 40, cands, "bitmap")
        np.testing.assert_array_equal(a, b)
        level = cands[a >= 30]
    assert choose_strategy(db.indptr, db.items, cands, 40) in ("subset", "bitmap")


def test_lookup_rows_finds_members():
    rows = np.array([[0, 1], [0, 3], [2, 5]], dtype=np.int32)
    probe = np.array([[2, 5], [1, 1], [0, 1]], dtype=np.int32)
    np.testing.assert_array_equal(kernels.lookup_rows(rows, probe), [2, -1, 0])
