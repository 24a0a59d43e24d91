import os
import stat

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from conftest import ALL_BACKENDS, DB1
from fimengine.datasets import ConfigurationError, TransactionDatabase
from fimengine.mapreduce import (DONE, Backend, BoundedChannel, Done, IterationLimitError, KVBatch, Stage,
                                 decode_key, decode_spill, encode_batch, encode_key, encode_pairs, iterate,
                                 open_session, partition, run_stage, sum_values)


def word_count(part):
    return [(int(i), 1) for t in part.transactions for i in t]


def as_map(out):
    return out.to_dict() if isinstance(out, KVBatch) else dict(out)


def test_partition_sizes():
    db = TransactionDatabase.from_transactions([(0,)] * 10)
    parts = partition(db, 3)
    assert parts.sizes() == [4, 3, 3]
    assert [t for p in parts for t in p.transactions] == db.transactions
    assert partition(db, 1)[0].transactions.transactions == db.transactions
    assert len(partition(TransactionDatabase.from_transactions([], num_items=1), 4)) == 0
    with pytest.raises(ConfigurationError):
        partition(db, 0)


@given(st.integers(0, 200), st.integers(1, 20))
def test_partition_balanced(n, p):
    db = TransactionDatabase.from_transactions([(0,)] * n, num_items=1)
    sizes = partition(db, p).sizes()
    assert sum(sizes) == n
    assert len(sizes) == min(n, p)
    if sizes:
        assert max(sizes) - min(sizes) <= 1


@pytest.mark.parametrize("kind", ALL_BACKENDS)
@pytest.mark.parametrize("workers", [1, 4])
def test_word_count_db1(kind, workers):
    db = TransactionDatabase.from_transactions(DB1)
    out, rep = run_stage(word_count, sum_values, partition(db, 2), Backend(kind, workers=workers))
    assert dict(out) == {0: 3, 1: 3, 2: 3}
    assert rep.pairs == 9
    for t in (rep.map_time, rep.shuffle_time, rep.reduce_time):
        assert t >= 0
    assert rep.map_time + rep.shuffle_time + rep.reduce_time <= rep.wall_time + 0.05


@pytest.mark.parametrize("kind", ALL_BACKENDS)
def test_empty_partitions(kind):
    db = TransactionDatabase.from_transactions([], num_items=1)
    out, rep = run_stage(word_count, sum_values, partition(db, 3), Backend(kind))
    assert out == [] and rep.wall_time == 0


@pytest.mark.parametrize("kind", ALL_BACKENDS)
def test_kvbatch_plane(kind):
    db = TransactionDatabase.from_transactions(DB1)

    def pair_counts(part):
        keys = [(a, b) for t in part.transactions for a in t for b in t if a < b]
        return KVBatch(np.array(keys).reshape(-1, 2), np.ones(len(keys)))

    out, _ = run_stage(pair_counts, sum_values, partition(db, 3), Backend(kind, workers=3))
    assert isinstance(out, KVBatch)
    assert out.to_dict() == {(0, 1): 2, (0, 2): 2, (1, 2): 2}


def test_pipelined_rejects_non_associative():
    db = TransactionDatabase.from_transactions(DB1)

    def concat(key, values):
        return key, list(values)

    parts = partition(db, 2)
    for kind in ("sequential", "batch", "inmemory"):
        out, _ = run_stage(word_count, concat, parts, Backend(kind, workers=2), associative=False)
        assert {k: len(v) for k, v in out} == {0: 3, 1: 3, 2: 3}
    with pytest.raises(ConfigurationError):
        run_stage(word_count, concat, parts, Backend("pipelined", workers=2), associative=False)


def test_batch_unwritable_spill_dir(tmp_path):
    if os.geteuid() == 0:
        target = "/proc/fim-no-such-dir"
    else:
        ro = tmp_path / "ro"
        ro.mkdir()
        ro.chmod(stat.S_IRUSR | stat.S_IXUSR)
        target = str(ro / "spill")
    db = TransactionDatabase.from_transactions(DB1)
    with pytest.raises(OSError):
        run_stage(word_count, sum_values, partition(db, 2), Backend("batch", spill_dir=target))


def test_batch_cleans_spill(tmp_path):
    db = TransactionDatabase.from_transactions(DB1)
    out, rep = run_stage(word_count, sum_values, partition(db, 2),
                         Backend("batch", workers=2, spill_dir=str(tmp_path)))
    assert dict(out) == {0: 3, 1: 3, 2: 3}
    assert rep.bytes_materialized > 0
    assert list(tmp_path.iterdir()) == []


def test_batch_keeps_spill_on_failure(tmp_path):
    db = TransactionDatabase.from_transactions(DB1)

    def boom(key, values):
        raise RuntimeError("reducer failed")

    with pytest.raises(RuntimeError):
        run_stage(word_count, boom, partition(db, 2), Backend("batch", spill_dir=str(tmp_path)))
    assert list(tmp_path.iterdir())


@pytest.mark.parametrize("key", [0, -5, 2**62, (1, 2, 3), (), "abc", b"\x00x", ("a", 1), frozenset({1})])
def test_key_codec(key):
    assert decode_key(encode_key(key)) == key


def test_key_encoding_preserves_int_order():
    xs = [-10, -1, 0, 3, 2**40]
    assert sorted(xs, key=encode_key) == xs


@settings(max_examples=100)
@given(st.lists(st.tuples(st.one_of(st.integers(-2**63, 2**63 - 1), st.text(max_size=5)),
                          st.one_of(st.integers(-2**63, 2**63 - 1), st.lists(st.integers(), max_size=3))),
                max_size=20))
def test_spill_round_trip_pairs(pairs):
    pieces = decode_spill(encode_pairs(pairs))
    assert pieces == [pairs]


def test_spill_round_trip_batches():
    a = KVBatch(np.array([[1, 2], [-3, 4]]), np.array([5, -6]))
    b = KVBatch(np.array([[7]]), np.array([2**62]))
    out = decode_spill(encode_batch(a) + encode_pairs([(1, 1)]) + encode_batch(b))
    assert out[0].to_dict() == a.to_dict()
    assert out[1] == [(1, 1)]
    assert out[2].to_dict() == b.to_dict()


def test_bounded_channel_high_water():
    ch = BoundedChannel(5)
    ch.put("a", 3)
    ch.put("b", 2)
    assert ch.high_water == 5
    assert ch.get() == "a"
    ch.put("c", 3)
    assert ch.high_water == 5
    with pytest.raises(ValueError):
        ch.put("d", 6)


@pytest.mark.parametrize("cap", [1, 3, 64])
def test_pipelined_backpressure(cap):
    db = TransactionDatabase.from_transactions([(i % 7, 7 + i % 5) for i in range(300)])
    backend = Backend("pipelined", workers=3, channel_capacity=cap)
    out, rep = run_stage(word_count, sum_values, partition(db, 5), backend)
    assert rep.channel_high_water <= cap
    expected, _ = run_stage(word_count, sum_values, partition(db, 1), Backend("sequential"))
    assert out == expected


def test_iterate_done_immediately():
    result, reports = iterate(lambda i, prior: DONE, Backend("inmemory"), initial="x")
    assert result == "x" and reports == []


@pytest.mark.parametrize("kind", ALL_BACKENDS)
def test_iterate_three_rounds(kind):
    db = TransactionDatabase.from_transactions(DB1)
    parts = partition(db, 2)

    def body(i, prior):
        if i == 3:
            return Done(sum(v for _, v in prior))
        return Stage(f"round-{i}", word_count, sum_values), parts

    total, reports = iterate(body, Backend(kind, workers=2))
    assert total == 9
    assert len(reports) == 3


def test_iteration_cap():
    parts = partition(TransactionDatabase.from_transactions(DB1), 1)
    with pytest.raises(IterationLimitError):
        iterate(lambda i, p: (Stage("s", word_count, sum_values), parts), Backend("sequential"),
                max_iterations=4)


def test_pipelined_state_persists_across_stages():
    parts = partition(TransactionDatabase.from_transactions(DB1), 2)
    seen = []

    def body(i, prior):
        if i == 2:
            return DONE

        def map_fn(part):
            seen.append(part.state.get("visits", 0))
            part.state["visits"] = part.state.get("visits", 0) + 1
            return [(0, 1)]
        return Stage("s", map_fn, sum_values), parts

    iterate(body, Backend("pipelined", workers=2))
    assert sorted(seen) == [0, 0, 1, 1]
    seen.clear()
    iterate(body, Backend("inmemory", workers=2))
    assert sorted(seen) == [0, 0, 0, 0]


def test_inmemory_materializes_once():
    parts = partition(TransactionDatabase.from_transactions(DB1), 2)
    with open_session(Backend("inmemory", workers=2)) as s:
        s.run(Stage("a", word_count, sum_values), parts)
        first = parts.materialized()
        s.run(Stage("b", word_count, sum_values), parts)
        assert parts.materialized() is first


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.lists(st.lists(st.integers(0, 30), min_size=1, max_size=6), min_size=1, max_size=40),
       st.integers(1, 6), st.integers(1, 4), st.integers(1, 9))
def test_backend_transparency(rows, p, workers, mod):
    db = TransactionDatabase.from_transactions(rows, num_items=31)
    parts = partition(db, p)

    def map_fn(part):
        return [((i % mod, len(t)), i) for t in part.transactions for i in t]

    results = []
    for kind in ALL_BACKENDS:
        out, _ = run_stage(map_fn, sum_values, parts, Backend(kind, workers=workers, channel_capacity=7))
        results.append(as_map(out))
    assert all(r == results[0] for r in results)
