"""In-process map/shuffle/reduce over partitioned transaction data.

Four execution contracts share one semantics (group mapped pairs by key,
reduce each group) and differ only in how data moves:

``sequential``
    One worker, a plain loop, no shuffle structures.
``batch``
    Hadoop-like. Input partitions are spilled to disk once and re-read by
    every stage; mapped pairs are hash-partitioned into one spill file per
    reducer bucket, fsync'd, and read back before any reduce starts.
``inmemory``
    Spark-like. Partitions are materialized in memory once and reused by
    later stages on the same ``PartitionSet``; each stage schedules fresh,
    stateless tasks on a new pool, buffers mapped pairs per worker and merges
    them with a sort-based group-by behind a map/reduce barrier.
``pipelined``
    Flink-like. A session keeps long-lived mapper and reducer pools plus
    per-partition operator state (``Partition.state``) across stages; mapped
    pairs stream through bounded channels to key-hashed reducers that
    aggregate incrementally, so reducing overlaps mapping.

Map functions receive a :class:`Partition` and return a :class:`KVBatch`
(integer row keys, integer values), a list of ``(key, value)`` pairs, or an
iterator yielding either; iterators let the pipelined backend forward output
while the mapper is still running.
"""

from __future__ import annotations

import hashlib
import logging
import os
import pickle
import shutil
import struct
import tempfile
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .datasets import ConfigurationError, TransactionDatabase

log = logging.getLogger(__name__)

SHUFFLE_SEED = 0x5EED_F1A7
DEFAULT_ITERATION_CAP = 64


class BackendKind(str, Enum):
    SEQUENTIAL = "sequential"
    BATCH = "batch"
    INMEMORY = "inmemory"
    PIPELINED = "pipelined"


def default_workers():
    if hasattr(os, "sched_getaffinity"):
        return max(1, len(os.sched_getaffinity(0)))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class Backend:
    kind: BackendKind = BackendKind.SEQUENTIAL
    workers: int = field(default_factory=default_workers)
    spill_dir: str | None = None
    channel_capacity: int = 1 << 16

    def __post_init__(self):
        object.__setattr__(self, "kind", BackendKind(self.kind))
        if self.kind is BackendKind.SEQUENTIAL:
            object.__setattr__(self, "workers", 1)
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if self.channel_capacity < 1:
            raise ConfigurationError("channel_capacity must be >= 1")

    @property
    def label(self):
        return self.kind.value


# --------------------------------------------------------------------------
# data model

@dataclass
class Partition:
    index: int
    transactions: TransactionDatabase
    state: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.transactions)


class PartitionSet(Sequence):
    """Ordered, disjoint, contiguous partitions of one database."""

    def __init__(self, parts: Iterable[Partition], source: TransactionDatabase | None = None):
        self._parts = tuple(parts)
        self.source = source
        self._materialized = None
        self._lock = threading.Lock()

    def __getitem__(self, i):
        return self._parts[i]

    def __len__(self):
        return len(self._parts)

    def sizes(self):
        return [len(p) for p in self._parts]

    def materialized(self):
        """Partition copies with owned, compact arrays, built once per set."""
        with self._lock:
            if self._materialized is None:
                self._materialized = [
                    TransactionDatabase(p.transactions.indptr.copy(), p.transactions.items.copy(),
                                        p.transactions.dictionary, p.transactions.name)
                    for p in self._parts
                ]
            return self._materialized


def partition(db: TransactionDatabase, p: int) -> PartitionSet:
    """Split into ``min(p, len(db))`` contiguous ranges whose sizes differ by at most 1."""
    if p < 1:
        raise ConfigurationError("partition count must be >= 1")
    n = len(db)
    p = min(p, n)
    parts = []
    if p:
        base, extra = divmod(n, p)
        start = 0
        for i in range(p):
            stop = start + base + (1 if i < extra else 0)
            parts.append(Partition(i, db.slice(start, stop)))
            start = stop
    return PartitionSet(parts, db)


class KVBatch:
    """Columnar pairs: integer row keys ``(n, w)`` and int64 values ``(n,)``."""

    __slots__ = ("keys", "values")

    def __init__(self, keys, values):
        keys = np.asarray(keys, dtype=np.int64)
        if keys.ndim == 1:
            keys = keys.reshape(-1, 1)
        self.keys = np.ascontiguousarray(keys)
        self.values = np.ascontiguousarray(values, dtype=np.int64)
        if self.keys.shape[0] != self.values.shape[0]:
            raise ValueError("keys and values differ in length")

    @property
    def width(self):
        return self.keys.shape[1]

    def __len__(self):
        return self.values.shape[0]

    def __iter__(self):
        return zip(map(tuple, self.keys.tolist()), self.values.tolist())

    def to_dict(self):
        return dict(iter(self))

    def take(self, idx):
        return KVBatch(self.keys[idx], self.values[idx])

    @classmethod
    def empty(cls, width):
        return cls(np.empty((0, width), dtype=np.int64), np.empty(0, dtype=np.int64))

    @classmethod
    def concat(cls, batches, width=None):
        batches = [b for b in batches if len(b)]
        if not batches:
            return cls.empty(width or 1)
        return cls(np.concatenate([b.keys for b in batches]),
                   np.concatenate([b.values for b in batches]))


def vectorized(ufunc):
    """Mark a reducer as an elementwise ``ufunc`` fold (associative, commutative)."""
    def deco(fn):
        fn.ufunc = ufunc
        fn.associative = True
        return fn
    return deco


@vectorized(np.add)
def sum_values(key, values):
    return key, sum(values)


@dataclass(frozen=True)
class Stage:
    """One map/reduce step.

    ``associative`` declares that ``reduce_fn`` may fold partial groups;
    the pipelined backend requires it. ``finalize_fn(key, value)`` runs on
    the reducer after a key's group is complete.
    """

    name: str
    map_fn: Callable[[Partition], Any]
    reduce_fn: Callable[[Any, list], tuple]
    associative: bool | None = None
    finalize_fn: Callable[[Any, Any], Any] | None = None

    @property
    def is_associative(self):
        if self.associative is not None:
            return self.associative
        return bool(getattr(self.reduce_fn, "associative", False))


@dataclass
class StageReport:
    stage_name: str
    backend: str
    map_time: float = 0.0
    shuffle_time: float = 0.0
    reduce_time: float = 0.0
    wall_time: float = 0.0
    bytes_materialized: int = 0
    pairs: int = 0
    channel_high_water: int = 0


class Done:
    """Loop-body return value ending :func:`iterate`; ``result`` replaces the prior if given."""

    def __init__(self, result=None):
        self.result = result


DONE = Done()


class IterationLimitError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# key encoding and routing

_U64 = struct.Struct(">Q")
_SIGN = 1 << 63


def _enc_int(x):
    return _U64.pack((x + _SIGN) & 0xFFFFFFFFFFFFFFFF)


def encode_key(key) -> bytes:
    """Byte-comparable encoding (order-preserving within a key type)."""
    if isinstance(key, (int, np.integer)) and not isinstance(key, bool):
        return b"I" + _enc_int(int(key))
    if isinstance(key, tuple) and all(isinstance(x, (int, np.integer)) for x in key):
        return b"T" + b"".join(_enc_int(int(x)) for x in key)
    if isinstance(key, str):
        return b"S" + key.encode("utf-8")
    if isinstance(key, bytes):
        return b"B" + key
    return b"P" + pickle.dumps(key, protocol=pickle.HIGHEST_PROTOCOL)


def decode_key(data: bytes):
    tag, body = data[:1], data[1:]
    if tag == b"I":
        return _U64.unpack(body)[0] - _SIGN
    if tag == b"T":
        return tuple(_U64.unpack_from(body, 8 * i)[0] - _SIGN for i in range(len(body) // 8))
    if tag == b"S":
        return body.decode("utf-8")
    if tag == b"B":
        return bytes(body)
    if tag == b"P":
        return pickle.loads(body)
    raise ValueError(f"bad key tag {tag!r}")


def bucket_of(key, n_buckets, seed=SHUFFLE_SEED):
    """Deterministic seeded 64-bit hash routing of one pair key."""
    h = hashlib.blake2b(encode_key(key), digest_size=8, key=seed.to_bytes(8, "little"))
    return int.from_bytes(h.digest(), "little") % n_buckets


def buckets_of_rows(keys, n_buckets, seed=SHUFFLE_SEED):
    return (kernels.hash_rows(keys, seed) % np.uint64(n_buckets)).astype(np.int64)


def _sort_key(key):
    return encode_key(key)


def _sorted_pairs(pairs):
    try:
        return sorted(pairs, key=lambda kv: kv[0])
    except TypeError:
        return sorted(pairs, key=lambda kv: _sort_key(kv[0]))


# --------------------------------------------------------------------------
# shared reduce helpers

def _iter_pieces(out):
    """Normalize a map result into KVBatch / pair-list pieces, lazily."""
    if out is None:
        return
    if isinstance(out, KVBatch):
        yield out
        return
    if isinstance(out, list) and not (out and isinstance(out[0], (KVBatch, list))):
        yield out
        return
    for piece in out:
        yield piece if isinstance(piece, (KVBatch, list)) else [piece]


def _pieces(out):
    return list(_iter_pieces(out))


def _plane(pieces):
    kinds = {isinstance(p, KVBatch) for p in pieces if len(p)}
    if len(kinds) > 1:
        raise TypeError("a stage must emit either KVBatch pieces or (key, value) pairs, not both")
    return "batch" if kinds == {True} else "pairs"


def _reduce_batch(stage, keys, values, presorted=False):
    """Group by row key and fold; returns a key-sorted KVBatch."""
    ufunc = getattr(stage.reduce_fn, "ufunc", None)
    if keys.shape[0] == 0:
        return KVBatch(keys, values)
    if not presorted:
        order = kernels.lexsort_rows(keys)
        keys, values = keys[order], values[order]
    change = np.ones(keys.shape[0], dtype=bool)
    change[1:] = np.any(keys[1:] != keys[:-1], axis=1)
    starts = np.flatnonzero(change)
    if ufunc is not None:
        return KVBatch(keys[starts], ufunc.reduceat(values, starts))
    ends = np.append(starts[1:], len(values))
    out_vals = np.empty(len(starts), dtype=np.int64)
    for g, (s, e) in enumerate(zip(starts.tolist(), ends.tolist())):
        out_vals[g] = stage.reduce_fn(tuple(keys[s].tolist()), values[s:e].tolist())[1]
    return KVBatch(keys[starts], out_vals)


def _group_pairs(pieces):
    groups: dict = {}
    for piece in pieces:
        for k, v in piece:
            groups.setdefault(k, []).append(v)
    return groups


def _reduce_groups(stage, groups):
    out = []
    for k, vs in groups.items():
        rk, rv = stage.reduce_fn(k, vs)
        if stage.finalize_fn is not None:
            rv = stage.finalize_fn(rk, rv)
        out.append((rk, rv))
    return out


def _finish(plane, batches, pairs, width):
    if plane == "batch":
        merged = KVBatch.concat(batches, width)
        order = kernels.lexsort_rows(merged.keys)
        return merged.take(order)
    return _sorted_pairs(pairs)


# --------------------------------------------------------------------------
# sessions

class Session:
    """Execution context for one or more stages on one backend."""

    def __init__(self, backend: Backend):
        self.backend = backend

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close(failed=exc_type is not None)
        return False

    def close(self, failed=False):
        pass

    def run(self, stage: Stage, partitions: PartitionSet):
        t0 = time.perf_counter()
        out, report = self._run(stage, partitions)
        report.wall_time = time.perf_counter() - t0
        return out, report

    def _run(self, stage, partitions):
        raise NotImplementedError


class SequentialSession(Session):
    def _run(self, stage, partitions):
        rep = StageReport(stage.name, self.backend.label)
        t = time.perf_counter()
        pieces = []
        for part in partitions:
            pieces.extend(_pieces(stage.map_fn(Partition(part.index, part.transactions))))
        rep.map_time = time.perf_counter() - t
        rep.pairs = sum(len(p) for p in pieces)
        t = time.perf_counter()
        out = _reduce_all(stage, pieces)
        rep.reduce_time = time.perf_counter() - t
        return out, rep


def _reduce_all(stage, pieces):
    plane = _plane(pieces)
    if plane == "batch":
        width = next(p.width for p in pieces if len(p))
        merged = KVBatch.concat(pieces, width)
        out = _reduce_batch(stage, merged.keys, merged.values)
        if stage.finalize_fn is not None:
            return _sorted_pairs(_apply_finalize(stage, out))
        return out
    return _sorted_pairs(_reduce_groups(stage, _group_pairs(pieces)))


def _apply_finalize(stage, batch):
    return [(k, stage.finalize_fn(k, v)) for k, v in batch]


class InMemorySession(Session):
    def _run(self, stage, partitions):
        rep = StageReport(stage.name, self.backend.label)
        cached = partitions.materialized()
        workers = self.backend.workers
        # a fresh pool per stage: tasks are scheduled per job and hold no state
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="inmem") as pool:
            t = time.perf_counter()
            futures = [pool.submit(lambda i=i: _pieces(stage.map_fn(Partition(i, cached[i]))))
                       for i in range(len(cached))]
            buffers = [[] for _ in range(workers)]
            for i, f in enumerate(futures):
                buffers[i % workers].extend(f.result())
            rep.map_time = time.perf_counter() - t

            t = time.perf_counter()
            pieces = [p for buf in buffers for p in buf]
            rep.pairs = sum(len(p) for p in pieces)
            plane = _plane(pieces)
            if plane == "batch":
                width = next((p.width for p in pieces if len(p)), 1)
                merged = KVBatch.concat(pieces, width)
                order = kernels.lexsort_rows(merged.keys)
                keys, vals = merged.keys[order], merged.values[order]
                rep.shuffle_time = time.perf_counter() - t
                t = time.perf_counter()
                out = _reduce_sorted_batch(stage, keys, vals)
            else:
                groups = _group_pairs(pieces)
                rep.shuffle_time = time.perf_counter() - t
                t = time.perf_counter()
                keys = list(groups)
                chunks = [keys[r::workers] for r in range(workers)]
                parts = pool.map(lambda ks: _reduce_groups(stage, {k: groups[k] for k in ks}), chunks)
                out = _sorted_pairs([kv for part in parts for kv in part])
            rep.reduce_time = time.perf_counter() - t
        return out, rep


def _reduce_sorted_batch(stage, keys, values):
    out = _reduce_batch(stage, keys, values, presorted=True)
    if stage.finalize_fn is not None:
        return _sorted_pairs(_apply_finalize(stage, out))
    return out


# -- batch (disk barrier) --------------------------------------------------

_CHUNK = struct.Struct("<cIQ")   # plane tag, key width, record count
_VAL = struct.Struct("<BQ")      # tag 0: int64 value bits
_PAYLOAD = struct.Struct("<BI")  # tag 1: length-prefixed pickled value
_KLEN = struct.Struct("<I")


def _batch_dtype(width):
    return np.dtype([("klen", "<u4"), ("key", ">i8", (width,)), ("tag", "u1"), ("val", "<i8")])


def encode_batch(batch: KVBatch) -> bytes:
    """Spill records: u32 key length, big-endian key words, tag byte, little-endian int64."""
    dt = _batch_dtype(batch.width)
    rec = np.empty(len(batch), dtype=dt)
    rec["klen"] = 8 * batch.width
    rec["key"] = batch.keys
    rec["tag"] = 0
    rec["val"] = batch.values
    return _CHUNK.pack(b"K", batch.width, len(batch)) + rec.tobytes()


def encode_pairs(pairs) -> bytes:
    parts = [_CHUNK.pack(b"P", 0, len(pairs))]
    for k, v in pairs:
        kb = encode_key(k)
        parts.append(_KLEN.pack(len(kb)))
        parts.append(kb)
        if isinstance(v, (int, np.integer)) and not isinstance(v, bool) and -_SIGN <= int(v) < _SIGN:
            parts.append(_VAL.pack(0, int(v) & 0xFFFFFFFFFFFFFFFF))
        else:
            vb = pickle.dumps(v, protocol=pickle.HIGHEST_PROTOCOL)
            parts.append(_PAYLOAD.pack(1, len(vb)))
            parts.append(vb)
    return b"".join(parts)


def decode_spill(data: bytes):
    """Inverse of :func:`encode_batch` / :func:`encode_pairs` over concatenated chunks."""
    pieces = []
    pos = 0
    mv = memoryview(data)
    while pos < len(data):
        tag, width, n = _CHUNK.unpack_from(data, pos)
        pos += _CHUNK.size
        if tag == b"K":
            dt = _batch_dtype(width)
            rec = np.frombuffer(mv[pos:pos + n * dt.itemsize], dtype=dt)
            pos += n * dt.itemsize
            pieces.append(KVBatch(rec["key"].astype(np.int64).reshape(n, width),
                                  rec["val"].astype(np.int64)))
            continue
        pairs = []
        for _ in range(n):
            (klen,) = _KLEN.unpack_from(data, pos)
            pos += _KLEN.size
            key = decode_key(bytes(mv[pos:pos + klen]))
            pos += klen
            vtag = data[pos]
            if vtag == 0:
                _, raw = _VAL.unpack_from(data, pos)
                pos += _VAL.size
                val = raw - (1 << 64) if raw >= _SIGN else raw
            else:
                _, vlen = _PAYLOAD.unpack_from(data, pos)
                pos += _PAYLOAD.size
                val = pickle.loads(mv[pos:pos + vlen])
                pos += vlen
            pairs.append((key, val))
        pieces.append(pairs)
    return pieces


def _fsync_write(path, data, mode="wb"):
    with open(path, mode) as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())


class BatchSession(Session):
    def __init__(self, backend):
        super().__init__(backend)
        base = backend.spill_dir
        try:
            if base is not None:
                os.makedirs(base, exist_ok=True)
            self.root = tempfile.mkdtemp(prefix="fim-spill-", dir=base)
        except OSError as e:
            raise OSError(f"spill directory {base!r} is not writable: {e}") from e
        self._inputs: dict[int, tuple] = {}
        self._stage_no = 0

    def close(self, failed=False):
        if failed:
            log.warning("batch backend failed; spill files kept in %s", self.root)
        else:
            shutil.rmtree(self.root, ignore_errors=True)

    def _input_paths(self, partitions):
        key = id(partitions)
        entry = self._inputs.get(key)
        if entry is None or entry[0] is not partitions:
            paths = []
            for part in partitions:
                base = os.path.join(self.root, f"input-{len(self._inputs)}-{part.index}")
                db = part.transactions
                for suffix, arr in (("indptr", db.indptr), ("items", db.items)):
                    _fsync_write(f"{base}.{suffix}.npy", _npy_bytes(arr))
                paths.append(base)
            entry = (partitions, paths)
            self._inputs[key] = entry
        return entry[1]

    @staticmethod
    def _load_partition(index, base, dictionary):
        indptr = np.load(f"{base}.indptr.npy")
        items = np.load(f"{base}.items.npy")
        return Partition(index, TransactionDatabase(indptr, items, dictionary))

    def _run(self, stage, partitions):
        rep = StageReport(stage.name, self.backend.label)
        self._stage_no += 1
        inputs = self._input_paths(partitions)
        workers = self.backend.workers
        n_buckets = workers
        stage_dir = os.path.join(self.root, f"stage-{self._stage_no}")
        os.makedirs(stage_dir)
        bucket_paths = [os.path.join(stage_dir, f"bucket-{r}.spill") for r in range(n_buckets)]
        locks = [threading.Lock() for _ in range(n_buckets)]
        written = [0]
        count_lock = threading.Lock()
        planes = set()

        def map_task(i):
            part = self._load_partition(i, inputs[i], partitions[i].transactions.dictionary)
            pieces = _pieces(stage.map_fn(part))
            by_bucket = [[] for _ in range(n_buckets)]
            n_pairs = 0
            for piece in pieces:
                if not len(piece):
                    continue
                n_pairs += len(piece)
                if isinstance(piece, KVBatch):
                    planes.add("batch")
                    b = buckets_of_rows(piece.keys, n_buckets)
                    for r in range(n_buckets):
                        sel = np.flatnonzero(b == r)
                        if sel.size:
                            by_bucket[r].append(encode_batch(piece.take(sel)))
                else:
                    planes.add("pairs")
                    split = [[] for _ in range(n_buckets)]
                    for k, v in piece:
                        split[bucket_of(k, n_buckets)].append((k, v))
                    for r in range(n_buckets):
                        if split[r]:
                            by_bucket[r].append(encode_pairs(split[r]))
            size = 0
            for r, chunks in enumerate(by_bucket):
                if chunks:
                    data = b"".join(chunks)
                    with locks[r]:
                        with open(bucket_paths[r], "ab") as fh:
                            fh.write(data)
                    size += len(data)
            with count_lock:
                written[0] += size
            return n_pairs

        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="batch-map") as pool:
            t = time.perf_counter()
            rep.pairs = sum(pool.map(map_task, range(len(partitions))))
            rep.map_time = time.perf_counter() - t
            if len(planes) > 1:
                raise TypeError("a stage must emit either KVBatch pieces or (key, value) pairs, not both")

            # barrier: every bucket durable before any reducer reads
            t = time.perf_counter()
            for path in bucket_paths:
                if os.path.exists(path):
                    with open(path, "rb+") as fh:
                        os.fsync(fh.fileno())
            rep.bytes_materialized = written[0]

            def read_bucket(path):
                if not os.path.exists(path):
                    return []
                with open(path, "rb") as fh:
                    return decode_spill(fh.read())

            bucket_pieces = list(pool.map(read_bucket, bucket_paths))
            rep.shuffle_time = time.perf_counter() - t

            t = time.perf_counter()
            results = list(pool.map(lambda ps: _reduce_all(stage, ps), bucket_pieces))
            plane = "batch" if planes == {"batch"} else "pairs"
            if plane == "batch" and stage.finalize_fn is None:
                width = next((b.width for b in results if len(b)), 1)
                out = _finish("batch", results, None, width)
            else:
                out = _sorted_pairs([kv for part in results for kv in part])
            rep.reduce_time = time.perf_counter() - t
        shutil.rmtree(stage_dir, ignore_errors=True)
        return out, rep


def _npy_bytes(arr):
    import io
    buf = io.BytesIO()
    np.save(buf, arr)
    return buf.getvalue()


# -- pipelined -------------------------------------------------------------

class BoundedChannel:
    """FIFO of pair chunks holding at most ``capacity`` pairs at any instant."""

    def __init__(self, capacity):
        self.capacity = capacity
        self._items = deque()
        self._held = 0
        self.high_water = 0
        self._cond = threading.Condition()

    def put(self, item, n):
        if n > self.capacity:
            raise ValueError("chunk larger than channel capacity")
        with self._cond:
            while self._held + n > self.capacity:
                self._cond.wait()
            self._items.append((item, n))
            self._held += n
            self.high_water = max(self.high_water, self._held)
            self._cond.notify_all()

    def get(self):
        with self._cond:
            while not self._items:
                self._cond.wait()
            item, n = self._items.popleft()
            self._held -= n
            self._cond.notify_all()
            return item


_END = object()


class PipelinedSession(Session):
    def __init__(self, backend):
        super().__init__(backend)
        self.n_reducers = backend.workers
        self._mappers = ThreadPoolExecutor(max_workers=backend.workers, thread_name_prefix="pipe-map")
        self._reducers = ThreadPoolExecutor(max_workers=self.n_reducers, thread_name_prefix="pipe-red")
        # long-lived operator state per partition, keyed by (set id, index)
        self._state: dict = {}
        self._sets: dict = {}

    def close(self, failed=False):
        self._mappers.shutdown(wait=True)
        self._reducers.shutdown(wait=True)

    def _bind(self, partitions):
        """Partition views carrying this session's persistent operator state."""
        sid = id(partitions)
        if self._sets.get(sid) is not partitions:
            self._sets[sid] = partitions
            for key in [k for k in self._state if k[0] == sid]:
                del self._state[key]
        return [Partition(p.index, p.transactions, self._state.setdefault((sid, i), {}))
                for i, p in enumerate(partitions)]

    def _run(self, stage, partitions):
        if not stage.is_associative:
            raise ConfigurationError(
                f"stage {stage.name!r}: the pipelined backend needs an associative reducer")
        rep = StageReport(stage.name, self.backend.label)
        cap = self.backend.channel_capacity
        R = self.n_reducers
        channels = [BoundedChannel(cap) for _ in range(R)]
        n_mappers = len(partitions)
        bound = self._bind(partitions)
        planes = set()

        def send(r, piece):
            n = len(piece)
            if isinstance(piece, KVBatch):
                for s in range(0, n, cap):
                    sub = piece.take(slice(s, s + cap)) if n > cap else piece
                    channels[r].put(sub, len(sub))
            else:
                for s in range(0, n, cap):
                    sub = piece[s:s + cap]
                    channels[r].put(sub, len(sub))

        def map_task(i):
            part = bound[i]
            n_pairs = 0
            for piece in _iter_pieces(stage.map_fn(part)):
                if not len(piece):
                    continue
                n_pairs += len(piece)
                if isinstance(piece, KVBatch):
                    planes.add("batch")
                    if R == 1:
                        send(0, piece)
                        continue
                    order, bounds = kernels.route_rows(piece.keys, R, SHUFFLE_SEED)
                    routed = piece.take(order)
                    for r in range(R):
                        if bounds[r + 1] > bounds[r]:
                            send(r, routed.take(slice(bounds[r], bounds[r + 1])))
                else:
                    planes.add("pairs")
                    split = [[] for _ in range(R)]
                    for k, v in piece:
                        split[bucket_of(k, R) if R > 1 else 0].append((k, v))
                    for r in range(R):
                        if split[r]:
                            send(r, split[r])
            return n_pairs

        def reduce_task(r):
            acc_rows = None
            acc_pairs = {}
            ended = 0
            failure = None
            ufunc = getattr(stage.reduce_fn, "ufunc", None)
            while ended < n_mappers:
                piece = channels[r].get()
                if piece is _END:
                    ended += 1
                    continue
                if failure is not None:
                    continue  # keep draining so mappers never block on a dead reducer
                try:
                    acc_rows = fold(piece, acc_rows, acc_pairs, ufunc)
                except BaseException as e:  # noqa: BLE001 - re-raised below
                    failure = e
            if failure is not None:
                raise failure
            return finish_reduce(acc_rows, acc_pairs)

        def fold(piece, acc_rows, acc_pairs, ufunc):
            if isinstance(piece, KVBatch):
                if acc_rows is None:
                    acc_rows = kernels.RowAccumulator(piece.width) if ufunc is np.add else []
                if ufunc is np.add:
                    acc_rows.add(piece.keys, piece.values)
                else:
                    acc_rows.append(piece)
                return acc_rows
            for k, v in piece:
                if k in acc_pairs:
                    acc_pairs[k] = stage.reduce_fn(k, [acc_pairs[k], v])[1]
                else:
                    acc_pairs[k] = v
            return acc_rows

        def finish_reduce(acc_rows, acc_pairs):
            if acc_rows is not None:
                if isinstance(acc_rows, list):
                    merged = KVBatch.concat(acc_rows)
                    batch = _reduce_batch(stage, merged.keys, merged.values)
                else:
                    batch = KVBatch(*acc_rows.result())
                if stage.finalize_fn is not None:
                    return _apply_finalize(stage, batch)
                return batch
            if stage.finalize_fn is not None:
                return [(k, stage.finalize_fn(k, v)) for k, v in acc_pairs.items()]
            return list(acc_pairs.items())

        t0 = time.perf_counter()
        red_futs = [self._reducers.submit(reduce_task, r) for r in range(R)]

        def map_and_signal(i):
            try:
                return map_task(i)
            finally:
                for ch in channels:
                    ch.put(_END, 0)

        map_futs = [self._mappers.submit(map_and_signal, i) for i in range(n_mappers)]
        rep.pairs = sum(f.result() for f in map_futs)
        t1 = time.perf_counter()
        rep.map_time = t1 - t0
        results = [f.result() for f in red_futs]
        if len(planes) > 1:
            raise TypeError("a stage must emit either KVBatch pieces or (key, value) pairs, not both")
        if planes == {"batch"} and stage.finalize_fn is None:
            width = next((b.width for b in results if isinstance(b, KVBatch) and len(b)), 1)
            out = _finish("batch", [b for b in results if isinstance(b, KVBatch)], None, width)
        else:
            out = _sorted_pairs([kv for part in results for kv in part])
        rep.reduce_time = time.perf_counter() - t1
        rep.channel_high_water = max(ch.high_water for ch in channels)
        return out, rep


_SESSIONS = {
    BackendKind.SEQUENTIAL: SequentialSession,
    BackendKind.BATCH: BatchSession,
    BackendKind.INMEMORY: InMemorySession,
    BackendKind.PIPELINED: PipelinedSession,
}


def open_session(backend: Backend) -> Session:
    return _SESSIONS[backend.kind](backend)


# --------------------------------------------------------------------------
# public operations

def run_stage(map_fn, reduce_fn, partitions: PartitionSet, backend: Backend, *,
              associative=None, finalize_fn=None, name="stage"):
    """Run one map/reduce stage; output is sorted by key.

    Returns ``(output, StageReport)``. Output is a :class:`KVBatch` when the
    mappers emitted row batches, otherwise a list of ``(key, value)`` pairs.
    """
    stage = map_fn if isinstance(map_fn, Stage) else Stage(name, map_fn, reduce_fn, associative, finalize_fn)
    if len(partitions) == 0:
        return [], StageReport(stage.name, backend.label)
    with open_session(backend) as session:
        return session.run(stage, partitions)


def iterate(loop_body, backend: Backend, initial=None, max_iterations=DEFAULT_ITERATION_CAP):
    """Drive stages until ``loop_body(i, prior)`` returns :class:`Done`.

    ``loop_body`` returns ``(Stage, PartitionSet)`` to run another stage; its
    output becomes ``prior`` for the next call. All stages share one session,
    so backend state (cached partitions, worker pools, operator state, spilled
    input) persists across iterations.
    """
    reports = []
    prior = initial
    with open_session(backend) as session:
        i = 0
        while True:
            step = loop_body(i, prior)
            if isinstance(step, Done):
                return (prior if step.result is None else step.result), reports
            if i >= max_iterations:
                raise IterationLimitError(f"iteration cap {max_iterations} exceeded")
            stage, parts = step
            if len(parts) == 0:
                prior, rep = [], StageReport(stage.name, backend.label)
            else:
                prior, rep = session.run(stage, parts)
            reports.append(rep)
            i += 1
