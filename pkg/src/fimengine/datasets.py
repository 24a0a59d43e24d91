"""Transaction databases: SPMF I/O, synthetic T10I4-style generation, minsup."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class ConfigurationError(ValueError):
    """Invalid parameters (minsup ratio, generator params, partition count...)."""


class ParseError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class ItemDictionary:
    """Bijection between external item tokens and dense ids ``0..n-1``."""

    id_to_token: tuple[str, ...] = ()
    token_to_id: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.token_to_id is None:
            object.__setattr__(self, "token_to_id", {t: i for i, t in enumerate(self.id_to_token)})

    def __len__(self):
        return len(self.id_to_token)

    def token(self, item_id):
        return self.id_to_token[item_id]

    @classmethod
    def identity(cls, n):
        return cls(tuple(str(i) for i in range(n)))


class _ScanCounter:
    __slots__ = ("count",)

    def __init__(self):
        self.count = 0


class TransactionDatabase:
    """Immutable ordered multiset of transactions in CSR form.

    ``indptr`` has one more entry than there are transactions; transaction
    ``t`` is ``items[indptr[t]:indptr[t+1]]``, strictly increasing ids.
    Algorithms read the arrays through :meth:`scan`, which counts full passes.
    """

    def __init__(self, indptr, items, dictionary: ItemDictionary, name="db"):
        self._indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self._items = np.ascontiguousarray(items, dtype=np.int32)
        self._indptr.flags.writeable = False
        self._items.flags.writeable = False
        self.dictionary = dictionary
        self.name = name
        self._scans = _ScanCounter()

    @classmethod
    def from_transactions(cls, transactions: Iterable[Iterable[int]], num_items=None, name="db",
                          dictionary=None):
        """Build from iterables of dense ids; rows are deduplicated and sorted, empty rows dropped."""
        rows = [sorted(set(int(i) for i in t)) for t in transactions]
        rows = [r for r in rows if r]
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        np.cumsum([len(r) for r in rows], out=indptr[1:])
        items = np.fromiter((i for r in rows for i in r), dtype=np.int32, count=int(indptr[-1]))
        if items.size and items.min() < 0:
            raise ConfigurationError("item ids must be non-negative")
        if dictionary is None:
            n = num_items if num_items is not None else (int(items.max()) + 1 if items.size else 0)
            dictionary = ItemDictionary.identity(n)
        if items.size and items.max() >= len(dictionary):
            raise ConfigurationError("item id outside dictionary")
        return cls(indptr, items, dictionary, name)

    # -- access -------------------------------------------------------------

    @property
    def indptr(self):
        return self._indptr

    @property
    def items(self):
        return self._items

    @property
    def num_items(self):
        return len(self.dictionary)

    @property
    def scan_count(self):
        return self._scans.count

    def scan(self):
        """Return ``(indptr, items)`` and record one full pass over the data."""
        self._scans.count += 1
        return self._indptr, self._items

    def reset_scan_count(self):
        self._scans.count = 0

    def __len__(self):
        return len(self._indptr) - 1

    def __getitem__(self, t):
        return self._items[self._indptr[t]:self._indptr[t + 1]]

    def __iter__(self):
        for t in range(len(self)):
            yield tuple(self[t].tolist())

    @property
    def transactions(self) -> list[tuple[int, ...]]:
        return list(self)

    def lengths(self):
        return np.diff(self._indptr)

    def slice(self, start, stop, name=None):
        """Contiguous sub-database sharing the item dictionary."""
        lo, hi = self._indptr[start], self._indptr[stop]
        return TransactionDatabase(self._indptr[start:stop + 1] - lo, self._items[lo:hi],
                                   self.dictionary, name or self.name)

    def __repr__(self):
        return f"TransactionDatabase({self.name!r}, {len(self)} transactions, {self.num_items} items)"


# --------------------------------------------------------------------------
# SPMF format

def parse_spmf(text, name="db") -> TransactionDatabase:
    """Parse SPMF transactions: one line per transaction, space-separated item tokens.

    ``text`` may be a string or any iterable of lines. Tokens must be
    non-negative integers; they are remapped to dense ids in order of first
    appearance.
    """
    lines = io.StringIO(text) if isinstance(text, str) else text
    token_to_id: dict[str, int] = {}
    tokens: list[str] = []
    indptr = [0]
    flat: list[int] = []
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts:
            continue
        row = set()
        for tok in parts:
            if not tok.isdigit():
                if tok.startswith("-") and tok[1:].isdigit():
                    raise ParseError(f"negative item {tok!r}", lineno)
                raise ParseError(f"invalid item token {tok!r}", lineno)
            key = str(int(tok))
            i = token_to_id.get(key)
            if i is None:
                i = token_to_id[key] = len(tokens)
                tokens.append(key)
            row.add(i)
        flat.extend(sorted(row))
        indptr.append(len(flat))
    dictionary = ItemDictionary(tuple(tokens), token_to_id)
    return TransactionDatabase(np.array(indptr, dtype=np.int64), np.array(flat, dtype=np.int32),
                               dictionary, name)


def read_spmf(path, name=None) -> TransactionDatabase:
    with open(path, encoding="utf-8") as fh:
        return parse_spmf(fh, name=name or _stem(path))


def write_spmf(db: TransactionDatabase) -> str:
    """Serialize using the original item tokens."""
    tok = db.dictionary.id_to_token
    out = io.StringIO()
    for t in range(len(db)):
        out.write(" ".join(tok[i] for i in db[t].tolist()))
        out.write("\n")
    return out.getvalue()


def _stem(path):
    import os
    return os.path.splitext(os.path.basename(str(path)))[0]


# --------------------------------------------------------------------------
# synthetic data

@dataclass(frozen=True)
class SyntheticParams:
    num_transactions: int = 100_000
    num_items: int = 870
    avg_transaction_len: int = 10
    avg_pattern_len: int = 4
    num_patterns: int = 1000
    seed: int = 0
    correlation: float = 0.5
    corruption: float = 0.5

    def validate(self):
        if self.num_transactions < 0 or self.num_items < 1 or self.num_patterns < 1:
            raise ConfigurationError("counts must be positive")
        if not 1 <= self.avg_pattern_len <= self.avg_transaction_len <= self.num_items:
            raise ConfigurationError("need 1 <= avg_pattern_len <= avg_transaction_len <= num_items")


def generate_synthetic(params: SyntheticParams, name=None) -> TransactionDatabase:
    """IBM Quest style market-basket generator.

    A pool of potentially-frequent patterns is drawn first (sizes Poisson
    around ``avg_pattern_len``, each sharing a fraction of items with its
    predecessor, exponentially distributed weights, per-pattern corruption
    level). Each transaction draws a Poisson length around
    ``avg_transaction_len`` and is filled with weighted pattern picks whose
    items are dropped at the pattern's corruption rate. Items are emitted by
    id so the dictionary is the identity over ``0..num_items-1``.
    """
    params.validate()
    p = params
    rng = np.random.default_rng(p.seed)
    name = name or f"T{p.avg_transaction_len}I{p.avg_pattern_len}N{p.num_items}D{p.num_transactions}"
    dictionary = ItemDictionary.identity(p.num_items)
    if p.num_transactions == 0:
        return TransactionDatabase(np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int32),
                                   dictionary, name)

    item_weights = rng.exponential(1.0, p.num_items)
    item_weights /= item_weights.sum()
    patterns: list[np.ndarray] = []
    prev = np.zeros(0, dtype=np.int64)
    for _ in range(p.num_patterns):
        size = int(np.clip(rng.poisson(p.avg_pattern_len - 1) + 1, 1, p.num_items))
        n_shared = min(len(prev), size, int(round(rng.exponential(p.correlation) * size)))
        shared = rng.choice(prev, n_shared, replace=False) if n_shared else prev[:0]
        pool = set(shared.tolist())
        while len(pool) < size:
            pool.update(rng.choice(p.num_items, size - len(pool), p=item_weights).tolist())
        pat = np.array(sorted(pool), dtype=np.int64)
        patterns.append(pat)
        prev = pat
    weights = rng.exponential(1.0, p.num_patterns)
    weights /= weights.sum()
    corruption = np.clip(rng.normal(p.corruption, 0.1, p.num_patterns), 0.0, 1.0)
    cum_w = np.cumsum(weights)

    lengths = np.maximum(rng.poisson(p.avg_transaction_len - 1, p.num_transactions) + 1, 1)
    rows: list[list[int]] = []
    carry = None
    for target in lengths.tolist():
        txn: set[int] = set()
        attempts = 0
        while len(txn) < target and attempts < 4 * target + 8:
            attempts += 1
            if carry is not None:
                pat = carry
                carry = None
            else:
                k = int(np.searchsorted(cum_w, rng.random() * cum_w[-1], side="right"))
                k = min(k, p.num_patterns - 1)
                pat = patterns[k]
                keep = rng.random(len(pat)) >= corruption[k] * rng.random()
                pat = pat[keep]
            if len(pat) == 0:
                continue
            if len(txn) + len(pat) > target and txn and rng.random() < 0.5:
                # pattern does not fit; defer it to the next transaction
                carry = pat
                break
            txn.update(pat.tolist())
        if not txn:
            txn.add(int(rng.choice(p.num_items, p=item_weights)))
        rows.append(sorted(txn))
    return TransactionDatabase.from_transactions(rows, name=name, dictionary=dictionary)


def absolute_minsup(ratio, db_size) -> int:
    """``ceil(ratio * db_size)`` with a floor of 1; ratio must lie in (0, 1]."""
    if not (0.0 < ratio <= 1.0) or isinstance(ratio, bool):
        raise ConfigurationError(f"minsup ratio must be in (0, 1], got {ratio!r}")
    if db_size < 1:
        raise ConfigurationError("database must contain at least one transaction")
    # guard against 0.003 * 100000 == 300.00000000000006
    return max(1, math.ceil(round(ratio * db_size, 9)))


def summarize(db: TransactionDatabase) -> dict:
    lengths = db.lengths()
    used = np.unique(db.items).size
    if len(db) == 0:
        return {"transactions": 0, "items": used}
    return {
        "transactions": len(db),
        "items": used,
        "len_min": int(lengths.min()),
        "len_mean": float(lengths.mean()),
        "len_max": int(lengths.max()),
    }
