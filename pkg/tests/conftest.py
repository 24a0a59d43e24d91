import numpy as np
import pytest

from fimengine.datasets import TransactionDatabase
from fimengine.mapreduce import BackendKind

DB1 = [(0, 1), (1, 2), (0, 2), (0, 1, 2)]
DB1_RESULT = {(0,): 3, (1,): 3, (2,): 3, (0, 1): 2, (0, 2): 2, (1, 2): 2}
ALL_BACKENDS = [k.value for k in BackendKind]


@pytest.fixture
def db1():
    return TransactionDatabase.from_transactions(DB1, name="db1")


def random_db(rng, max_items=12, max_txns=60, name="rand"):
    n_items = int(rng.integers(1, max_items + 1))
    n_txns = int(rng.integers(0, max_txns + 1))
    density = rng.uniform(0.1, 0.7)
    rows = []
    for _ in range(n_txns):
        row = np.flatnonzero(rng.random(n_items) < density)
        if row.size == 0:
            row = rng.integers(0, n_items, 1)
        rows.append(tuple(row.tolist()))
    return TransactionDatabase.from_transactions(rows, num_items=n_items, name=name)


def check_downward_closure(frequent):
    for itemset, sup in frequent.items():
        if len(itemset) < 2:
            continue
        for drop in range(len(itemset)):
            sub = itemset[:drop] + itemset[drop + 1:]
            assert sub in frequent, (itemset, sub)
            assert frequent[sub] >= sup, (itemset, sub)


ACCEPTANCE_LINES = []


def report(criterion, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
